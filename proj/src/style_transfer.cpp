#include "fairpairs/style_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fairpairs {

namespace {
constexpr double kAttentionTolerance = 1e-12;
}

void StyleTransferConfig::validate() const {
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
        throw PreconditionError(fmt::format("mask threshold {} outside (0, 1)", mask_threshold));
    if (beam_width < 1) throw PreconditionError("beam width must be at least 1");
}

MaskTemplate make_training_template(std::string_view s, const GroupClassifier &gc, std::string mask_token) {
    const auto &tok = gc.backend->tokenizer();
    const auto tokens = tok.tokenize(s);
    if (tokens.empty()) throw PreconditionError("cannot build a template from an empty sentence");
    PredictOptions opts;
    opts.want_attention = true;
    const auto pred = gc.backend->predict_one(std::string(s), opts);
    const auto &a = *pred.attention;
    if (a.size() != tokens.size()) throw Error("attention length differs from token count");
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    std::vector<bool> masked(tokens.size());
    for (std::size_t k = 0; k < a.size(); ++k) masked[k] = a[k] >= mean - kAttentionTolerance;
    return build_template(std::string(s), tokens, masked, std::move(mask_token));
}

InferenceTemplate make_inference_template(std::string_view s, std::string_view source_group,
                                          const GroupClassifier &gc, const StyleTransferConfig &config) {
    config.validate();
    const auto tokens = gc.backend->tokenizer().tokenize(s);
    if (tokens.empty()) throw PreconditionError("cannot build a template from an empty sentence");
    const auto h = gc.head(source_group);
    const std::size_t max_iter = config.max_mask_iterations.value_or(tokens.size());

    InferenceTemplate out;
    std::vector<bool> masked(tokens.size(), false);
    out.initial_probability = gc.backend->predict_one(std::string(s)).probs.at(h);
    double current = out.initial_probability;

    std::vector<std::string> trial_texts;
    std::vector<std::size_t> trial_pos;
    while (current >= config.mask_threshold && out.steps.size() < max_iter && out.steps.size() < tokens.size()) {
        trial_texts.clear();
        trial_pos.clear();
        for (std::size_t k = 0; k < tokens.size(); ++k) {
            if (masked[k]) continue;
            masked[k] = true;
            trial_texts.push_back(mask_positions(tokens, masked, config.mask_token));
            trial_pos.push_back(k);
            masked[k] = false;
        }
        const auto preds = gc.backend->predict(trial_texts);
        // Masking either copy of a repeated token can differ in the last bit.
        constexpr double kTie = 1e-12;
        std::size_t best = 0;
        for (std::size_t i = 1; i < preds.size(); ++i)
            if (preds[i].probs[h] < preds[best].probs[h] - kTie) best = i;
        masked[trial_pos[best]] = true;
        current = preds[best].probs[h];
        out.steps.push_back({trial_pos[best], current});
    }

    out.tmpl = build_template(std::string(s), tokens, masked, config.mask_token);
    if (out.steps.empty()) {
        out.tmpl.valid = false;
        out.tmpl.warning = fmt::format("p({}) = {:.4f} already below threshold {}", source_group,
                                       out.initial_probability, config.mask_threshold);
    } else if (current >= config.mask_threshold) {
        out.tmpl.valid = false;
        out.tmpl.warning = fmt::format("threshold {} unreachable: p({}) = {:.4f} after {} masks", config.mask_threshold,
                                       source_group, current, out.steps.size());
    }
    return out;
}

Transfer generate_transfer(const MaskTemplate &tmpl, std::string_view source_group, std::string_view target_group,
                           const InfillBackend &generator, const GroupClassifier &gc,
                           const StyleTransferConfig &config) {
    config.validate();
    const auto completions = generator.fill(tmpl, target_group, config.beam_width);
    if (completions.empty()) throw Error("generator returned an empty beam");
    std::vector<std::string> texts;
    for (const auto &c : completions) texts.push_back(c.text);
    const auto h_src = gc.head(source_group);
    const auto h_tgt = gc.head(target_group);
    PredictOptions opts;
    opts.want_logits = config.selection == Selection::logit_diff;
    const auto preds = gc.backend->predict(texts, opts);
    Transfer out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const double score = config.selection == Selection::logit_diff
                                 ? preds[i].logits->at(h_tgt) - preds[i].logits->at(h_src)
                                 : preds[i].probs[h_tgt] - preds[i].probs[h_src];
        out.beam.push_back({texts[i], score});
    }
    auto best = std::max_element(out.beam.begin(), out.beam.end(),
                                 [](const auto &a, const auto &b) { return a.score < b.score; });
    out.text = best->text;
    out.score = best->score;
    return out;
}

TransferOutcome transfer_pair(const std::string &s, std::string_view source_group, std::string_view target_group,
                              const InfillBackend &generator, const GroupClassifier &gc,
                              const StyleTransferConfig &config, json provenance) {
    TransferOutcome out;
    const auto inference = make_inference_template(s, source_group, gc, config);
    json steps = json::array();
    for (const auto &st : inference.steps) steps.push_back({{"position", st.position}, {"p_source", st.probability}});
    provenance["masking"] = {{"template", inference.tmpl.text()},
                             {"initial_p_source", inference.initial_probability},
                             {"steps", steps}};
    if (!inference.tmpl.valid) {
        out.stage = "template";
        out.detail = inference.tmpl.warning;
        return out;
    }
    Transfer transfer;
    try {
        transfer = generate_transfer(inference.tmpl, source_group, target_group, generator, gc, config);
    } catch (const Error &e) {
        out.stage = "generate";
        out.detail = e.what();
        return out;
    }
    if (transfer.text == s) {
        out.stage = "generate";
        out.detail = "generator reproduced the source sentence";
        return out;
    }
    json beam = json::array();
    for (const auto &c : transfer.beam) beam.push_back({{"text", c.text}, {"score", c.score}});
    provenance["selection"] = {{"criterion", config.selection == Selection::logit_diff ? "logit_diff" : "prob_diff"},
                               {"score", transfer.score},
                               {"beam", beam}};
    auto pair = PairCandidate::make(s, transfer.text, std::string(method::style_transfer), std::string(source_group),
                                    std::string(target_group), std::move(provenance));
    const auto p = gc.backend->predict_one(transfer.text);
    const double ps = p.probs.at(gc.head(source_group));
    const double pt = p.probs.at(gc.head(target_group));
    pair.filter_passed = transfer_success(pt, ps, config.filter_threshold, config.filter_orientation);
    pair.provenance["post_filter"] = {{"p_source", ps}, {"p_target", pt}, {"passed", pair.filter_passed}};
    out.stage = pair.filter_passed ? "accepted" : "post_filter";
    if (!pair.filter_passed) out.detail = fmt::format("p_target={:.4f} p_source={:.4f}", pt, ps);
    out.pair = std::move(pair);
    return out;
}

std::vector<std::pair<MaskTemplate, std::string>> infill_training_examples(const CommentStore &store,
                                                                           const GroupClassifier &gc, Rng &rng,
                                                                           std::string mask_token) {
    std::vector<std::pair<MaskTemplate, std::string>> out;
    for (const auto &c : store) {
        if (!c.annotated()) continue;
        std::vector<std::string> groups;
        for (const auto &g : label(c).groups)
            if (gc.has(g)) groups.push_back(g);
        if (groups.empty()) continue;
        const auto &g = groups[std::uniform_int_distribution<std::size_t>(0, groups.size() - 1)(rng)];
        out.emplace_back(make_training_template(c.text, gc, mask_token), g);
    }
    return out;
}

std::vector<PairCandidate> enumerate_st_candidates(const CommentStore &store, const std::set<std::string> &eligible,
                                                   const InfillBackend &generator, const GroupClassifier &gc,
                                                   const StyleTransferConfig &config, StyleTransferStats *stats) {
    StyleTransferStats st;
    std::vector<PairCandidate> out;
    for (const auto &c : store) {
        if (!c.annotated()) continue;
        for (const auto &j : label(c).groups) {
            if (!eligible.count(j) || !gc.has(j)) continue;
            for (const auto &jp : eligible) {
                if (jp == j || !gc.has(jp)) continue;
                ++st.attempted;
                auto outcome = transfer_pair(c.text, j, jp, generator, gc, config,
                                             {{"comment_id", c.id}, {"split", to_string(c.split)}});
                if (outcome.stage == "template") ++st.rejected_template;
                else if (outcome.stage == "generate") ++st.rejected_generate;
                else if (outcome.stage == "post_filter") ++st.rejected_post_filter;
                else ++st.accepted;
                if (outcome.pair) out.push_back(std::move(*outcome.pair));
            }
        }
    }
    spdlog::info("style transfer: {} attempts, {} accepted, rejected {} template / {} generate / {} post-filter",
                 st.attempted, st.accepted, st.rejected_template, st.rejected_generate, st.rejected_post_filter);
    if (stats) *stats = st;
    return out;
}

} // namespace fairpairs
