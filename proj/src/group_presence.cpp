#include "fairpairs/group_presence.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/fairness_eval.hpp"
#include "fairpairs/text.hpp"

namespace fairpairs {

bool GroupClassifier::has(std::string_view group) const {
    return std::find(groups.begin(), groups.end(), group) != groups.end();
}

std::size_t GroupClassifier::head(std::string_view group) const {
    auto it = std::find(groups.begin(), groups.end(), group);
    if (it == groups.end()) throw PreconditionError(fmt::format("no classifier head for group '{}'", group));
    return static_cast<std::size_t>(it - groups.begin());
}

std::vector<double> GroupClassifier::probabilities(std::span<const std::string> texts, std::string_view group) const {
    const auto h = head(group);
    std::vector<double> out;
    out.reserve(texts.size());
    for (const auto &p : backend->predict(texts)) out.push_back(p.probs.at(h));
    return out;
}

std::vector<double> GroupClassifier::logits(std::span<const std::string> texts, std::string_view group) const {
    const auto h = head(group);
    PredictOptions opts;
    opts.want_logits = true;
    std::vector<double> out;
    out.reserve(texts.size());
    for (const auto &p : backend->predict(texts, opts)) out.push_back(p.logits->at(h));
    return out;
}

double GroupClassifier::probability(const std::string &text, std::string_view group) const {
    return probabilities(std::span<const std::string>(&text, 1), group).front();
}

json GroupClassifier::save() const {
    return {{"groups", groups}, {"eval_report", eval_report}, {"backend", backend->save()}};
}

GroupClassifier GroupClassifier::load(const json &saved, const ModelBackend &backend) {
    GroupClassifier gc;
    try {
        gc.groups = saved.at("groups").get<std::vector<std::string>>();
        gc.eval_report = saved.at("eval_report").get<std::map<std::string, double>>();
        gc.backend = backend.load_classifier(saved.at("backend"));
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("group classifier: {}", e.what()));
    }
    if (gc.backend->capabilities().n_heads != gc.groups.size())
        throw FormatError("group classifier head count differs from its group list");
    return gc;
}

std::string GroupClassifier::eval_table_csv() const {
    std::string out = "group,balanced_accuracy\n";
    for (const auto &g : groups)
        if (auto it = eval_report.find(g); it != eval_report.end())
            out += fmt::format("{},{}\n", g, eval::format_percent(it->second));
    return out;
}

GroupClassifier train_group_classifier(const CommentStore &train, const CommentStore &eval,
                                       const ModelBackend &backend, const TrainConfig &config) {
    const auto annotated = train.annotated();
    if (annotated.empty()) throw PreconditionError("training store carries no group labels");
    const auto labeled = annotated.labeled();

    std::set<std::string> candidates;
    for (const auto &c : annotated)
        for (const auto &[g, _] : *c.group_fractions) candidates.insert(g);

    GroupClassifier gc;
    LabeledTexts data;
    for (const auto &l : labeled) data.texts.push_back(l.comment.text);
    for (const auto &g : candidates) {
        std::vector<int> y;
        y.reserve(labeled.size());
        for (const auto &l : labeled) y.push_back(l.groups.count(g) ? 1 : 0);
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(y.size())) {
            spdlog::info("group '{}' has a single label class in training data; no head", g);
            continue;
        }
        gc.groups.push_back(g);
        data.labels.push_back(std::move(y));
    }
    if (gc.groups.empty()) throw PreconditionError("no group has both labels in the training data");
    gc.backend = backend.train_classifier(data, config);

    const auto eval_labeled = eval.annotated().labeled();
    std::vector<std::string> eval_texts;
    for (const auto &l : eval_labeled) eval_texts.push_back(l.comment.text);
    const auto preds = gc.backend->predict(eval_texts);
    for (std::size_t h = 0; h < gc.groups.size(); ++h) {
        std::vector<int> p, y;
        for (std::size_t i = 0; i < eval_labeled.size(); ++i) {
            p.push_back(preds[i].probs[h] > 0.5 ? 1 : 0);
            y.push_back(eval_labeled[i].groups.count(gc.groups[h]) ? 1 : 0);
        }
        try {
            gc.eval_report[gc.groups[h]] = eval::balanced_accuracy(p, y);
        } catch (const PreconditionError &) {
            spdlog::warn("group '{}': evaluation set lacks one label class; balanced accuracy not reported",
                         gc.groups[h]);
        }
    }
    return gc;
}

void EligibilityPolicy::validate() const {
    if (!(ba_threshold > 50.0 && ba_threshold <= 100.0))
        throw PreconditionError(fmt::format("balanced-accuracy threshold {} outside (50, 100]", ba_threshold));
}

std::set<std::string> eligible_groups(const std::map<std::string, double> &eval_report,
                                      const EligibilityPolicy &policy) {
    policy.validate();
    std::set<std::string> excluded;
    for (const auto &e : policy.exclusions) excluded.insert(text::to_lower(e));
    std::set<std::string> out;
    for (const auto &[group, ba] : eval_report)
        if (ba > policy.ba_threshold && !excluded.count(text::to_lower(group))) out.insert(group);
    return out;
}

std::set<std::string> eligible_groups(const GroupClassifier &gc, const EligibilityPolicy &policy) {
    return eligible_groups(gc.eval_report, policy);
}

bool transfer_success(double p_target, double p_source, double p_threshold, FilterOrientation orientation) {
    if (orientation == FilterOrientation::literal) return p_target < p_threshold && p_source > p_threshold;
    return p_target > p_threshold && p_source < p_threshold;
}

bool transfer_success(const GroupClassifier &gc, const std::string &s_prime, std::string_view source_group,
                      std::string_view target_group, double p_threshold, FilterOrientation orientation) {
    const auto h_src = gc.head(source_group);
    const auto h_tgt = gc.head(target_group);
    const auto p = gc.backend->predict_one(s_prime);
    return transfer_success(p.probs.at(h_tgt), p.probs.at(h_src), p_threshold, orientation);
}

void apply_post_filter(std::vector<PairCandidate> &candidates, const GroupClassifier &gc, double p_threshold,
                       FilterOrientation orientation) {
    std::vector<std::string> texts;
    texts.reserve(candidates.size());
    for (const auto &c : candidates) texts.push_back(c.s_prime);
    const auto preds = gc.backend->predict(texts);
    std::size_t passed = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto &c = candidates[i];
        if (!gc.has(c.source_group) || !gc.has(c.target_group)) {
            c.filter_passed = false;
            c.provenance["post_filter"] = {{"error", "no classifier head"}};
            continue;
        }
        const double ps = preds[i].probs[gc.head(c.source_group)];
        const double pt = preds[i].probs[gc.head(c.target_group)];
        c.filter_passed = transfer_success(pt, ps, p_threshold, orientation);
        c.provenance["post_filter"] = {{"p_source", ps}, {"p_target", pt}, {"passed", c.filter_passed}};
        passed += c.filter_passed;
    }
    spdlog::info("post-filter: {} of {} candidates passed", passed, candidates.size());
}

} // namespace fairpairs
