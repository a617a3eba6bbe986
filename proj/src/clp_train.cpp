#include "fairpairs/clp_train.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fairpairs {

double clp_penalty(std::span<const double> a, std::span<const double> b, double lambda) {
    if (a.size() != b.size()) throw PreconditionError("logit vectors differ in length");
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    return lambda * std::sqrt(ss);
}

std::vector<double> clp_penalty_gradient(std::span<const double> a, std::span<const double> b, double lambda) {
    if (a.size() != b.size()) throw PreconditionError("logit vectors differ in length");
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    std::vector<double> g(a.size(), 0.0);
    if (ss == 0.0) return g;
    const double norm = std::sqrt(ss);
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = lambda * (a[i] - b[i]) / norm;
    return g;
}

std::string to_string(PartnerOrientation o) { return o == PartnerOrientation::constraint ? "constraint" : "literal"; }

PartnerOrientation partner_orientation_from_string(std::string_view s) {
    if (s == "constraint") return PartnerOrientation::constraint;
    if (s == "literal") return PartnerOrientation::literal;
    throw FormatError(fmt::format("unknown partner orientation '{}'", s));
}

void ClpConfig::validate() const {
    if (lambda < 0.0) throw PreconditionError("lambda must be non-negative");
    if (epochs < 0) throw PreconditionError("epochs must be non-negative");
    if (batch_size < 1) throw PreconditionError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw PreconditionError("learning rate must be positive");
}

json ClpConfig::to_json() const {
    return {{"lambda", lambda},         {"threshold", threshold},          {"orientation", to_string(orientation)},
            {"epochs", epochs},         {"batch_size", batch_size},        {"learning_rate", learning_rate},
            {"reweight", reweight},     {"seed", seed}};
}

PartnerIndex::PartnerIndex(const std::vector<PairCandidate> &pairs, const std::map<std::string, double> &predictions) {
    for (const auto &p : pairs) {
        auto it = predictions.find(p.id);
        if (it == predictions.end()) throw PreconditionError(fmt::format("no similarity prediction for pair {}", p.id));
        by_source_[p.s].push_back({p.s_prime, it->second});
    }
}

const std::vector<PartnerIndex::Entry> &PartnerIndex::candidates(const std::string &s) const {
    static const std::vector<Entry> none;
    auto it = by_source_.find(s);
    return it == by_source_.end() ? none : it->second;
}

std::string select_clp_pair(const std::string &s, const PartnerIndex &index, double threshold,
                            PartnerOrientation orientation, Rng &rng) {
    std::vector<const std::string *> eligible;
    for (const auto &e : index.candidates(s)) {
        const bool keep = orientation == PartnerOrientation::constraint ? e.p <= threshold : e.p > threshold;
        if (keep) eligible.push_back(&e.s_prime);
    }
    if (eligible.empty()) return s;
    if (eligible.size() == 1) return *eligible.front();
    return *eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
}

std::unique_ptr<DifferentiableClassifier> train_clp(const CommentStore &train, const PartnerIndex &partners,
                                                    const ModelBackend &backend, const ClpConfig &config,
                                                    ClpTrace *trace) {
    config.validate();
    if (train.empty()) throw PreconditionError("empty training store");
    std::vector<std::string> texts;
    std::vector<int> labels;
    for (const auto &c : train) {
        texts.push_back(c.text);
        labels.push_back(label(c).y);
    }
    double w_pos = 1.0, w_neg = 1.0;
    const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n_neg = static_cast<double>(labels.size()) - n_pos;
    if (config.reweight) {
        if (n_pos == 0 || n_neg == 0) throw PreconditionError("reweighted training needs both labels");
        const double n = static_cast<double>(labels.size());
        w_pos = n / (2.0 * n_pos);
        w_neg = n / (2.0 * n_neg);
    }

    auto model = backend.make_differentiable(1);
    Rng order_rng(config.seed);
    // Separate stream so partner draws never shift the batch order.
    Rng partner_rng(config.seed ^ 0x5bd1e995ULL);
    std::vector<std::size_t> order(texts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    ClpTrace tr;

    std::vector<std::string> step_texts;
    std::vector<double> step_grads;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0, pen_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const auto B = static_cast<double>(end - start);
            std::vector<std::string> batch, partner;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(texts[order[k]]);
                if (config.lambda > 0.0 && partners.size() > 0) {
                    partner.push_back(select_clp_pair(batch.back(), partners, config.threshold, config.orientation,
                                                      partner_rng));
                    ++(partner.back() == batch.back() ? tr.self_paired : tr.paired);
                }
            }
            const auto l_s = model->logits(batch);
            step_texts.assign(batch.begin(), batch.end());
            step_grads.assign(batch.size(), 0.0);
            double loss = 0.0, pen = 0.0;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int y = labels[order[start + i]];
                const double w = y ? w_pos : w_neg;
                const double p = sigmoid(l_s[i]);
                loss += -w * (y ? std::log(std::max(p, 1e-12)) : std::log(std::max(1.0 - p, 1e-12)));
                step_grads[i] = w * (p - y) / B;
            }
            if (!partner.empty()) {
                const auto l_p = model->logits(partner);
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    const double a[1] = {l_s[i]}, b[1] = {l_p[i]};
                    pen += clp_penalty(a, b, config.lambda);
                    const double g = clp_penalty_gradient(a, b, config.lambda)[0] / B;
                    if (g == 0.0) continue;
                    step_grads[i] += g;
                    step_texts.push_back(partner[i]);
                    step_grads.push_back(-g);
                }
            }
            model->apply_gradients(step_texts, step_grads, config.learning_rate);
            loss_sum += loss / B + pen / B;
            pen_sum += pen / B;
            ++batches;
        }
        tr.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        tr.epoch_penalty.push_back(pen_sum / static_cast<double>(batches));
    }
    if (tr.paired + tr.self_paired > 0)
        spdlog::info("clp: {} of {} batch members found a partner", tr.paired, tr.paired + tr.self_paired);
    if (trace) *trace = std::move(tr);
    return model;
}

std::unique_ptr<DifferentiableClassifier> train_baseline(const CommentStore &train, const ModelBackend &backend,
                                                         ClpConfig config, ClpTrace *trace) {
    config.lambda = 0.0;
    return train_clp(train, PartnerIndex{}, backend, config, trace);
}

json downstream_head_spec() {
    return {{"layers", {"linear(768)", "tanh", "linear(1)", "sigmoid"}}};
}

std::string censor(std::string_view s, const Lexicon &lexicon, const std::set<std::string> &groups) {
    std::string out;
    std::size_t cursor = 0;
    for (const auto &occ : lexicon.find_terms(s)) {
        bool listed = false;
        for (const auto &o : occ.owners) listed = listed || groups.count(o.group) > 0;
        if (!listed) continue;
        out.append(s.substr(cursor, occ.begin - cursor));
        out += kCensorPlaceholder;
        cursor = occ.end;
    }
    out.append(s.substr(cursor));
    return out;
}

CommentStore censor_store(const CommentStore &store, const Lexicon &lexicon, const std::set<std::string> &groups) {
    std::vector<Comment> out(store.begin(), store.end());
    for (auto &c : out) c.text = censor(c.text, lexicon, groups);
    return CommentStore(std::move(out));
}

} // namespace fairpairs
