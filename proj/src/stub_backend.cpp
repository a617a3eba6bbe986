#include "fairpairs/stub_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "fairpairs/text.hpp"

namespace fairpairs::stub {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::size_t kTextFeatureBuckets = 32;

bool is_sentinel(std::string_view t) {
    return t.size() >= 2 && ((t.front() == '<' && t.back() == '>') || (t.front() == '[' && t.back() == ']'));
}

std::vector<std::string> normalized_tokens(const Tokenizer &tok, std::string_view text) {
    auto raw = tok.tokenize(text);
    std::vector<std::string> out;
    out.reserve(raw.size());
    for (const auto &t : raw) out.push_back(normalize_token(t));
    return out;
}

} // namespace

std::string normalize_token(std::string_view token) {
    if (is_sentinel(token)) return {};
    auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || static_cast<unsigned char>(c) >= 0x80; };
    std::size_t b = 0, e = token.size();
    while (b < e && !alnum(token[b])) ++b;
    while (e > b && !alnum(token[e - 1])) --e;
    return text::to_lower(token.substr(b, e - b));
}

// ─── StubClassifier ─────────────────────────────────────────────────────────

StubClassifier::StubClassifier(std::size_t n_heads, std::shared_ptr<const Tokenizer> tokenizer)
    : tokenizer_(tokenizer ? std::move(tokenizer) : std::make_shared<WhitespaceTokenizer>()),
      bias_(n_heads, 0.0), weights_(n_heads), bias_adam_(n_heads), adam_(n_heads) {
    if (n_heads == 0) throw PreconditionError("classifier needs at least one head");
}

Capabilities StubClassifier::capabilities() const {
    return {n_heads(), true, true, true, true};
}

void StubClassifier::set_weight(std::size_t head, const std::string &term, double weight) {
    weights_.at(head)[normalize_token(term)] = weight;
}

double StubClassifier::weight(std::size_t head, const std::string &term) const {
    const auto &w = weights_.at(head);
    auto it = w.find(normalize_token(term));
    return it == w.end() ? 0.0 : it->second;
}

double StubClassifier::logit(const std::vector<std::string> &normalized, std::size_t head) const {
    const auto &w = weights_[head];
    double z = bias_[head];
    for (const auto &t : normalized) {
        if (t.empty()) continue;
        if (auto it = w.find(t); it != w.end()) z += it->second;
    }
    return z;
}

std::vector<double> StubClassifier::logits(std::span<const std::string> texts, std::size_t head) const {
    std::vector<double> out;
    out.reserve(texts.size());
    for (const auto &t : texts) out.push_back(logit(normalized_tokens(*tokenizer_, t), head));
    return out;
}

std::vector<Prediction> StubClassifier::do_predict(std::span<const std::string> texts,
                                                   const PredictOptions &options) const {
    // Dropout is the identity here, so dropout_seed has no effect.
    std::vector<Prediction> out;
    out.reserve(texts.size());
    for (const auto &text : texts) {
        const auto norm = normalized_tokens(*tokenizer_, text);
        Prediction p;
        std::vector<double> z(n_heads());
        for (std::size_t h = 0; h < n_heads(); ++h) {
            z[h] = logit(norm, h);
            p.probs.push_back(sigmoid(z[h]));
        }
        if (options.want_logits) p.logits = z;
        if (options.want_attention) {
            std::vector<double> a(norm.size(), 0.0);
            double total = 0.0;
            for (std::size_t k = 0; k < norm.size(); ++k) {
                if (norm[k].empty()) continue;
                for (std::size_t h = 0; h < n_heads(); ++h) {
                    auto it = weights_[h].find(norm[k]);
                    if (it != weights_[h].end()) a[k] = std::max(a[k], std::abs(it->second));
                }
                total += a[k];
            }
            if (total > 0.0) {
                for (auto &x : a) x /= total;
            } else if (!a.empty()) {
                std::fill(a.begin(), a.end(), 1.0 / static_cast<double>(a.size()));
            }
            p.attention = std::move(a);
        }
        if (options.want_features) {
            std::vector<double> f(kTextFeatureBuckets, 0.0);
            for (const auto &t : norm)
                if (!t.empty()) f[text::fnv1a(t) % kTextFeatureBuckets] += 1.0;
            p.features = std::move(f);
        }
        out.push_back(std::move(p));
    }
    return out;
}

void StubClassifier::apply_gradients(std::span<const std::string> texts, std::span<const double> dlogits,
                                     double learning_rate, std::size_t head) {
    if (texts.size() != dlogits.size()) throw PreconditionError("gradient count differs from text count");
    std::unordered_map<std::string, double> grad;
    double bias_grad = 0.0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        bias_grad += dlogits[i];
        for (const auto &t : normalized_tokens(*tokenizer_, texts[i]))
            if (!t.empty()) grad[t] += dlogits[i];
    }
    ++adam_step_;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam_step_));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam_step_));
    auto update = [&](double &param, AdamSlot &slot, double g) {
        slot.m = kAdamBeta1 * slot.m + (1 - kAdamBeta1) * g;
        slot.v = kAdamBeta2 * slot.v + (1 - kAdamBeta2) * g * g;
        param -= learning_rate * (slot.m / c1) / (std::sqrt(slot.v / c2) + kAdamEps);
    };
    update(bias_.at(head), bias_adam_.at(head), bias_grad);
    // Iterate in sorted order so floating-point results do not depend on hash layout.
    std::vector<std::pair<std::string, double>> ordered(grad.begin(), grad.end());
    std::sort(ordered.begin(), ordered.end());
    for (const auto &[term, g] : ordered) update(weights_[head][term], adam_[head][term], g);
}

std::unique_ptr<StubClassifier> StubClassifier::fit_counts(const LabeledTexts &data, const TrainConfig &config,
                                                           std::shared_ptr<const Tokenizer> tokenizer) {
    const std::size_t heads = data.labels.size();
    auto model = std::make_unique<StubClassifier>(heads, std::move(tokenizer));
    std::vector<std::set<std::string>> present;
    present.reserve(data.texts.size());
    for (const auto &t : data.texts) {
        auto norm = normalized_tokens(*model->tokenizer_, t);
        std::set<std::string> s;
        for (auto &n : norm)
            if (!n.empty()) s.insert(std::move(n));
        present.push_back(std::move(s));
    }
    for (std::size_t h = 0; h < heads; ++h) {
        if (data.labels[h].size() != data.texts.size())
            throw PreconditionError(fmt::format("head {} label count differs from text count", h));
        double pos = 0, neg = 0;
        std::map<std::string, std::pair<double, double>> df;
        for (std::size_t i = 0; i < data.texts.size(); ++i) {
            const int y = data.labels[h][i];
            if (y < 0) continue;
            (y ? pos : neg) += 1;
            for (const auto &t : present[i]) (y ? df[t].first : df[t].second) += 1;
        }
        if (pos == 0 || neg == 0)
            throw PreconditionError(fmt::format("degenerate data for head {}: {} positive, {} negative", h,
                                                pos, neg));
        if (config.epochs <= 0) continue;
        // Bernoulli naive Bayes; the absent-term evidence is folded into the bias.
        double bias = config.reweight ? 0.0 : std::log(pos / neg);
        for (const auto &[term, counts] : df) {
            const double t1 = (counts.first + 1) / (pos + 2);
            const double t0 = (counts.second + 1) / (neg + 2);
            const double absent = std::log((1 - t1) / (1 - t0));
            model->weights_[h][term] = std::log(t1 / t0) - absent;
            bias += absent;
        }
        model->bias_[h] = bias;
    }
    return model;
}

json StubClassifier::save() const {
    json heads = json::array();
    for (std::size_t h = 0; h < n_heads(); ++h) {
        std::map<std::string, double> sorted(weights_[h].begin(), weights_[h].end());
        heads.push_back({{"bias", bias_[h]}, {"weights", sorted}});
    }
    return {{"kind", "stub_classifier"}, {"heads", heads}};
}

std::unique_ptr<StubClassifier> StubClassifier::load(const json &saved, std::shared_ptr<const Tokenizer> tokenizer) {
    if (saved.value("kind", "") != "stub_classifier") throw FormatError("not a stub classifier");
    const auto &heads = saved.at("heads");
    auto model = std::make_unique<StubClassifier>(heads.size(), std::move(tokenizer));
    for (std::size_t h = 0; h < heads.size(); ++h) {
        model->bias_[h] = heads[h].at("bias").get<double>();
        for (const auto &[term, w] : heads[h].at("weights").items()) model->weights_[h][term] = w.get<double>();
    }
    return model;
}

// ─── StubInfill ─────────────────────────────────────────────────────────────

FillTable load_fill_table(const std::filesystem::path &path) {
    FillTable table;
    for (const auto &row : text::read_jsonl(path)) {
        try {
            auto &slot = table[{row.at("template").get<std::string>(), row.at("condition").get<std::string>()}];
            for (const auto &c : row.at("completions")) slot.push_back(c.get<std::string>());
        } catch (const json::exception &e) {
            throw FormatError(fmt::format("fill table {}: {}", path.string(), e.what()));
        }
    }
    return table;
}

void save_fill_table(const FillTable &table, const std::filesystem::path &path) {
    std::vector<json> rows;
    for (const auto &[key, completions] : table)
        rows.push_back({{"template", key.first}, {"condition", key.second}, {"completions", completions}});
    text::write_file(path, text::to_jsonl(rows));
}

StubInfill::StubInfill(FillTable table, std::map<std::string, std::vector<std::string>> fallback,
                       std::size_t max_beam)
    : table_(std::move(table)), fallback_(std::move(fallback)), max_beam_(max_beam) {}

void StubInfill::add(const std::string &template_text, const std::string &condition,
                     std::vector<std::string> completions) {
    auto &slot = table_[{template_text, condition}];
    for (auto &c : completions)
        if (std::find(slot.begin(), slot.end(), c) == slot.end()) slot.push_back(std::move(c));
}

void StubInfill::train(const std::vector<std::pair<MaskTemplate, std::string>> &examples) {
    for (const auto &[tmpl, condition] : examples)
        if (tmpl.valid) add(tmpl.text(), condition, {tmpl.source});
}

std::vector<Completion> StubInfill::do_fill(const MaskTemplate &tmpl, std::string_view condition,
                                            std::size_t beam_width) const {
    std::vector<Completion> out;
    if (auto it = table_.find({tmpl.text(), std::string(condition)}); it != table_.end()) {
        for (std::size_t i = 0; i < it->second.size() && i < beam_width; ++i)
            out.push_back({it->second[i], -static_cast<double>(i)});
        return out;
    }
    auto fb = fallback_.find(std::string(condition));
    if (fb == fallback_.end()) return out;
    for (std::size_t i = 0; i < fb->second.size() && i < beam_width; ++i) {
        std::vector<std::string> tokens = tmpl.tokens;
        for (auto &t : tokens)
            if (t == tmpl.mask_token) t = fb->second[i];
        out.push_back({text::join(tokens, " "), -static_cast<double>(i)});
    }
    return out;
}

// ─── StubPairBackbone ───────────────────────────────────────────────────────

std::size_t StubPairBackbone::bucket(const std::string &token) const {
    return static_cast<std::size_t>(text::fnv1a(token) % buckets_);
}

Eigen::VectorXd StubPairBackbone::pair_features(const PairEncoding &encoding) const {
    std::map<std::string, int> balance;
    for (const auto &t : encoding.first())
        if (auto n = normalize_token(t); !n.empty()) ++balance[n];
    for (const auto &t : encoding.second())
        if (auto n = normalize_token(t); !n.empty()) --balance[n];
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    double changed = 0.0;
    for (const auto &[token, b] : balance) {
        if (b > 0) f[static_cast<Eigen::Index>(bucket(token))] += b;
        if (b < 0) f[static_cast<Eigen::Index>(buckets_ + bucket(token))] += -b;
        changed += std::abs(b);
    }
    f[static_cast<Eigen::Index>(2 * buckets_)] = changed / 4.0;
    return f;
}

Eigen::VectorXd StubPairBackbone::text_features(std::span<const std::string> tokens) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    for (const auto &t : tokens)
        if (auto n = normalize_token(t); !n.empty()) f[static_cast<Eigen::Index>(bucket(n))] += 1.0;
    return f;
}

// ─── StubBackend ────────────────────────────────────────────────────────────

StubBackend::StubBackend(std::size_t feature_buckets)
    : tokenizer_(std::make_shared<WhitespaceTokenizer>()),
      backbone_(std::make_shared<StubPairBackbone>(feature_buckets)) {}

std::unique_ptr<ClassifierBackend> StubBackend::train_classifier(const LabeledTexts &data,
                                                                 const TrainConfig &config) const {
    return StubClassifier::fit_counts(data, config, tokenizer_);
}

std::unique_ptr<DifferentiableClassifier> StubBackend::make_differentiable(std::size_t n_heads) const {
    return std::make_unique<StubClassifier>(n_heads, tokenizer_);
}

std::unique_ptr<ClassifierBackend> StubBackend::load_classifier(const json &saved) const {
    return StubClassifier::load(saved, tokenizer_);
}

std::unique_ptr<DifferentiableClassifier> StubBackend::load_differentiable(const json &saved) const {
    return StubClassifier::load(saved, tokenizer_);
}

} // namespace fairpairs::stub
