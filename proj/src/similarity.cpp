#include "fairpairs/similarity.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace fairpairs {

PairEncoding encode_pair(std::string_view s, std::string_view s_prime, const Tokenizer &tokenizer) {
    constexpr auto L = PairEncoding::kSideLength;
    const auto a = tokenizer.tokenize(s);
    const auto b = tokenizer.tokenize(s_prime);
    if (a.size() > L || b.size() > L)
        throw PreconditionError(fmt::format("text longer than {} tokens ({} and {})", L, a.size(), b.size()));
    PairEncoding e;
    e.tokens.assign(2 * L, std::string(kPadToken));
    std::copy(a.begin(), a.end(), e.tokens.begin());
    std::copy(b.begin(), b.end(), e.tokens.begin() + static_cast<std::ptrdiff_t>(L));
    e.first_length = a.size();
    e.second_length = b.size();
    return e;
}

std::string to_string(HeadVariant v) {
    switch (v) {
    case HeadVariant::concat: return "concat";
    case HeadVariant::merge: return "merge";
    case HeadVariant::feature_diff: return "feature_diff";
    case HeadVariant::bilinear: return "bilinear";
    }
    return "concat";
}

HeadVariant head_variant_from_string(std::string_view s) {
    if (s == "concat") return HeadVariant::concat;
    if (s == "merge") return HeadVariant::merge;
    if (s == "feature_diff") return HeadVariant::feature_diff;
    if (s == "bilinear") return HeadVariant::bilinear;
    throw FormatError(fmt::format("unknown head variant '{}'", s));
}

json HeadSpec::to_json() const {
    return {{"variant", to_string(variant)}, {"hidden", hidden}, {"dropout", dropout}};
}

HeadSpec HeadSpec::from_json(const json &j) {
    HeadSpec h;
    for (const auto &[key, value] : j.items()) {
        if (key == "variant") h.variant = head_variant_from_string(value.get<std::string>());
        else if (key == "hidden") h.hidden = value.get<std::size_t>();
        else if (key == "dropout") h.dropout = value.get<double>();
        else throw FormatError(fmt::format("head spec: unknown key '{}'", key));
    }
    if (h.hidden == 0) throw FormatError("head spec: hidden width must be positive");
    if (!(h.dropout >= 0.0 && h.dropout < 1.0)) throw FormatError("head spec: dropout outside [0, 1)");
    return h;
}

// ─── FeatureCache ───────────────────────────────────────────────────────────

const Eigen::VectorXd *FeatureCache::find(const std::string &id) const {
    std::shared_lock lock(*mutex_);
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

void FeatureCache::insert(const std::string &id, Eigen::VectorXd features) {
    std::unique_lock lock(*mutex_);
    entries_.emplace(id, std::move(features));
}

std::size_t FeatureCache::size() const {
    std::shared_lock lock(*mutex_);
    return entries_.size();
}

// ─── SimilarityModel ────────────────────────────────────────────────────────

SimilarityModel::SimilarityModel(std::shared_ptr<const PairBackbone> backbone, std::shared_ptr<const Tokenizer> tokenizer,
                                 HeadSpec spec, double threshold, std::uint64_t init_seed)
    : backbone_(std::move(backbone)), tokenizer_(std::move(tokenizer)), spec_(spec), threshold_(threshold) {
    if (!backbone_) throw CapabilityError("backend provides no pair backbone");
    input_dim_ = backbone_->dim();
    reinitialize(init_seed);
}

void SimilarityModel::reinitialize(std::uint64_t seed) {
    Rng rng(seed);
    const auto H = static_cast<Eigen::Index>(spec_.hidden);
    const auto D = static_cast<Eigen::Index>(input_dim_);
    const double r1 = std::sqrt(6.0 / static_cast<double>(D + H));
    const double r2 = std::sqrt(6.0 / static_cast<double>(H + 1));
    std::uniform_real_distribution<double> u1(-r1, r1), u2(-r2, r2);
    w1_.resize(H, D);
    for (Eigen::Index i = 0; i < H; ++i)
        for (Eigen::Index k = 0; k < D; ++k) w1_(i, k) = u1(rng);
    b1_ = Eigen::VectorXd::Zero(H);
    w2_.resize(H);
    for (Eigen::Index i = 0; i < H; ++i) w2_[i] = u2(rng);
    b2_ = 0.0;
}

void SimilarityModel::zero_weights() {
    w1_.setZero();
    b1_.setZero();
    w2_.setZero();
    b2_ = 0.0;
}

Eigen::VectorXd SimilarityModel::features(std::string_view s, std::string_view s_prime) const {
    const auto enc = encode_pair(s, s_prime, *tokenizer_);
    switch (spec_.variant) {
    case HeadVariant::concat: return backbone_->pair_features(enc);
    case HeadVariant::merge: return backbone_->text_features(enc.first()) + backbone_->text_features(enc.second());
    case HeadVariant::feature_diff:
        return (backbone_->text_features(enc.first()) - backbone_->text_features(enc.second())).cwiseAbs();
    case HeadVariant::bilinear:
        return backbone_->text_features(enc.first()).cwiseProduct(backbone_->text_features(enc.second()));
    }
    return backbone_->pair_features(enc);
}

Eigen::VectorXd SimilarityModel::features(const PairCandidate &pair, const FeatureCache *cache) const {
    if (cache)
        if (const auto *f = cache->find(pair.id)) return *f;
    return features(pair.s, pair.s_prime);
}

SimilarityModel::Masks SimilarityModel::sample_masks(Rng &rng) const {
    Masks m;
    const double keep = 1.0 - spec_.dropout;
    std::bernoulli_distribution bern(keep);
    m.hidden.resize(static_cast<Eigen::Index>(spec_.hidden));
    for (Eigen::Index i = 0; i < m.hidden.size(); ++i) m.hidden[i] = bern(rng) ? 1.0 / keep : 0.0;
    m.out = bern(rng) ? 1.0 / keep : 0.0;
    return m;
}

// linear -> dropout -> tanh -> linear -> dropout -> sigmoid
double SimilarityModel::forward(const Eigen::VectorXd &x, const Masks *masks, Eigen::VectorXd *h_out) const {
    if (static_cast<std::size_t>(x.size()) != input_dim_)
        throw PreconditionError(fmt::format("feature size {} differs from head input {}", x.size(), input_dim_));
    Eigen::VectorXd z1 = w1_ * x + b1_;
    if (masks) z1 = z1.cwiseProduct(masks->hidden);
    Eigen::VectorXd h = z1.array().tanh().matrix();
    double z2 = w2_.dot(h) + b2_;
    if (masks) z2 *= masks->out;
    if (h_out) *h_out = std::move(h);
    return z2;
}

double SimilarityModel::predict_features(const Eigen::VectorXd &x, std::optional<std::uint64_t> dropout_seed) const {
    if (!dropout_seed) return sigmoid(forward(x, nullptr));
    Rng rng(*dropout_seed);
    const auto masks = sample_masks(rng);
    return sigmoid(forward(x, &masks));
}

double SimilarityModel::predict(const PairCandidate &pair, const FeatureCache *cache,
                                std::optional<std::uint64_t> dropout_seed) const {
    return predict_features(features(pair, cache), dropout_seed);
}

int SimilarityModel::classify(const PairCandidate &pair, const FeatureCache *cache) const {
    return classify(predict(pair, cache));
}

std::vector<double> SimilarityModel::train(const std::vector<Eigen::VectorXd> &x, const std::vector<double> &y,
                                           const SimilarityTrainConfig &config, Rng &rng) {
    if (x.size() != y.size()) throw PreconditionError("feature and label counts differ");
    if (x.empty()) return {};
    double w_pos = 1.0, w_neg = 1.0;
    if (config.reweight) {
        double n_pos = 0, n_neg = 0;
        for (double v : y) {
            if (v > 0.5) ++n_pos;
            else if (v < 0.5) ++n_neg;
        }
        const double n = n_pos + n_neg;
        if (n_pos > 0) w_pos = n / (2.0 * n_pos);
        if (n_neg > 0) w_neg = n / (2.0 * n_neg);
    }
    const auto H = w1_.rows(), D = w1_.cols();
    Eigen::MatrixXd m_w1 = Eigen::MatrixXd::Zero(H, D), v_w1 = m_w1;
    Eigen::VectorXd m_b1 = Eigen::VectorXd::Zero(H), v_b1 = m_b1, m_w2 = m_b1, v_w2 = m_b1;
    double m_b2 = 0, v_b2 = 0;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            Eigen::MatrixXd g_w1 = Eigen::MatrixXd::Zero(H, D);
            Eigen::VectorXd g_b1 = Eigen::VectorXd::Zero(H), g_w2 = g_b1;
            double g_b2 = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto i = order[k];
                const auto masks = sample_masks(rng);
                Eigen::VectorXd h;
                const double logit = forward(x[i], &masks, &h);
                const double p = sigmoid(logit);
                const double weight = y[i] > 0.5 ? w_pos : (y[i] < 0.5 ? w_neg : 1.0);
                const double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
                total += -weight * (y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc));
                const double dz2 = weight * (p - y[i]) * masks.out;
                g_w2 += dz2 * h;
                g_b2 += dz2;
                Eigen::VectorXd dz1 = (dz2 * w2_).cwiseProduct((1.0 - h.array().square()).matrix()).cwiseProduct(masks.hidden);
                g_w1.noalias() += dz1 * x[i].transpose();
                g_b1 += dz1;
            }
            const double scale = 1.0 / static_cast<double>(end - start);
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            const double lr = config.learning_rate;
            auto adam = [&](auto &param, auto &m, auto &v, const auto &g) {
                m = beta1 * m + (1 - beta1) * g;
                v = beta2 * v + (1 - beta2) * g.cwiseProduct(g);
                param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
            };
            g_w1 *= scale;
            g_b1 *= scale;
            g_w2 *= scale;
            g_b2 *= scale;
            adam(w1_, m_w1, v_w1, g_w1);
            adam(b1_, m_b1, v_b1, g_b1);
            adam(w2_, m_w2, v_w2, g_w2);
            m_b2 = beta1 * m_b2 + (1 - beta1) * g_b2;
            v_b2 = beta2 * v_b2 + (1 - beta2) * g_b2 * g_b2;
            b2_ -= lr * (m_b2 / c1) / (std::sqrt(v_b2 / c2) + eps);
        }
        epoch_loss.push_back(total / static_cast<double>(x.size()));
    }
    return epoch_loss;
}

json SimilarityModel::save() const {
    std::vector<std::vector<double>> w1(static_cast<std::size_t>(w1_.rows()));
    for (Eigen::Index i = 0; i < w1_.rows(); ++i)
        for (Eigen::Index k = 0; k < w1_.cols(); ++k) w1[static_cast<std::size_t>(i)].push_back(w1_(i, k));
    return {{"kind", "similarity_head"},
            {"spec", spec_.to_json()},
            {"threshold", threshold_},
            {"input_dim", input_dim_},
            {"w1", w1},
            {"b1", std::vector<double>(b1_.data(), b1_.data() + b1_.size())},
            {"w2", std::vector<double>(w2_.data(), w2_.data() + w2_.size())},
            {"b2", b2_}};
}

SimilarityModel SimilarityModel::load(const json &saved, std::shared_ptr<const PairBackbone> backbone,
                                      std::shared_ptr<const Tokenizer> tokenizer) {
    try {
        if (saved.at("kind") != "similarity_head") throw FormatError("not a similarity head");
        SimilarityModel m(std::move(backbone), std::move(tokenizer), HeadSpec::from_json(saved.at("spec")),
                          saved.at("threshold").get<double>());
        if (saved.at("input_dim").get<std::size_t>() != m.input_dim_)
            throw FormatError("saved head input size differs from the backbone");
        const auto w1 = saved.at("w1").get<std::vector<std::vector<double>>>();
        const auto b1 = saved.at("b1").get<std::vector<double>>();
        const auto w2 = saved.at("w2").get<std::vector<double>>();
        if (w1.size() != m.spec_.hidden || b1.size() != m.spec_.hidden || w2.size() != m.spec_.hidden)
            throw FormatError("saved head has inconsistent sizes");
        for (std::size_t i = 0; i < w1.size(); ++i) {
            if (w1[i].size() != m.input_dim_) throw FormatError("saved head has inconsistent sizes");
            for (std::size_t k = 0; k < w1[i].size(); ++k)
                m.w1_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = w1[i][k];
            m.b1_[static_cast<Eigen::Index>(i)] = b1[i];
            m.w2_[static_cast<Eigen::Index>(i)] = w2[i];
        }
        m.b2_ = saved.at("b2").get<double>();
        return m;
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("similarity model: {}", e.what()));
    }
}

FeatureCache precompute_features(const SimilarityModel &model, const std::vector<PairCandidate> &pairs) {
    FeatureCache cache;
    for (const auto &p : pairs)
        if (!cache.find(p.id)) cache.insert(p.id, model.features(p.s, p.s_prime));
    return cache;
}

std::map<std::string, double> predict_all(const SimilarityModel &model, const std::vector<PairCandidate> &pairs,
                                          const FeatureCache *cache) {
    std::map<std::string, double> out;
    for (const auto &p : pairs) out[p.id] = model.predict(p, cache);
    return out;
}

} // namespace fairpairs
