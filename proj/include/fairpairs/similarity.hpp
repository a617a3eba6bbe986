#pragma once

// Pair-similarity classifier: backbone features for (s, s') feed a small
// MLP head; p > t means the pair is judged not to be a fairness constraint.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fairpairs/model_backend.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

PairEncoding encode_pair(std::string_view s, std::string_view s_prime, const Tokenizer &tokenizer);

enum class HeadVariant { concat, merge, feature_diff, bilinear };

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(std::string_view s);

struct HeadSpec {
    HeadVariant variant = HeadVariant::concat;
    std::size_t hidden = 768;
    double dropout = 0.1;

    static HeadSpec reference() { return {}; }
    static HeadSpec toy() { return {HeadVariant::concat, 16, 0.1}; }
    json to_json() const;
    static HeadSpec from_json(const json &j);
};

namespace thresholds {
inline constexpr double standard = 0.5;
inline constexpr double low = 0.1;
inline constexpr double very_low = 0.01;
} // namespace thresholds

struct SimilarityTrainConfig {
    int epochs = 5;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    bool reweight = false;
};

// Per-pair backbone features keyed by pair id. Safe for concurrent readers
// and a single appending writer.
class FeatureCache {
  public:
    const Eigen::VectorXd *find(const std::string &id) const;
    void insert(const std::string &id, Eigen::VectorXd features);
    std::size_t size() const;

  private:
    std::unique_ptr<std::shared_mutex> mutex_ = std::make_unique<std::shared_mutex>();
    std::map<std::string, Eigen::VectorXd> entries_;
};

class SimilarityModel {
  public:
    SimilarityModel(std::shared_ptr<const PairBackbone> backbone, std::shared_ptr<const Tokenizer> tokenizer,
                    HeadSpec spec = {}, double threshold = thresholds::standard, std::uint64_t init_seed = 0);

    const HeadSpec &spec() const { return spec_; }
    double threshold() const { return threshold_; }
    void set_threshold(double t) { threshold_ = t; }
    std::size_t input_dim() const { return input_dim_; }

    // Backbone part; the head never sees text.
    Eigen::VectorXd features(std::string_view s, std::string_view s_prime) const;
    Eigen::VectorXd features(const PairCandidate &pair, const FeatureCache *cache = nullptr) const;

    // Dropout is off unless a seed is given; the seed fixes the head masks.
    double predict_features(const Eigen::VectorXd &x, std::optional<std::uint64_t> dropout_seed = std::nullopt) const;
    double predict(const PairCandidate &pair, const FeatureCache *cache = nullptr,
                   std::optional<std::uint64_t> dropout_seed = std::nullopt) const;
    // 1 iff p > t.
    int classify(double p) const { return p > threshold_ ? 1 : 0; }
    int classify(const PairCandidate &pair, const FeatureCache *cache = nullptr) const;

    // Soft targets in [0, 1] (ties aggregate to 0.5). Returns mean loss per epoch.
    std::vector<double> train(const std::vector<Eigen::VectorXd> &x, const std::vector<double> &y,
                              const SimilarityTrainConfig &config, Rng &rng);

    void reinitialize(std::uint64_t seed);
    void zero_weights();

    json save() const;
    static SimilarityModel load(const json &saved, std::shared_ptr<const PairBackbone> backbone,
                                std::shared_ptr<const Tokenizer> tokenizer);

  private:
    struct Masks {
        Eigen::VectorXd hidden;
        double out = 1.0;
    };
    Masks sample_masks(Rng &rng) const;
    double forward(const Eigen::VectorXd &x, const Masks *masks, Eigen::VectorXd *h = nullptr) const;

    std::shared_ptr<const PairBackbone> backbone_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    HeadSpec spec_;
    double threshold_;
    std::size_t input_dim_;
    Eigen::MatrixXd w1_;
    Eigen::VectorXd b1_;
    Eigen::VectorXd w2_;
    double b2_ = 0.0;
};

FeatureCache precompute_features(const SimilarityModel &model, const std::vector<PairCandidate> &pairs);

// Predicted p for every pair, dropout off.
std::map<std::string, double> predict_all(const SimilarityModel &model, const std::vector<PairCandidate> &pairs,
                                          const FeatureCache *cache = nullptr);

} // namespace fairpairs
