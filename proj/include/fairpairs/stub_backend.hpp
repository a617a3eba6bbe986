#pragma once

// Deterministic stand-ins for the learned models. The classifier is a
// bag-of-words linear model per head; the infill generator is a lookup table
// with a word-list fallback; the pair backbone hashes token differences.

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fairpairs/model_backend.hpp"

namespace fairpairs::stub {

// Lowercased token with surrounding punctuation removed; empty for sentinels
// such as "<mask>" or "[PAD]".
std::string normalize_token(std::string_view token);

class StubClassifier final : public DifferentiableClassifier {
  public:
    explicit StubClassifier(std::size_t n_heads,
                            std::shared_ptr<const Tokenizer> tokenizer = nullptr);

    Capabilities capabilities() const override;
    const Tokenizer &tokenizer() const override { return *tokenizer_; }
    json save() const override;
    static std::unique_ptr<StubClassifier> load(const json &saved,
                                                std::shared_ptr<const Tokenizer> tokenizer = nullptr);

    std::vector<double> logits(std::span<const std::string> texts,
                               std::size_t head = 0) const override;
    void apply_gradients(std::span<const std::string> texts, std::span<const double> dlogits,
                         double learning_rate, std::size_t head = 0) override;

    // Per-head Bernoulli naive Bayes over term presence, add-one smoothed, as
    // a linear model. Epochs == 0 leaves every weight at zero.
    static std::unique_ptr<StubClassifier> fit_counts(const LabeledTexts &data,
                                                      const TrainConfig &config,
                                                      std::shared_ptr<const Tokenizer> tokenizer);

    void set_weight(std::size_t head, const std::string &term, double weight);
    double weight(std::size_t head, const std::string &term) const;
    void set_bias(std::size_t head, double bias) { bias_.at(head) = bias; }
    double bias(std::size_t head) const { return bias_.at(head); }
    std::size_t n_heads() const { return bias_.size(); }
    const std::unordered_map<std::string, double> &weights(std::size_t head) const {
        return weights_.at(head);
    }

  protected:
    std::vector<Prediction> do_predict(std::span<const std::string> texts,
                                       const PredictOptions &options) const override;

  private:
    struct AdamSlot {
        double m = 0.0;
        double v = 0.0;
    };

    double logit(const std::vector<std::string> &normalized, std::size_t head) const;

    std::shared_ptr<const Tokenizer> tokenizer_;
    std::vector<double> bias_;
    std::vector<std::unordered_map<std::string, double>> weights_;
    std::vector<AdamSlot> bias_adam_;
    std::vector<std::unordered_map<std::string, AdamSlot>> adam_;
    std::uint64_t adam_step_ = 0;
};

// (template text, condition) -> ranked completions.
using FillTable = std::map<std::pair<std::string, std::string>, std::vector<std::string>>;

FillTable load_fill_table(const std::filesystem::path &path);
void save_fill_table(const FillTable &table, const std::filesystem::path &path);

class StubInfill final : public InfillBackend {
  public:
    StubInfill(FillTable table = {}, std::map<std::string, std::vector<std::string>> fallback = {},
               std::size_t max_beam = 5);

    std::size_t max_beam() const override { return max_beam_; }

    // Records each template's source sentence as the completion for its
    // condition, the lookup analogue of training to reconstruct the source.
    void train(const std::vector<std::pair<MaskTemplate, std::string>> &examples);

    void add(const std::string &template_text, const std::string &condition,
             std::vector<std::string> completions);
    const FillTable &table() const { return table_; }

  protected:
    std::vector<Completion> do_fill(const MaskTemplate &tmpl, std::string_view condition,
                                    std::size_t beam_width) const override;

  private:
    FillTable table_;
    std::map<std::string, std::vector<std::string>> fallback_;
    std::size_t max_beam_;
};

class StubPairBackbone final : public PairBackbone {
  public:
    explicit StubPairBackbone(std::size_t buckets = 32) : buckets_(buckets) {}
    std::size_t dim() const override { return 2 * buckets_ + 1; }
    Eigen::VectorXd pair_features(const PairEncoding &encoding) const override;
    Eigen::VectorXd text_features(std::span<const std::string> tokens) const override;

  private:
    std::size_t bucket(const std::string &token) const;
    std::size_t buckets_;
};

class StubBackend final : public ModelBackend {
  public:
    explicit StubBackend(std::size_t feature_buckets = 32);

    std::string name() const override { return "stub"; }
    std::shared_ptr<const Tokenizer> tokenizer() const override { return tokenizer_; }
    std::unique_ptr<ClassifierBackend> train_classifier(const LabeledTexts &data,
                                                        const TrainConfig &config) const override;
    std::unique_ptr<DifferentiableClassifier> make_differentiable(std::size_t n_heads) const override;
    std::unique_ptr<ClassifierBackend> load_classifier(const json &saved) const override;
    std::unique_ptr<DifferentiableClassifier> load_differentiable(const json &saved) const override;
    std::shared_ptr<const PairBackbone> pair_backbone() const override { return backbone_; }

  private:
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::shared_ptr<const PairBackbone> backbone_;
};

} // namespace fairpairs::stub
