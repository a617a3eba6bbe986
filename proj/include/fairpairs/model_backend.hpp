#pragma once

// Pluggable model interfaces. Every learned component of the pipeline (group
// classifier, infill generator, similarity backbone, downstream classifier)
// is reached through these types, so the pipeline runs unchanged against the
// deterministic stub backend or a real one.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "fairpairs/common.hpp"

namespace fairpairs {

class Tokenizer {
  public:
    virtual ~Tokenizer() = default;
    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const std::string> tokens) const;
};

class WhitespaceTokenizer final : public Tokenizer {
  public:
    std::vector<std::string> tokenize(std::string_view text) const override;
};

// ─── Classifier ─────────────────────────────────────────────────────────────

struct Capabilities {
    std::size_t n_heads = 1;
    bool provides_attention = false;
    bool provides_features = false;
    bool provides_logits = false;
    bool dropout_controllable = false;
};

struct PredictOptions {
    bool want_logits = false;
    bool want_attention = false;
    bool want_features = false;
    std::optional<std::uint64_t> dropout_seed;
};

struct Prediction {
    std::vector<double> probs; // one per head
    std::optional<std::vector<double>> logits;
    std::optional<std::vector<double>> attention; // one scalar per token position
    std::optional<std::vector<double>> features;
};

struct TrainConfig {
    int epochs = 3;
    std::size_t batch_size = 16;
    double learning_rate = 1e-5;
    bool reweight = true; // balance loss by relative label frequency

    static TrainConfig group_classifier() { return {3, 16, 1e-5, true}; }
    static TrainConfig downstream() { return {3, 32, 1e-5, true}; }
};

// labels[h][i] is the label of texts[i] for head h: 0, 1, or -1 for missing.
struct LabeledTexts {
    std::vector<std::string> texts;
    std::vector<std::vector<int>> labels;
};

class ClassifierBackend {
  public:
    virtual ~ClassifierBackend() = default;

    virtual Capabilities capabilities() const = 0;
    virtual const Tokenizer &tokenizer() const = 0;
    virtual json save() const = 0;

    // Checks the request against capabilities() before delegating.
    std::vector<Prediction> predict(std::span<const std::string> texts,
                                    const PredictOptions &options = {}) const;
    Prediction predict_one(const std::string &text, const PredictOptions &options = {}) const;

    // Attention layer used for the per-token reduction; negative counts from
    // the top, so -2 is the penultimate layer.
    int attention_layer = -2;

  protected:
    virtual std::vector<Prediction> do_predict(std::span<const std::string> texts,
                                               const PredictOptions &options) const = 0;
};

// A classifier whose parameters can be updated from upstream gradients on its
// pre-sigmoid logits. Used by training loops that add terms to the loss
// (counterfactual logit pairing) outside the backend.
class DifferentiableClassifier : public ClassifierBackend {
  public:
    virtual std::vector<double> logits(std::span<const std::string> texts,
                                       std::size_t head = 0) const = 0;
    // dlogits[i] is dLoss/dlogit(texts[i]); texts may repeat.
    virtual void apply_gradients(std::span<const std::string> texts,
                                 std::span<const double> dlogits, double learning_rate,
                                 std::size_t head = 0) = 0;
};

// ─── Infilling ──────────────────────────────────────────────────────────────

struct MaskSpan {
    std::size_t begin = 0; // token positions in the source, half-open
    std::size_t end = 0;
    bool operator==(const MaskSpan &) const = default;
};

// A sentence with some tokens masked. Consecutive masked positions collapse
// into one sentinel token.
struct MaskTemplate {
    std::vector<std::string> tokens;
    std::vector<MaskSpan> mask_spans;
    std::string source;
    std::string mask_token = "<mask>";
    bool valid = true;
    std::string warning;

    std::string text() const;
    std::size_t mask_count() const { return mask_spans.size(); }
};

MaskTemplate build_template(std::string source, std::span<const std::string> source_tokens,
                            const std::vector<bool> &masked, std::string mask_token = "<mask>");

// Text with individual positions replaced by the sentinel, no merging.
std::string mask_positions(std::span<const std::string> tokens, const std::vector<bool> &masked,
                           std::string_view mask_token);

struct Completion {
    std::string text;
    double score = 0.0;
};

class InfillBackend {
  public:
    virtual ~InfillBackend() = default;
    virtual std::size_t max_beam() const = 0;

    // Condition is prepended verbatim to the template text as the generator
    // prompt; it is never echoed in the returned completions.
    std::vector<Completion> fill(const MaskTemplate &tmpl, std::string_view condition,
                                 std::size_t beam_width) const;

    static std::string prompt(const MaskTemplate &tmpl, std::string_view condition);

  protected:
    virtual std::vector<Completion> do_fill(const MaskTemplate &tmpl, std::string_view condition,
                                            std::size_t beam_width) const = 0;
};

// ─── Pair backbone ──────────────────────────────────────────────────────────

inline constexpr std::string_view kPadToken = "[PAD]";

// Two texts tokenized and right-padded to kSideLength each, concatenated.
struct PairEncoding {
    static constexpr std::size_t kSideLength = 64;
    std::vector<std::string> tokens;
    std::size_t first_length = 0;
    std::size_t second_length = 0;

    std::span<const std::string> first() const {
        return std::span<const std::string>(tokens).first(first_length);
    }
    std::span<const std::string> second() const {
        return std::span<const std::string>(tokens).subspan(kSideLength, second_length);
    }
};

class PairBackbone {
  public:
    virtual ~PairBackbone() = default;
    virtual std::size_t dim() const = 0;
    virtual Eigen::VectorXd pair_features(const PairEncoding &encoding) const = 0;
    virtual Eigen::VectorXd text_features(std::span<const std::string> tokens) const = 0;
};

// ─── Backend factory ────────────────────────────────────────────────────────

class ModelBackend {
  public:
    virtual ~ModelBackend() = default;
    virtual std::string name() const = 0;
    virtual std::shared_ptr<const Tokenizer> tokenizer() const = 0;

    // Throws PreconditionError when a head lacks a positive or a negative.
    virtual std::unique_ptr<ClassifierBackend> train_classifier(const LabeledTexts &data,
                                                                const TrainConfig &config) const = 0;
    virtual std::unique_ptr<DifferentiableClassifier>
    make_differentiable(std::size_t n_heads) const = 0;
    virtual std::unique_ptr<ClassifierBackend> load_classifier(const json &saved) const = 0;
    virtual std::unique_ptr<DifferentiableClassifier>
    load_differentiable(const json &saved) const = 0;
    virtual std::shared_ptr<const PairBackbone> pair_backbone() const = 0;
};

// Known names: "stub".
std::unique_ptr<ModelBackend> make_backend(std::string_view name, const json &options = json::object());

double sigmoid(double x);

} // namespace fairpairs
