#pragma once

// Downstream toxicity classifiers trained with counterfactual logit pairing:
// each batch member s is paired with a partner s' from the constraint pool and
// lambda * ||l(s) - l(s')|| is added to the loss.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fairpairs/corpus.hpp"
#include "fairpairs/lexicon.hpp"
#include "fairpairs/model_backend.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

// lambda * ||a - b||_2. Throws on a length mismatch.
double clp_penalty(std::span<const double> a, std::span<const double> b, double lambda);
// Gradient with respect to a (the gradient for b is its negation); zero when a == b.
std::vector<double> clp_penalty_gradient(std::span<const double> a, std::span<const double> b, double lambda);

// Which pairs count as constraints at training time.
// constraint: p <= t, i.e. the similarity model judged phi = 0.
// literal: p > t.
enum class PartnerOrientation { constraint, literal };

std::string to_string(PartnerOrientation o);
PartnerOrientation partner_orientation_from_string(std::string_view s);

struct ClpConfig {
    double lambda = 5.0;
    double threshold = 0.5;
    PartnerOrientation orientation = PartnerOrientation::constraint;
    int epochs = 3;
    std::size_t batch_size = 32;
    double learning_rate = 1e-5;
    bool reweight = true;
    std::uint64_t seed = 0;

    static ClpConfig reference(double lambda = 5.0) { return {lambda, 0.5, PartnerOrientation::constraint, 3, 32, 1e-5, true, 0}; }
    void validate() const;
    json to_json() const;
};

// s -> candidate partners (s', p) drawn from pool pairs whose first element is s.
class PartnerIndex {
  public:
    struct Entry {
        std::string s_prime;
        double p = 0.0;
    };

    PartnerIndex() = default;
    // Throws PreconditionError when a pair lacks a prediction.
    PartnerIndex(const std::vector<PairCandidate> &pairs, const std::map<std::string, double> &predictions);

    const std::vector<Entry> &candidates(const std::string &s) const;
    std::size_t size() const { return by_source_.size(); }

  private:
    std::map<std::string, std::vector<Entry>> by_source_;
};

// Uniform choice among the eligible partners of s; s itself when none qualify.
std::string select_clp_pair(const std::string &s, const PartnerIndex &index, double threshold,
                            PartnerOrientation orientation, Rng &rng);

struct ClpTrace {
    std::vector<double> epoch_loss;    // classification loss + penalty, mean per batch
    std::vector<double> epoch_penalty; // penalty part
    std::size_t paired = 0;            // batch members that drew a partner other than themselves
    std::size_t self_paired = 0;
};

// Single-head classifier trained on toxicity labels of `train`. An empty index
// (or lambda = 0) gives plain reweighted training with the same batch order.
std::unique_ptr<DifferentiableClassifier> train_clp(const CommentStore &train, const PartnerIndex &partners,
                                                    const ModelBackend &backend, const ClpConfig &config,
                                                    ClpTrace *trace = nullptr);

std::unique_ptr<DifferentiableClassifier> train_baseline(const CommentStore &train, const ModelBackend &backend,
                                                         ClpConfig config, ClpTrace *trace = nullptr);

// Head layout of the reference downstream classifier, stored with saved models.
json downstream_head_spec();

inline constexpr std::string_view kCensorPlaceholder = "[GROUP]";

// Replaces every listed term of the named groups with the placeholder.
std::string censor(std::string_view s, const Lexicon &lexicon, const std::set<std::string> &groups);
CommentStore censor_store(const CommentStore &store, const Lexicon &lexicon, const std::set<std::string> &groups);

} // namespace fairpairs
