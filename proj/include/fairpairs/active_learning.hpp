#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fairpairs/pair.hpp"
#include "fairpairs/similarity.hpp"

namespace fairpairs {

enum class Acquisition { random, lc, lc_unc, bald, varra, majority };

std::string to_string(Acquisition a);
Acquisition acquisition_from_string(std::string_view s);

struct AcquisitionConfig {
    Acquisition criterion = Acquisition::lc;
    std::size_t n_masks = 50;
};

// 1 - max(p, 1 - p)
double variation_ratio(double p);
// Binary entropy in nats; 0 at p in {0, 1}.
double binary_entropy(double p);

// Score from the dropout-off probability and the per-mask probabilities.
// RANDOM is not covered here.
double score_from_samples(Acquisition criterion, double p_off, std::span<const double> mask_probs, double threshold);

double acquisition_score(const AcquisitionConfig &config, const SimilarityModel &model, const PairCandidate &pair,
                         const FeatureCache *cache, std::uint64_t seed);

// Scores for every pair. The masks are shared across pairs.
std::map<std::string, double> score_pool(const AcquisitionConfig &config, const SimilarityModel &model,
                                         const std::vector<PairCandidate> &pairs, const FeatureCache *cache,
                                         std::uint64_t seed);

// Top-k by score, ties by id. `short_batch` is set when fewer than k remain.
std::vector<std::string> select_batch(const std::map<std::string, double> &scores,
                                      const std::set<std::string> &already_labeled, std::size_t k,
                                      bool allow_relabel = false, bool *short_batch = nullptr);

// Majority value; 0.5 on an exact tie. Throws on an empty list.
double aggregate(std::span<const int> votes);

class LabelStore {
  public:
    void add_vote(const std::string &id, int vote);
    void add_votes(const std::string &id, std::span<const int> votes);
    bool contains(const std::string &id) const { return votes_.count(id) > 0; }
    const std::vector<int> &votes(const std::string &id) const;
    double aggregated(const std::string &id) const;
    std::map<std::string, double> aggregated_all() const;
    std::set<std::string> ids() const;
    std::size_t size() const { return votes_.size(); }

    // {"id", "votes", "label"} per line, sorted by id.
    std::string to_jsonl() const;
    static LabelStore from_jsonl_text(std::string_view text);
    void save(const std::filesystem::path &path) const;
    static LabelStore load(const std::filesystem::path &path);

  private:
    std::map<std::string, std::vector<int>> votes_;
};

// Group -> axis category for the axis oracle.
std::map<std::string, std::string> default_axis_map();

struct SyntheticOracle {
    enum class Kind { phi1_method, phi2_axis };
    Kind kind = Kind::phi1_method;
    std::map<std::string, std::string> axis = default_axis_map();

    // phi1: 0 iff the pair came from word replacement.
    // phi2: 0 iff both groups share an axis category. Unknown groups throw.
    int label(const PairCandidate &pair) const;
};

struct NoiseModel {
    double flip_probability = 0.0;
    std::size_t votes_per_pair = 1;
    void validate() const; // p in [0, 0.5), votes >= 1
};

int noisy_oracle_vote(const SyntheticOracle &oracle, const PairCandidate &pair, const NoiseModel &noise, Rng &rng);

// P(majority of n i.i.d. flips is wrong), n odd.
double majority_flip_probability(double p, std::size_t n);
// Fraction of `trials` simulated n-vote majorities that come out flipped.
double simulate_majority_flip_rate(double p, std::size_t n, std::size_t trials, Rng &rng);

// Top-k by LC among pairs aggregated to 0 that the model also classifies 0.
std::vector<std::string> relabel_candidates(const SimilarityModel &model, const LabelStore &store,
                                            const std::vector<PairCandidate> &pairs, const FeatureCache *cache,
                                            std::size_t k = 500, bool *short_list = nullptr);

class LabelSource {
  public:
    virtual ~LabelSource() = default;
    // One entry per pair; nullopt marks a failed query.
    virtual std::vector<std::optional<std::vector<int>>> query(const std::vector<const PairCandidate *> &batch) = 0;
};

class OracleLabelSource final : public LabelSource {
  public:
    OracleLabelSource(SyntheticOracle oracle, NoiseModel noise, std::uint64_t seed);
    std::vector<std::optional<std::vector<int>>> query(const std::vector<const PairCandidate *> &batch) override;

  private:
    SyntheticOracle oracle_;
    NoiseModel noise_;
    Rng rng_;
};

// Serves votes from an exported label store; pairs it lacks count as failed.
class StoredLabelSource final : public LabelSource {
  public:
    explicit StoredLabelSource(LabelStore store) : store_(std::move(store)) {}
    std::vector<std::optional<std::vector<int>>> query(const std::vector<const PairCandidate *> &batch) override;

  private:
    LabelStore store_;
};

// per_round trains on each D_i only. The other regimes run the same loop and
// then refit: retrain adds one epoch on the union, from_scratch fits a fresh
// head on the union for the per-round epoch count. *_reweigh balance labels.
enum class Regime { per_round, retrain, retrain_reweigh, from_scratch, from_scratch_reweigh };

std::string to_string(Regime r);
Regime regime_from_string(std::string_view s);

struct LoopConfig {
    std::size_t rounds = 6; // round 0 is the random seed batch
    std::size_t batch = 1000;
    AcquisitionConfig acquisition;
    Regime regime = Regime::per_round;
    SimilarityTrainConfig train;
    bool allow_relabel = false;
    std::uint64_t seed = 0;
};

struct HeldOut {
    std::vector<PairCandidate> pairs;
    std::vector<int> labels;
};

struct RoundMetrics {
    std::size_t round = 0;
    std::string criterion;
    std::size_t queried = 0;
    std::size_t failed = 0;
    std::size_t labeled = 0; // cumulative
    std::optional<double> balanced_accuracy;
};

struct LoopResult {
    LabelStore labels;
    std::vector<RoundMetrics> rounds;
    std::optional<double> final_balanced_accuracy;
};

std::string round_metrics_csv(const std::vector<RoundMetrics> &rounds);

// Balanced accuracy of classify() on the held-out pairs, in percent.
double held_out_balanced_accuracy(const SimilarityModel &model, const HeldOut &held_out,
                                  const FeatureCache *cache = nullptr);

LoopResult run_loop(SimilarityModel &model, const std::vector<PairCandidate> &pool, LabelSource &source,
                    const LoopConfig &config, const FeatureCache *cache = nullptr, const HeldOut *held_out = nullptr);

} // namespace fairpairs
