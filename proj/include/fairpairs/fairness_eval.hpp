#pragma once

// Evaluation metrics. All rates are reported in percent.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairpairs/common.hpp"
#include "fairpairs/corpus.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs::eval {

// Maps a batch of texts to binary predictions.
using BatchClassifier = std::function<std::vector<int>(std::span<const std::string>)>;

struct Rates {
    double tpr = 0.0;
    double tnr = 0.0;
    double acc = 0.0;
};

Rates confusion_rates(std::span<const int> preds, std::span<const int> labels);
// (TPR + TNR) / 2; throws PreconditionError unless both classes occur in labels.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels);

// 100 * |{i : a[i] == b[i]}| / n; throws on an empty pool.
double individual_fairness(std::span<const int> preds_s, std::span<const int> preds_s_prime);
double individual_fairness(const BatchClassifier &f, const std::vector<PairCandidate> &pairs);

// Mean and max of |v_a - v_b| over unordered pairs a < b.
std::pair<double, double> pairwise_gaps(std::span<const double> values);

struct GapReport {
    double tpr_mean = 0.0;
    double tpr_max = 0.0;
    double tnr_mean = 0.0;
    double tnr_max = 0.0;
    std::map<std::string, Rates> per_group;
    std::vector<std::string> dropped; // single-class restrictions
    json to_json() const;
};

// Per-group TPR/TNR on {s : y_j(s) = 1}, then pairwise gaps across groups.
GapReport eo_gaps(const BatchClassifier &f, const CommentStore &test, const std::set<std::string> &groups);

struct NamedClassifier {
    std::string name;
    BatchClassifier predict;
    std::optional<std::string> trained_on; // pool name, for the diagonal check
};

struct NamedPool {
    std::string name;
    std::vector<PairCandidate> pairs;
};

struct CrossEvalReport {
    std::vector<std::string> classifiers;
    std::vector<std::string> pools;
    std::vector<std::optional<std::string>> trained_on;
    std::vector<std::vector<double>> fairness; // [classifier][pool]
    std::vector<double> balanced_accuracy;

    // Each classifier scores highest on the pool it was trained with.
    bool diagonal_dominant() const;
    std::string render_table() const;
    std::string to_csv() const;
    json to_json() const;
};

CrossEvalReport cross_eval(const std::vector<NamedClassifier> &classifiers, const std::vector<NamedPool> &pools,
                           const CommentStore &test);

// ─── Lipschitz / binary-similarity equivalence ─────────────────────────────

struct FiniteMetricSpace {
    std::vector<std::vector<double>> d; // symmetric, zero diagonal, non-negative
    double lipschitz_constant = 1.0;

    std::size_t size() const { return d.size(); }
    void validate() const;
};

struct LipschitzCheck {
    bool lipschitz = true;
    bool constraint_satisfied = true;
    std::optional<std::pair<std::size_t, std::size_t>> witness;
};

// phi(x, x') = 1{L d(x, x') >= 1}, d_b the discrete metric on labels.
int similarity_indicator(const FiniteMetricSpace &space, std::size_t a, std::size_t b);
LipschitzCheck lipschitz_equivalence_check(const FiniteMetricSpace &space, std::span<const int> f);

// Naive normal 95% interval: mean ± 1.96 s / sqrt(n).
struct Interval {
    double mean = 0.0;
    double half_width = 0.0;
};
Interval mean_ci(std::span<const double> values);

// One decimal place.
std::string format_percent(double value);

} // namespace fairpairs::eval
