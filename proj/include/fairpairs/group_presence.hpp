#pragma once

#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/corpus.hpp"
#include "fairpairs/model_backend.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

// Multi-head group-presence classifier: one sigmoid head per group.
struct GroupClassifier {
    std::shared_ptr<const ClassifierBackend> backend;
    std::vector<std::string> groups;
    std::map<std::string, double> eval_report; // group -> balanced accuracy, percent

    bool has(std::string_view group) const;
    std::size_t head(std::string_view group) const; // throws PreconditionError
    std::vector<double> probabilities(std::span<const std::string> texts, std::string_view group) const;
    std::vector<double> logits(std::span<const std::string> texts, std::string_view group) const;
    double probability(const std::string &text, std::string_view group) const;

    json save() const;
    static GroupClassifier load(const json &saved, const ModelBackend &backend);
    // "group,balanced_accuracy" rows in head order.
    std::string eval_table_csv() const;
};

// Trains on the annotated comments of `train`; one head per group that has
// both labels there. Balanced accuracy per head is measured on `eval`.
GroupClassifier train_group_classifier(const CommentStore &train, const CommentStore &eval,
                                       const ModelBackend &backend,
                                       const TrainConfig &config = TrainConfig::group_classifier());

struct EligibilityPolicy {
    double ba_threshold = 90.0;
    std::set<std::string> exclusions = {"mental illness"}; // compared case-insensitively

    void validate() const;
};

// {j : BA(j) > threshold} minus exclusions.
std::set<std::string> eligible_groups(const std::map<std::string, double> &eval_report,
                                      const EligibilityPolicy &policy = {});
std::set<std::string> eligible_groups(const GroupClassifier &gc, const EligibilityPolicy &policy = {});

// intent: target present (> t) and source absent (< t).
// literal: the inverted inequalities, as worded in the original post-filter description.
enum class FilterOrientation { intent, literal };

bool transfer_success(double p_target, double p_source, double p_threshold = 0.5,
                      FilterOrientation orientation = FilterOrientation::intent);
bool transfer_success(const GroupClassifier &gc, const std::string &s_prime, std::string_view source_group,
                      std::string_view target_group, double p_threshold = 0.5,
                      FilterOrientation orientation = FilterOrientation::intent);

// Sets filter_passed on each candidate and records both probabilities in its
// provenance. Candidates naming a group without a head fail the filter.
void apply_post_filter(std::vector<PairCandidate> &candidates, const GroupClassifier &gc,
                       double p_threshold = 0.5, FilterOrientation orientation = FilterOrientation::intent);

} // namespace fairpairs
