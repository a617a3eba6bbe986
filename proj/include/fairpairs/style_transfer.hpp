#pragma once

// Prototype-editing transfer of group mentions: mask the tokens that carry the
// source group, then infill conditioned on the target group and keep the beam
// candidate the group classifier rates as most shifted toward the target.

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fairpairs/corpus.hpp"
#include "fairpairs/group_presence.hpp"
#include "fairpairs/model_backend.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

enum class Selection { logit_diff, prob_diff };

struct StyleTransferConfig {
    double mask_threshold = 0.25;
    std::size_t beam_width = 5;
    std::optional<std::size_t> max_mask_iterations; // default: sentence length
    Selection selection = Selection::logit_diff;
    std::string mask_token = "<mask>";
    double filter_threshold = 0.5;
    FilterOrientation filter_orientation = FilterOrientation::intent;

    void validate() const;
};

// Masks every position whose attention score is at least the sentence mean.
MaskTemplate make_training_template(std::string_view s, const GroupClassifier &gc,
                                    std::string mask_token = "<mask>");

struct MaskStep {
    std::size_t position = 0;
    double probability = 0.0; // p(source | sentence) after masking this position
};

struct InferenceTemplate {
    MaskTemplate tmpl;
    double initial_probability = 0.0;
    std::vector<MaskStep> steps;
};

// Greedily masks the single token whose masking lowers p(source | ·) the
// most (lowest index on ties) until it drops below the threshold. When the
// start is already below threshold, or the loop runs out of tokens or
// iterations first, the template comes back with valid = false.
InferenceTemplate make_inference_template(std::string_view s, std::string_view source_group,
                                          const GroupClassifier &gc, const StyleTransferConfig &config = {});

struct ScoredCandidate {
    std::string text;
    double score = 0.0;
};

struct Transfer {
    std::string text;
    double score = 0.0;
    std::vector<ScoredCandidate> beam;
};

// Score is l(target) - l(source) under logit_diff, p(target) - p(source) under
// prob_diff. Throws Error on an empty beam.
Transfer generate_transfer(const MaskTemplate &tmpl, std::string_view source_group, std::string_view target_group,
                           const InfillBackend &generator, const GroupClassifier &gc,
                           const StyleTransferConfig &config = {});

struct TransferOutcome {
    std::optional<PairCandidate> pair; // present once generation succeeded
    std::string stage;                 // "accepted", "template", "generate" or "post_filter"
    std::string detail;

    bool accepted() const { return stage == "accepted"; }
};

TransferOutcome transfer_pair(const std::string &s, std::string_view source_group, std::string_view target_group,
                              const InfillBackend &generator, const GroupClassifier &gc,
                              const StyleTransferConfig &config = {}, json provenance = json::object());

// One training template per annotated comment that mentions a group with a
// classifier head, the condition drawn uniformly among those groups.
std::vector<std::pair<MaskTemplate, std::string>> infill_training_examples(const CommentStore &store,
                                                                           const GroupClassifier &gc, Rng &rng,
                                                                           std::string mask_token = "<mask>");

struct StyleTransferStats {
    std::size_t attempted = 0;
    std::size_t accepted = 0;
    std::size_t rejected_template = 0;
    std::size_t rejected_generate = 0;
    std::size_t rejected_post_filter = 0;
};

// Every (comment, source in groups(s) ∩ eligible, target in eligible \ {source}).
// Returns generated pairs, including those that failed the post-filter.
std::vector<PairCandidate> enumerate_st_candidates(const CommentStore &store, const std::set<std::string> &eligible,
                                                   const InfillBackend &generator, const GroupClassifier &gc,
                                                   const StyleTransferConfig &config = {},
                                                   StyleTransferStats *stats = nullptr);

} // namespace fairpairs
