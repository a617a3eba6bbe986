#pragma once

// Rewriting sentences with an external text-generation API. CI only ever
// talks to ReplayLlmClient; HttpLlmClient is for real campaigns.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/corpus.hpp"
#include "fairpairs/group_presence.hpp"
#include "fairpairs/lexicon.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

enum class RewriteMode { zero_shot, edit, postprocess_wr };

std::string to_string(RewriteMode mode);
RewriteMode rewrite_mode_from_string(std::string_view s);
// gpt_zero_shot, gpt_edit or gpt_postprocess.
std::string_view method_tag(RewriteMode mode);

struct LlmConfig {
    double temperature = 0.7;
    double top_p = 1.0;
    int max_tokens = 64; // zero_shot only
    std::string completion_model = "text-davinci-001";
    std::string edit_model = "text-davinci-edit-001";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string base_url = "https://api.openai.com";
    double requests_per_minute = 60.0;
    int max_retries = 3;

    void validate() const;
    json to_json() const;
    static LlmConfig from_json(const json &j);
};

struct LlmRequest {
    RewriteMode mode = RewriteMode::zero_shot;
    std::string model;
    std::string prompt;      // zero_shot
    std::string input;       // edit, postprocess_wr
    std::string instruction; // edit, postprocess_wr
    double temperature = 0.7;
    double top_p = 1.0;
    std::optional<int> max_tokens;

    json to_json() const; // canonical; keys sorted
    // sha256 of the canonical JSON; the replay key.
    std::string hash() const;
};

std::string rewrite_instruction(std::string_view source_name, std::string_view target_name);
inline constexpr std::string_view kPostprocessInstruction = "Fix grammatical errors and logical inconsistencies";

// Display names for j and j' come from the lexicon. postprocess_wr needs the
// word-replacement output and throws PreconditionError without it.
LlmRequest build_request(RewriteMode mode, std::string_view s, std::string_view source_group,
                         std::string_view target_group, const Lexicon &lexicon, const LlmConfig &config = {},
                         const std::optional<std::string> &word_replacement_output = std::nullopt);

class LlmClient {
  public:
    virtual ~LlmClient() = default;
    // Raw model output. Throws Error on transport failure or an empty completion.
    virtual std::string complete(const LlmRequest &request) = 0;
};

// Serves recorded responses; unknown requests throw.
class ReplayLlmClient final : public LlmClient {
  public:
    explicit ReplayLlmClient(const std::filesystem::path &fixtures);
    ReplayLlmClient() = default;
    void add(const LlmRequest &request, std::string response);
    std::string complete(const LlmRequest &request) override;
    std::size_t size() const { return responses_.size(); }

  private:
    std::map<std::string, std::string> responses_;
};

// Forwards to another client and appends {hash, request, response} lines.
class RecordingLlmClient final : public LlmClient {
  public:
    RecordingLlmClient(std::shared_ptr<LlmClient> inner, std::filesystem::path log);
    std::string complete(const LlmRequest &request) override;

  private:
    std::shared_ptr<LlmClient> inner_;
    std::filesystem::path log_;
    std::mutex mutex_;
};

// Token bucket: one token per request, refilled at rate/minute, capacity 1.
class RateLimiter {
  public:
    explicit RateLimiter(double per_minute);
    void acquire();

  private:
    std::mutex mutex_;
    std::chrono::steady_clock::duration interval_;
    std::chrono::steady_clock::time_point next_;
};

// /v1/completions and /v1/edits over HTTPS.
class HttpLlmClient final : public LlmClient {
  public:
    explicit HttpLlmClient(LlmConfig config);
    std::string complete(const LlmRequest &request) override;

  private:
    LlmConfig config_;
    std::string api_key_;
    RateLimiter limiter_;
};

// Trims, drops one pair of wrapping double quotes, collapses runs of spaces.
// Throws FormatError if nothing is left.
std::string normalize(std::string_view raw);

// Limits per ordered group pair (j, j'). Unset fields mean no limit; the
// source sentences for a pair are drawn without replacement, so every run ends.
struct LlmBudget {
    std::optional<std::size_t> max_attempts = 75;
    std::optional<std::size_t> target_successes;

    // Caps used for the extended per-axis runs: zero_shot 2250/250,
    // edit 750/100, postprocess_wr -/100.
    static LlmBudget extended(RewriteMode mode);
};

struct LlmStats {
    std::size_t attempts = 0;  // completed responses
    std::size_t successes = 0; // passed the post-filter
    std::size_t failed_requests = 0;
    std::size_t skipped = 0; // no word-replacement hit, or output equal to input
};

// For every ordered pair of eligible groups, rewrites randomly ordered source
// sentences mentioning j until the budget is spent. Returns every generated
// pair with its filter verdict.
std::vector<PairCandidate> generate_llm_candidates(const CommentStore &store, const std::set<std::string> &eligible,
                                                   const Lexicon &lexicon, LlmClient &client,
                                                   const GroupClassifier &gc, RewriteMode mode, Rng &rng,
                                                   const LlmConfig &config = {},
                                                   const LlmBudget &budget = {},
                                                   double filter_threshold = 0.5,
                                                   FilterOrientation orientation = FilterOrientation::intent,
                                                   LlmStats *stats = nullptr);

} // namespace fairpairs
