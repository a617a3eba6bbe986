#include "fairpairs/llm_rewrite.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

std::string to_string(RewriteMode mode) {
    switch (mode) {
    case RewriteMode::zero_shot: return "zero_shot";
    case RewriteMode::edit: return "edit";
    case RewriteMode::postprocess_wr: return "postprocess_wr";
    }
    return "zero_shot";
}

RewriteMode rewrite_mode_from_string(std::string_view s) {
    if (s == "zero_shot") return RewriteMode::zero_shot;
    if (s == "edit") return RewriteMode::edit;
    if (s == "postprocess_wr" || s == "postprocess") return RewriteMode::postprocess_wr;
    throw FormatError(fmt::format("unknown rewrite mode '{}'", s));
}

std::string_view method_tag(RewriteMode mode) {
    switch (mode) {
    case RewriteMode::zero_shot: return method::gpt_zero_shot;
    case RewriteMode::edit: return method::gpt_edit;
    case RewriteMode::postprocess_wr: return method::gpt_postprocess;
    }
    return method::gpt_zero_shot;
}

void LlmConfig::validate() const {
    if (temperature < 0.0) throw PreconditionError("temperature must be non-negative");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw PreconditionError("top_p must lie in (0, 1]");
    if (max_tokens < 1) throw PreconditionError("max_tokens must be positive");
    if (!(requests_per_minute > 0.0)) throw PreconditionError("rate limit must be positive");
}

json LlmConfig::to_json() const {
    return {{"temperature", temperature},
            {"top_p", top_p},
            {"max_tokens", max_tokens},
            {"completion_model", completion_model},
            {"edit_model", edit_model},
            {"api_key_env", api_key_env},
            {"base_url", base_url},
            {"requests_per_minute", requests_per_minute},
            {"max_retries", max_retries}};
}

LlmConfig LlmConfig::from_json(const json &j) {
    LlmConfig c;
    for (const auto &[key, value] : j.items()) {
        if (key == "temperature") c.temperature = value.get<double>();
        else if (key == "top_p") c.top_p = value.get<double>();
        else if (key == "max_tokens") c.max_tokens = value.get<int>();
        else if (key == "completion_model") c.completion_model = value.get<std::string>();
        else if (key == "edit_model") c.edit_model = value.get<std::string>();
        else if (key == "api_key_env") c.api_key_env = value.get<std::string>();
        else if (key == "base_url") c.base_url = value.get<std::string>();
        else if (key == "requests_per_minute") c.requests_per_minute = value.get<double>();
        else if (key == "max_retries") c.max_retries = value.get<int>();
        else throw FormatError(fmt::format("llm config: unknown key '{}'", key));
    }
    c.validate();
    return c;
}

json LlmRequest::to_json() const {
    json j = {{"mode", to_string(mode)}, {"model", model}, {"temperature", temperature}, {"top_p", top_p}};
    if (mode == RewriteMode::zero_shot) {
        j["prompt"] = prompt;
    } else {
        j["input"] = input;
        j["instruction"] = instruction;
    }
    if (max_tokens) j["max_tokens"] = *max_tokens;
    return j;
}

std::string LlmRequest::hash() const { return text::sha256_hex(to_json().dump()); }

std::string rewrite_instruction(std::string_view source_name, std::string_view target_name) {
    return fmt::format("Rewrite the text to be about {} rather than {}", target_name, source_name);
}

LlmRequest build_request(RewriteMode mode, std::string_view s, std::string_view source_group,
                         std::string_view target_group, const Lexicon &lexicon, const LlmConfig &config,
                         const std::optional<std::string> &word_replacement_output) {
    const auto j = lexicon.display_name(source_group);
    const auto jp = lexicon.display_name(target_group);
    LlmRequest r;
    r.mode = mode;
    r.temperature = config.temperature;
    r.top_p = config.top_p;
    switch (mode) {
    case RewriteMode::zero_shot:
        r.model = config.completion_model;
        r.prompt = fmt::format("Please rewrite the following sentence to be about {} rather than {}:\n{}", jp, j, s);
        r.max_tokens = config.max_tokens;
        break;
    case RewriteMode::edit:
        r.model = config.edit_model;
        r.input = std::string(s);
        r.instruction = rewrite_instruction(j, jp);
        break;
    case RewriteMode::postprocess_wr:
        if (!word_replacement_output)
            throw PreconditionError("postprocessing needs a word-replacement output, and replacement found no marker");
        r.model = config.edit_model;
        r.input = *word_replacement_output;
        r.instruction = std::string(kPostprocessInstruction);
        break;
    }
    return r;
}

// ─── Clients ────────────────────────────────────────────────────────────────

ReplayLlmClient::ReplayLlmClient(const std::filesystem::path &fixtures) {
    for (const auto &row : text::read_jsonl(fixtures)) {
        try {
            responses_[row.at("hash").get<std::string>()] = row.at("response").get<std::string>();
        } catch (const json::exception &e) {
            throw FormatError(fmt::format("{}: {}", fixtures.string(), e.what()));
        }
    }
}

void ReplayLlmClient::add(const LlmRequest &request, std::string response) {
    responses_[request.hash()] = std::move(response);
}

std::string ReplayLlmClient::complete(const LlmRequest &request) {
    auto it = responses_.find(request.hash());
    if (it == responses_.end()) throw Error(fmt::format("no recorded response for request {}", request.hash()));
    return it->second;
}

RecordingLlmClient::RecordingLlmClient(std::shared_ptr<LlmClient> inner, std::filesystem::path log)
    : inner_(std::move(inner)), log_(std::move(log)) {}

std::string RecordingLlmClient::complete(const LlmRequest &request) {
    auto response = inner_->complete(request);
    json row = {{"hash", request.hash()}, {"request", request.to_json()}, {"response", response}};
    std::lock_guard lock(mutex_);
    std::ofstream out(log_, std::ios::app);
    if (!out) throw IoError(fmt::format("cannot append to {}", log_.string()));
    out << row.dump() << '\n';
    return response;
}

RateLimiter::RateLimiter(double per_minute)
    : interval_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(60.0 / per_minute))),
      next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mutex_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_);
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

HttpLlmClient::HttpLlmClient(LlmConfig config) : config_(std::move(config)), limiter_(config_.requests_per_minute) {
    config_.validate();
    const char *key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key)
        throw PreconditionError(fmt::format("environment variable {} is not set", config_.api_key_env));
    api_key_ = key;
}

std::string HttpLlmClient::complete(const LlmRequest &request) {
    json body = {{"model", request.model}, {"temperature", request.temperature}, {"top_p", request.top_p}};
    std::string path;
    if (request.mode == RewriteMode::zero_shot) {
        path = "/v1/completions";
        body["prompt"] = request.prompt;
        if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
    } else {
        path = "/v1/edits";
        body["input"] = request.input;
        body["instruction"] = request.instruction;
    }
    httplib::Client client(config_.base_url);
    client.set_bearer_token_auth(api_key_);
    client.set_read_timeout(60, 0);
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(std::chrono::seconds(1 << std::min(attempt, 5)));
        limiter_.acquire();
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = fmt::format("HTTP {}", res->status);
            continue;
        }
        if (res->status != 200) throw Error(fmt::format("HTTP {}: {}", res->status, res->body));
        try {
            auto reply = json::parse(res->body);
            auto out = reply.at("choices").at(0).at("text").get<std::string>();
            if (text::trim(out).empty()) throw Error("empty completion");
            return out;
        } catch (const json::exception &e) {
            throw FormatError(fmt::format("unexpected API reply: {}", e.what()));
        }
    }
    throw Error(fmt::format("request failed after {} retries: {}", config_.max_retries, last_error));
}

std::string normalize(std::string_view raw) {
    auto s = text::trim(raw);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = text::trim(s.substr(1, s.size() - 2));
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == ' ' && !out.empty() && out.back() == ' ') continue;
        out += c;
    }
    if (out.empty()) throw FormatError("completion is empty after normalization");
    return out;
}

LlmBudget LlmBudget::extended(RewriteMode mode) {
    switch (mode) {
    case RewriteMode::zero_shot: return {2250, 250};
    case RewriteMode::edit: return {750, 100};
    case RewriteMode::postprocess_wr: return {std::nullopt, 100};
    }
    return {};
}

std::vector<PairCandidate> generate_llm_candidates(const CommentStore &store, const std::set<std::string> &eligible,
                                                   const Lexicon &lexicon, LlmClient &client,
                                                   const GroupClassifier &gc, RewriteMode mode, Rng &rng,
                                                   const LlmConfig &config, const LlmBudget &budget,
                                                   double filter_threshold, FilterOrientation orientation,
                                                   LlmStats *stats) {
    config.validate();
    std::map<std::string, std::vector<const Comment *>> by_group;
    for (const auto &c : store) {
        if (!c.annotated()) continue;
        for (const auto &g : label(c).groups)
            if (eligible.count(g)) by_group[g].push_back(&c);
    }
    LlmStats st;
    std::vector<PairCandidate> out;
    auto pick = uniform_picker(rng);
    for (const auto &j : eligible) {
        for (const auto &jp : eligible) {
            if (j == jp) continue;
            auto sources = by_group[j];
            std::shuffle(sources.begin(), sources.end(), rng);
            std::size_t attempts = 0, successes = 0;
            for (const auto *c : sources) {
                if (budget.max_attempts && attempts >= *budget.max_attempts) break;
                if (budget.target_successes && successes >= *budget.target_successes) break;
                std::optional<std::string> wr;
                if (mode == RewriteMode::postprocess_wr) {
                    if (!lexicon.contains(j) || !lexicon.contains(jp)) break;
                    auto r = replace(c->text, j, jp, lexicon, pick);
                    if (!r) {
                        ++st.skipped;
                        continue;
                    }
                    wr = r->modified;
                }
                const auto request = build_request(mode, c->text, j, jp, lexicon, config, wr);
                std::string s_prime;
                try {
                    s_prime = normalize(client.complete(request));
                } catch (const Error &e) {
                    ++st.failed_requests;
                    spdlog::warn("llm request for comment {} ({} -> {}) failed: {}", c->id, j, jp, e.what());
                    continue;
                }
                ++attempts;
                ++st.attempts;
                if (s_prime == c->text) {
                    ++st.skipped;
                    continue;
                }
                json prov = {{"comment_id", c->id},
                             {"split", to_string(c->split)},
                             {"request_hash", request.hash()},
                             {"mode", to_string(mode)}};
                if (wr) prov["word_replacement"] = *wr;
                auto pair = PairCandidate::make(c->text, s_prime, std::string(method_tag(mode)), j, jp, std::move(prov));
                if (gc.has(j) && gc.has(jp)) {
                    const auto p = gc.backend->predict_one(s_prime);
                    const double ps = p.probs.at(gc.head(j)), pt = p.probs.at(gc.head(jp));
                    pair.filter_passed = transfer_success(pt, ps, filter_threshold, orientation);
                    pair.provenance["post_filter"] = {{"p_source", ps}, {"p_target", pt}, {"passed", pair.filter_passed}};
                }
                if (pair.filter_passed) {
                    ++successes;
                    ++st.successes;
                }
                out.push_back(std::move(pair));
            }
        }
    }
    spdlog::info("llm {}: {} attempts, {} successes, {} failed requests, {} skipped", to_string(mode), st.attempts,
                 st.successes, st.failed_requests, st.skipped);
    if (stats) *stats = st;
    return out;
}

} // namespace fairpairs
