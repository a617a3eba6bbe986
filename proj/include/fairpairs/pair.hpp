#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/common.hpp"

namespace fairpairs {

namespace method {
inline constexpr std::string_view word_replacement = "word_replacement";
inline constexpr std::string_view word_replacement_50 = "word_replacement_50";
inline constexpr std::string_view style_transfer = "style_transfer";
inline constexpr std::string_view gpt_zero_shot = "gpt_zero_shot";
inline constexpr std::string_view gpt_edit = "gpt_edit";
inline constexpr std::string_view gpt_postprocess = "gpt_postprocess";
inline constexpr std::string_view adverse = "adverse";
} // namespace method

// Content hash of (s, s', method); stable across re-serialization.
std::string pair_id(std::string_view s, std::string_view s_prime, std::string_view method);

// A candidate fairness constraint (s, s').
struct PairCandidate {
    std::string id;
    std::string s;
    std::string s_prime;
    std::string method;
    std::string source_group;
    std::string target_group;
    bool filter_passed = false;
    json provenance = json::object();

    // Throws PreconditionError when s == s' unless degenerate pairs are allowed.
    static PairCandidate make(std::string s, std::string s_prime, std::string method, std::string source_group,
                              std::string target_group, json provenance = json::object(),
                              bool allow_degenerate = false);

    json to_json() const;
    static PairCandidate from_json(const json &j);
    bool operator==(const PairCandidate &) const = default;
};

std::vector<PairCandidate> read_pairs(const std::filesystem::path &path);
// Canonical form: sorted by id, one compact JSON object per line.
std::string pairs_to_jsonl(std::vector<PairCandidate> pairs);
void write_pairs(const std::filesystem::path &path, std::vector<PairCandidate> pairs);

} // namespace fairpairs
