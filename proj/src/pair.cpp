#include "fairpairs/pair.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

std::string pair_id(std::string_view s, std::string_view s_prime, std::string_view method) {
    // Unit separators keep ("ab","c") and ("a","bc") apart.
    const auto digest = text::sha256_hex(fmt::format("{}\x1f{}\x1f{}", s, s_prime, method));
    return digest.substr(0, 24);
}

PairCandidate PairCandidate::make(std::string s, std::string s_prime, std::string method, std::string source_group,
                                  std::string target_group, json provenance, bool allow_degenerate) {
    if (s == s_prime && !allow_degenerate)
        throw PreconditionError("pair members are identical");
    PairCandidate p;
    p.id = pair_id(s, s_prime, method);
    p.s = std::move(s);
    p.s_prime = std::move(s_prime);
    p.method = std::move(method);
    p.source_group = std::move(source_group);
    p.target_group = std::move(target_group);
    p.provenance = std::move(provenance);
    return p;
}

json PairCandidate::to_json() const {
    return {{"id", id},
            {"s", s},
            {"s_prime", s_prime},
            {"method", method},
            {"source_group", source_group},
            {"target_group", target_group},
            {"filter_passed", filter_passed},
            {"provenance", provenance}};
}

PairCandidate PairCandidate::from_json(const json &j) {
    PairCandidate p;
    try {
        p.s = j.at("s").get<std::string>();
        p.s_prime = j.at("s_prime").get<std::string>();
        p.method = j.at("method").get<std::string>();
        p.source_group = j.value("source_group", "");
        p.target_group = j.value("target_group", "");
        p.filter_passed = j.value("filter_passed", false);
        p.provenance = j.value("provenance", json::object());
        p.id = pair_id(p.s, p.s_prime, p.method);
        if (j.contains("id") && j.at("id").get<std::string>() != p.id)
            throw FormatError(fmt::format("pair id {} does not match its content hash {}", j.at("id").get<std::string>(), p.id));
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("pair record: {}", e.what()));
    }
    return p;
}

std::vector<PairCandidate> read_pairs(const std::filesystem::path &path) {
    std::vector<PairCandidate> out;
    for (const auto &row : text::read_jsonl(path)) out.push_back(PairCandidate::from_json(row));
    return out;
}

std::string pairs_to_jsonl(std::vector<PairCandidate> pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const auto &a, const auto &b) { return a.id < b.id; });
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto &p : pairs) rows.push_back(p.to_json());
    return text::to_jsonl(rows);
}

void write_pairs(const std::filesystem::path &path, std::vector<PairCandidate> pairs) {
    text::write_file(path, pairs_to_jsonl(std::move(pairs)));
}

} // namespace fairpairs
