#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairpairs/corpus.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

// A named, immutable set of candidate constraints. Members are kept sorted by
// id; composition counts members per source ("wr", "st", "llm", ...).
struct ConstraintPool {
    std::string name;
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::vector<PairCandidate> members;
    std::map<std::string, std::string> source_of; // pair id -> source
    std::map<std::string, std::size_t> composition;
    json notes = json::object(); // e.g. retention after filtering

    std::size_t size() const { return members.size(); }
    const PairCandidate *find(const std::string &id) const;
    void validate() const; // unique ids, composition consistent

    json manifest() const;
    std::string manifest_text() const; // pretty JSON, byte-stable

    // <dir>/<name>.pairs.jsonl and <dir>/<name>.manifest.json
    void save(const std::filesystem::path &dir) const;
    static ConstraintPool load(const std::filesystem::path &dir, const std::string &name);
};

struct PoolSource {
    std::string name;
    std::vector<PairCandidate> candidates;
    std::size_t size = 0;
};

struct AssembleReport {
    std::map<std::string, std::size_t> duplicates_skipped;
};

// Uniform sample without replacement of `size` filter-passed candidates per
// source. Ids already taken by an earlier source are skipped and counted.
// Throws PreconditionError("shortfall wr: 10 < 20") when a source is short.
ConstraintPool assemble(std::string name, const std::vector<PoolSource> &sources, std::uint64_t seed,
                        Split split = Split::train, AssembleReport *report = nullptr);

struct PoolSizes {
    std::size_t wr = 42500;
    std::size_t st = 42500;
    std::size_t llm = 15000;
};

// LLM share split by mode, used when the llm source is given per mode.
struct LlmModeSizes {
    std::size_t zero_shot = 6200;
    std::size_t edit = 3500;
    std::size_t postprocess = 5300;
};

ConstraintPool assemble_c(const std::vector<PairCandidate> &wr, const std::vector<PairCandidate> &st,
                          const std::vector<PairCandidate> &llm, const PoolSizes &sizes, std::uint64_t seed,
                          std::string name = "C");
// Same, with the llm candidates partitioned by method tag.
ConstraintPool assemble_c_by_mode(const std::vector<PairCandidate> &wr, const std::vector<PairCandidate> &st,
                                  const std::vector<PairCandidate> &llm, std::size_t wr_size, std::size_t st_size,
                                  const LlmModeSizes &llm_sizes, std::uint64_t seed, std::string name = "C");

// floor(|c| * fraction) pairs from test-split candidates, allocated across
// sources in proportion to c's composition (largest remainder, ties by name).
ConstraintPool make_test_pool(const ConstraintPool &c, const std::vector<PoolSource> &test_sources,
                              std::uint64_t seed, double fraction = 0.25, std::string name = "");
std::map<std::string, std::size_t> proportional_allocation(const std::map<std::string, std::size_t> &composition,
                                                           std::size_t total);

// pool plus n pairs (s, s') with y(s) = 1 and y(s') = 0, sides drawn without
// replacement from the store.
ConstraintPool make_adverse(const ConstraintPool &pool, const CommentStore &store, std::size_t n,
                            std::uint64_t seed, std::string name = "");

// Keeps members with p(s, s') <= t. Retention (percent) goes to notes.
ConstraintPool filter_pool(const ConstraintPool &pool, const std::map<std::string, double> &predictions, double t,
                           std::string name = "");

} // namespace fairpairs
