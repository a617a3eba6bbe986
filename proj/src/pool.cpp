#include "fairpairs/pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

namespace {

void finalize(ConstraintPool &pool) {
    std::sort(pool.members.begin(), pool.members.end(),
              [](const PairCandidate &a, const PairCandidate &b) { return a.id < b.id; });
    pool.composition.clear();
    for (const auto &m : pool.members) ++pool.composition[pool.source_of.at(m.id)];
    pool.validate();
}

std::string or_default(std::string name, const std::string &fallback) { return name.empty() ? fallback : name; }

} // namespace

const PairCandidate *ConstraintPool::find(const std::string &id) const {
    auto it = std::lower_bound(members.begin(), members.end(), id,
                               [](const PairCandidate &p, const std::string &key) { return p.id < key; });
    return it != members.end() && it->id == id ? &*it : nullptr;
}

void ConstraintPool::validate() const {
    std::set<std::string> seen;
    for (const auto &m : members) {
        if (!seen.insert(m.id).second) throw PreconditionError(fmt::format("pool {}: duplicate member {}", name, m.id));
        if (!source_of.count(m.id)) throw PreconditionError(fmt::format("pool {}: member {} has no source", name, m.id));
    }
    std::size_t total = 0;
    for (const auto &[_, n] : composition) total += n;
    if (total != members.size())
        throw PreconditionError(fmt::format("pool {}: composition sums to {}, {} members", name, total, members.size()));
}

json ConstraintPool::manifest() const {
    json ids = json::array();
    for (const auto &m : members) ids.push_back({{"id", m.id}, {"source", source_of.at(m.id)}});
    return {{"name", name},   {"split", to_string(split)}, {"seed", seed}, {"size", members.size()},
            {"composition", composition}, {"members", ids},  {"notes", notes}};
}

std::string ConstraintPool::manifest_text() const { return manifest().dump(2) + "\n"; }

void ConstraintPool::save(const std::filesystem::path &dir) const {
    write_pairs(dir / (name + ".pairs.jsonl"), members);
    text::write_file(dir / (name + ".manifest.json"), manifest_text());
}

ConstraintPool ConstraintPool::load(const std::filesystem::path &dir, const std::string &name) {
    const auto manifest_path = dir / (name + ".manifest.json");
    ConstraintPool pool;
    json m;
    try {
        m = json::parse(text::read_file(manifest_path));
        pool.name = m.at("name").get<std::string>();
        pool.split = split_from_string(m.at("split").get<std::string>());
        pool.seed = m.at("seed").get<std::uint64_t>();
        pool.notes = m.value("notes", json::object());
        for (const auto &row : m.at("members")) pool.source_of[row.at("id")] = row.at("source").get<std::string>();
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
    }
    for (auto &p : read_pairs(dir / (name + ".pairs.jsonl")))
        if (pool.source_of.count(p.id)) pool.members.push_back(std::move(p));
    if (pool.members.size() != pool.source_of.size())
        throw FormatError(fmt::format("pool {}: manifest lists {} members, pair file has {}", name,
                                      pool.source_of.size(), pool.members.size()));
    finalize(pool);
    return pool;
}

ConstraintPool assemble(std::string name, const std::vector<PoolSource> &sources, std::uint64_t seed, Split split,
                        AssembleReport *report) {
    ConstraintPool pool;
    pool.name = std::move(name);
    pool.seed = seed;
    pool.split = split;
    AssembleReport rep;
    Rng rng(seed);
    std::set<std::string> taken;
    std::vector<std::string> shortfalls;
    std::vector<std::vector<const PairCandidate *>> eligible(sources.size());
    for (std::size_t k = 0; k < sources.size(); ++k) {
        std::set<std::string> local;
        for (const auto &c : sources[k].candidates)
            if (c.filter_passed && local.insert(c.id).second) eligible[k].push_back(&c);
        if (eligible[k].size() < sources[k].size)
            shortfalls.push_back(fmt::format("shortfall {}: {} < {}", sources[k].name, eligible[k].size(), sources[k].size));
    }
    if (!shortfalls.empty()) throw PreconditionError(text::join(shortfalls, "; "));
    for (std::size_t k = 0; k < sources.size(); ++k) {
        auto &cands = eligible[k];
        // Canonical order first so the draw does not depend on input order.
        std::sort(cands.begin(), cands.end(), [](const auto *a, const auto *b) { return a->id < b->id; });
        std::shuffle(cands.begin(), cands.end(), rng);
        std::size_t got = 0;
        for (const auto *c : cands) {
            if (got == sources[k].size) break;
            if (!taken.insert(c->id).second) {
                ++rep.duplicates_skipped[sources[k].name];
                continue;
            }
            pool.members.push_back(*c);
            pool.source_of[c->id] = sources[k].name;
            ++got;
        }
        if (got < sources[k].size)
            throw PreconditionError(fmt::format("shortfall {}: {} < {} after removing duplicates", sources[k].name, got,
                                                sources[k].size));
    }
    for (const auto &[src, n] : rep.duplicates_skipped)
        spdlog::warn("pool {}: skipped {} candidates of {} already drawn from another source", pool.name, n, src);
    finalize(pool);
    if (report) *report = rep;
    return pool;
}

ConstraintPool assemble_c(const std::vector<PairCandidate> &wr, const std::vector<PairCandidate> &st,
                          const std::vector<PairCandidate> &llm, const PoolSizes &sizes, std::uint64_t seed,
                          std::string name) {
    return assemble(std::move(name), {{"wr", wr, sizes.wr}, {"st", st, sizes.st}, {"llm", llm, sizes.llm}}, seed);
}

ConstraintPool assemble_c_by_mode(const std::vector<PairCandidate> &wr, const std::vector<PairCandidate> &st,
                                  const std::vector<PairCandidate> &llm, std::size_t wr_size, std::size_t st_size,
                                  const LlmModeSizes &llm_sizes, std::uint64_t seed, std::string name) {
    std::vector<PairCandidate> zs, ed, pp;
    for (const auto &p : llm) {
        if (p.method == method::gpt_zero_shot) zs.push_back(p);
        else if (p.method == method::gpt_edit) ed.push_back(p);
        else if (p.method == method::gpt_postprocess) pp.push_back(p);
    }
    return assemble(std::move(name),
                    {{"wr", wr, wr_size},
                     {"st", st, st_size},
                     {"gpt_zero_shot", zs, llm_sizes.zero_shot},
                     {"gpt_edit", ed, llm_sizes.edit},
                     {"gpt_postprocess", pp, llm_sizes.postprocess}},
                    seed);
}

std::map<std::string, std::size_t> proportional_allocation(const std::map<std::string, std::size_t> &composition,
                                                           std::size_t total) {
    std::size_t sum = 0;
    for (const auto &[_, n] : composition) sum += n;
    if (sum == 0) throw PreconditionError("cannot allocate over an empty composition");
    std::map<std::string, std::size_t> out;
    std::vector<std::pair<double, std::string>> remainders;
    std::size_t assigned = 0;
    for (const auto &[name, n] : composition) {
        const double quota = static_cast<double>(total) * static_cast<double>(n) / static_cast<double>(sum);
        const auto base = static_cast<std::size_t>(std::floor(quota));
        out[name] = base;
        assigned += base;
        remainders.emplace_back(quota - static_cast<double>(base), name);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto &a, const auto &b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[remainders[i % remainders.size()].second];
    return out;
}

ConstraintPool make_test_pool(const ConstraintPool &c, const std::vector<PoolSource> &test_sources,
                              std::uint64_t seed, double fraction, std::string name) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("test pool fraction outside (0, 1]");
    const auto total = static_cast<std::size_t>(std::floor(static_cast<double>(c.size()) * fraction));
    const auto alloc = proportional_allocation(c.composition, total);
    std::vector<PoolSource> sources;
    for (const auto &[src, n] : alloc) {
        auto it = std::find_if(test_sources.begin(), test_sources.end(),
                               [&](const PoolSource &s) { return s.name == src; });
        if (it == test_sources.end()) {
            if (n > 0) throw PreconditionError(fmt::format("shortfall {}: 0 < {}", src, n));
            continue;
        }
        sources.push_back({src, it->candidates, n});
    }
    return assemble(or_default(std::move(name), c.name + "_test"), sources, seed, Split::test);
}

ConstraintPool make_adverse(const ConstraintPool &pool, const CommentStore &store, std::size_t n, std::uint64_t seed,
                            std::string name) {
    ConstraintPool out = pool;
    out.name = or_default(std::move(name), pool.name + "_adverse");
    if (n == 0) return out;
    std::vector<const Comment *> toxic, clean;
    for (const auto &c : store) (label(c).y == 1 ? toxic : clean).push_back(&c);
    if (toxic.size() < n || clean.size() < n)
        throw PreconditionError(fmt::format("insufficient comments for {} adverse pairs: {} toxic, {} non-toxic", n,
                                            toxic.size(), clean.size()));
    Rng rng(seed);
    std::shuffle(toxic.begin(), toxic.end(), rng);
    std::shuffle(clean.begin(), clean.end(), rng);
    std::size_t added = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (toxic[i]->text == clean[i]->text) continue;
        auto p = PairCandidate::make(toxic[i]->text, clean[i]->text, std::string(method::adverse), "", "",
                                     {{"s_comment_id", toxic[i]->id}, {"s_prime_comment_id", clean[i]->id}});
        p.filter_passed = true;
        if (out.source_of.count(p.id)) continue;
        out.source_of[p.id] = "adverse";
        out.members.push_back(std::move(p));
        ++added;
    }
    if (added < n) spdlog::warn("pool {}: {} of {} adverse pairs collided and were dropped", out.name, n - added, n);
    out.notes["adverse_added"] = added;
    finalize(out);
    return out;
}

ConstraintPool filter_pool(const ConstraintPool &pool, const std::map<std::string, double> &predictions, double t,
                           std::string name) {
    ConstraintPool out;
    out.name = or_default(std::move(name), fmt::format("{}_filtered_t{}", pool.name, t));
    out.split = pool.split;
    out.seed = pool.seed;
    for (const auto &m : pool.members) {
        auto it = predictions.find(m.id);
        if (it == predictions.end()) throw PreconditionError(fmt::format("no similarity prediction for pair {}", m.id));
        if (it->second <= t) {
            out.members.push_back(m);
            out.source_of[m.id] = pool.source_of.at(m.id);
        }
    }
    finalize(out);
    const double retention = pool.size() ? 100.0 * static_cast<double>(out.size()) / static_cast<double>(pool.size()) : 0.0;
    out.notes = {{"filtered_from", pool.name}, {"threshold", t}, {"retention_percent", retention}};
    return out;
}

} // namespace fairpairs
