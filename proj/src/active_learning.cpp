#include "fairpairs/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/fairness_eval.hpp"
#include "fairpairs/text.hpp"

namespace fairpairs {

std::string to_string(Acquisition a) {
    switch (a) {
    case Acquisition::random: return "RANDOM";
    case Acquisition::lc: return "LC";
    case Acquisition::lc_unc: return "LC_UNC";
    case Acquisition::bald: return "BALD";
    case Acquisition::varra: return "VARRA";
    case Acquisition::majority: return "MAJORITY";
    }
    return "LC";
}

Acquisition acquisition_from_string(std::string_view s) {
    const auto u = text::to_lower(s);
    if (u == "random") return Acquisition::random;
    if (u == "lc") return Acquisition::lc;
    if (u == "lc_unc" || u == "lc-unc") return Acquisition::lc_unc;
    if (u == "bald") return Acquisition::bald;
    if (u == "varra") return Acquisition::varra;
    if (u == "majority") return Acquisition::majority;
    throw FormatError(fmt::format("unknown acquisition criterion '{}'", s));
}

double variation_ratio(double p) { return 1.0 - std::max(p, 1.0 - p); }

double binary_entropy(double p) {
    auto term = [](double q) { return q > 0.0 ? -q * std::log(q) : 0.0; };
    return term(p) + term(1.0 - p);
}

double score_from_samples(Acquisition criterion, double p_off, std::span<const double> mask_probs, double threshold) {
    if (criterion == Acquisition::lc) return variation_ratio(p_off);
    if (mask_probs.empty()) throw PreconditionError("dropout-based criteria need at least one mask");
    // Deviations from the first sample, so identical samples reproduce it exactly.
    const double n = static_cast<double>(mask_probs.size());
    const double p0 = mask_probs[0], vr0 = variation_ratio(p0), h0 = binary_entropy(p0);
    double d_mean = 0.0, d_vr = 0.0, d_h = 0.0, above = 0.0;
    for (double p : mask_probs) {
        d_mean += p - p0;
        d_vr += variation_ratio(p) - vr0;
        d_h += binary_entropy(p) - h0;
        above += p > threshold ? 1.0 : 0.0;
    }
    const double mean = p0 + d_mean / n;
    const double mean_vr = vr0 + d_vr / n;
    const double mean_h = h0 + d_h / n;
    switch (criterion) {
    case Acquisition::lc_unc: return variation_ratio(mean);
    case Acquisition::varra: return mean_vr;
    case Acquisition::majority: return variation_ratio(above / n);
    case Acquisition::bald: return binary_entropy(mean) - mean_h;
    default: break;
    }
    throw PreconditionError("random acquisition has no sample-based score");
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 31;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 29;
    return x;
}

std::vector<std::uint64_t> mask_seeds(std::uint64_t seed, std::size_t n) {
    std::vector<std::uint64_t> out(n);
    for (std::size_t m = 0; m < n; ++m) out[m] = mix(seed, m + 1);
    return out;
}

double score_one(const AcquisitionConfig &config, const SimilarityModel &model, const Eigen::VectorXd &x,
                 const std::string &id, std::uint64_t seed, const std::vector<std::uint64_t> &seeds) {
    if (config.criterion == Acquisition::random) {
        Rng rng(mix(seed, text::fnv1a(id)));
        return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    const double p_off = model.predict_features(x);
    if (config.criterion == Acquisition::lc) return variation_ratio(p_off);
    std::vector<double> probs;
    probs.reserve(seeds.size());
    for (auto s : seeds) probs.push_back(model.predict_features(x, s));
    return score_from_samples(config.criterion, p_off, probs, model.threshold());
}

} // namespace

double acquisition_score(const AcquisitionConfig &config, const SimilarityModel &model, const PairCandidate &pair,
                         const FeatureCache *cache, std::uint64_t seed) {
    if (config.criterion != Acquisition::random && config.criterion != Acquisition::lc && config.n_masks < 1)
        throw PreconditionError("dropout-based criteria need at least one mask");
    return score_one(config, model, model.features(pair, cache), pair.id, seed, mask_seeds(seed, config.n_masks));
}

std::map<std::string, double> score_pool(const AcquisitionConfig &config, const SimilarityModel &model,
                                         const std::vector<PairCandidate> &pairs, const FeatureCache *cache,
                                         std::uint64_t seed) {
    const auto seeds = mask_seeds(seed, config.n_masks);
    std::map<std::string, double> out;
    for (const auto &p : pairs) out[p.id] = score_one(config, model, model.features(p, cache), p.id, seed, seeds);
    return out;
}

std::vector<std::string> select_batch(const std::map<std::string, double> &scores,
                                      const std::set<std::string> &already_labeled, std::size_t k, bool allow_relabel,
                                      bool *short_batch) {
    std::vector<std::pair<double, const std::string *>> eligible;
    for (const auto &[id, s] : scores)
        if (allow_relabel || !already_labeled.count(id)) eligible.emplace_back(s, &id);
    const auto take = std::min(k, eligible.size());
    auto cmp = [](const auto &a, const auto &b) { return a.first != b.first ? a.first > b.first : *a.second < *b.second; };
    std::partial_sort(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end(), cmp);
    std::vector<std::string> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(*eligible[i].second);
    if (short_batch) *short_batch = take < k;
    return out;
}

double aggregate(std::span<const int> votes) {
    if (votes.empty()) throw PreconditionError("cannot aggregate an empty vote list");
    std::size_t ones = 0;
    for (int v : votes) ones += v != 0;
    const std::size_t zeros = votes.size() - ones;
    if (ones == zeros) return 0.5;
    return ones > zeros ? 1.0 : 0.0;
}

// ─── LabelStore ─────────────────────────────────────────────────────────────

void LabelStore::add_vote(const std::string &id, int vote) {
    if (vote != 0 && vote != 1) throw PreconditionError(fmt::format("vote must be 0 or 1, got {}", vote));
    votes_[id].push_back(vote);
}

void LabelStore::add_votes(const std::string &id, std::span<const int> votes) {
    for (int v : votes) add_vote(id, v);
}

const std::vector<int> &LabelStore::votes(const std::string &id) const {
    auto it = votes_.find(id);
    if (it == votes_.end()) throw PreconditionError(fmt::format("no votes for pair {}", id));
    return it->second;
}

double LabelStore::aggregated(const std::string &id) const { return aggregate(votes(id)); }

std::map<std::string, double> LabelStore::aggregated_all() const {
    std::map<std::string, double> out;
    for (const auto &[id, v] : votes_) out[id] = aggregate(v);
    return out;
}

std::set<std::string> LabelStore::ids() const {
    std::set<std::string> out;
    for (const auto &[id, _] : votes_) out.insert(id);
    return out;
}

std::string LabelStore::to_jsonl() const {
    std::vector<json> rows;
    for (const auto &[id, v] : votes_) rows.push_back({{"id", id}, {"votes", v}, {"label", aggregate(v)}});
    return text::to_jsonl(rows);
}

LabelStore LabelStore::from_jsonl_text(std::string_view data) {
    LabelStore store;
    std::istringstream in{std::string(data)};
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim(line).empty()) continue;
        try {
            const auto row = json::parse(line);
            store.add_votes(row.at("id").get<std::string>(), row.at("votes").get<std::vector<int>>());
        } catch (const json::exception &e) {
            throw FormatError(fmt::format("label store line {}: {}", n, e.what()));
        }
    }
    return store;
}

void LabelStore::save(const std::filesystem::path &path) const { text::write_file(path, to_jsonl()); }

LabelStore LabelStore::load(const std::filesystem::path &path) { return from_jsonl_text(text::read_file(path)); }

// ─── Oracles and noise ──────────────────────────────────────────────────────

std::map<std::string, std::string> default_axis_map() {
    std::map<std::string, std::string> m;
    for (const auto *g : {"Male", "Female", "Transgender", "Other gender", "Heterosexual", "Homosexual", "Bisexual",
                          "Other sexuality"})
        m[g] = "gender_sexuality";
    for (const auto *g : {"Black", "White", "Asian", "Latino", "Other race"}) m[g] = "race";
    for (const auto *g : {"Christian", "Jewish", "Muslim", "Hindu", "Buddhist", "Atheist", "Other religion"})
        m[g] = "religion";
    return m;
}

int SyntheticOracle::label(const PairCandidate &pair) const {
    if (kind == Kind::phi1_method)
        return pair.method == method::word_replacement || pair.method == method::word_replacement_50 ? 0 : 1;
    auto a = axis.find(pair.source_group);
    auto b = axis.find(pair.target_group);
    if (a == axis.end() || b == axis.end())
        throw PreconditionError(fmt::format("no axis category for pair {} ({} -> {})", pair.id, pair.source_group,
                                            pair.target_group));
    return a->second == b->second ? 0 : 1;
}

void NoiseModel::validate() const {
    if (!(flip_probability >= 0.0 && flip_probability < 0.5))
        throw PreconditionError(fmt::format("flip probability {} outside [0, 0.5)", flip_probability));
    if (votes_per_pair < 1) throw PreconditionError("votes per pair must be at least 1");
}

int noisy_oracle_vote(const SyntheticOracle &oracle, const PairCandidate &pair, const NoiseModel &noise, Rng &rng) {
    const int truth = oracle.label(pair);
    return std::bernoulli_distribution(noise.flip_probability)(rng) ? 1 - truth : truth;
}

double majority_flip_probability(double p, std::size_t n) {
    if (n % 2 == 0) throw PreconditionError("majority flip probability needs an odd vote count");
    double total = 0.0;
    for (std::size_t k = n / 2 + 1; k <= n; ++k) {
        double binom = 1.0;
        for (std::size_t i = 0; i < k; ++i) binom = binom * static_cast<double>(n - i) / static_cast<double>(i + 1);
        total += binom * std::pow(p, static_cast<double>(k)) * std::pow(1.0 - p, static_cast<double>(n - k));
    }
    return total;
}

double simulate_majority_flip_rate(double p, std::size_t n, std::size_t trials, Rng &rng) {
    if (trials == 0) throw PreconditionError("need at least one trial");
    std::bernoulli_distribution flip(p);
    std::size_t wrong = 0;
    std::vector<int> votes(n);
    for (std::size_t t = 0; t < trials; ++t) {
        for (auto &v : votes) v = flip(rng) ? 1 : 0; // truth is 0
        wrong += aggregate(votes) == 1.0;
    }
    return static_cast<double>(wrong) / static_cast<double>(trials);
}

std::vector<std::string> relabel_candidates(const SimilarityModel &model, const LabelStore &store,
                                            const std::vector<PairCandidate> &pairs, const FeatureCache *cache,
                                            std::size_t k, bool *short_list) {
    std::map<std::string, double> scores;
    for (const auto &p : pairs) {
        if (!store.contains(p.id) || store.aggregated(p.id) != 0.0) continue;
        const double prob = model.predict(p, cache);
        if (model.classify(prob) != 0) continue;
        scores[p.id] = variation_ratio(prob);
    }
    return select_batch(scores, {}, k, true, short_list);
}

OracleLabelSource::OracleLabelSource(SyntheticOracle oracle, NoiseModel noise, std::uint64_t seed)
    : oracle_(std::move(oracle)), noise_(noise), rng_(seed) {
    noise_.validate();
}

std::vector<std::optional<std::vector<int>>> OracleLabelSource::query(const std::vector<const PairCandidate *> &batch) {
    std::vector<std::optional<std::vector<int>>> out;
    out.reserve(batch.size());
    for (const auto *p : batch) {
        std::vector<int> votes;
        for (std::size_t v = 0; v < noise_.votes_per_pair; ++v) votes.push_back(noisy_oracle_vote(oracle_, *p, noise_, rng_));
        out.emplace_back(std::move(votes));
    }
    return out;
}

std::vector<std::optional<std::vector<int>>> StoredLabelSource::query(const std::vector<const PairCandidate *> &batch) {
    std::vector<std::optional<std::vector<int>>> out;
    for (const auto *p : batch) {
        if (store_.contains(p->id)) out.emplace_back(store_.votes(p->id));
        else out.emplace_back(std::nullopt);
    }
    return out;
}

// ─── Loop ───────────────────────────────────────────────────────────────────

std::string to_string(Regime r) {
    switch (r) {
    case Regime::per_round: return "per_round";
    case Regime::retrain: return "retrain";
    case Regime::retrain_reweigh: return "retrain_reweigh";
    case Regime::from_scratch: return "from_scratch";
    case Regime::from_scratch_reweigh: return "from_scratch_reweigh";
    }
    return "per_round";
}

Regime regime_from_string(std::string_view s) {
    for (auto r : {Regime::per_round, Regime::retrain, Regime::retrain_reweigh, Regime::from_scratch,
                   Regime::from_scratch_reweigh})
        if (to_string(r) == s) return r;
    throw FormatError(fmt::format("unknown training regime '{}'", s));
}

std::string round_metrics_csv(const std::vector<RoundMetrics> &rounds) {
    std::string out = "round,criterion,queried,failed,labeled,balanced_accuracy\n";
    for (const auto &r : rounds)
        out += fmt::format("{},{},{},{},{},{}\n", r.round, r.criterion, r.queried, r.failed, r.labeled,
                           r.balanced_accuracy ? eval::format_percent(*r.balanced_accuracy) : "");
    return out;
}

double held_out_balanced_accuracy(const SimilarityModel &model, const HeldOut &held_out, const FeatureCache *cache) {
    std::vector<int> preds;
    preds.reserve(held_out.pairs.size());
    for (const auto &p : held_out.pairs) preds.push_back(model.classify(p, cache));
    return eval::balanced_accuracy(preds, held_out.labels);
}

namespace {

void fit(SimilarityModel &model, const std::vector<PairCandidate> &pool, const std::map<std::string, std::size_t> &index,
         const std::vector<std::string> &ids, const LabelStore &labels, const FeatureCache *cache,
         SimilarityTrainConfig config, Rng &rng) {
    std::vector<Eigen::VectorXd> x;
    std::vector<double> y;
    for (const auto &id : ids) {
        if (!labels.contains(id)) continue;
        x.push_back(model.features(pool[index.at(id)], cache));
        y.push_back(labels.aggregated(id));
    }
    model.train(x, y, config, rng);
}

} // namespace

LoopResult run_loop(SimilarityModel &model, const std::vector<PairCandidate> &pool, LabelSource &source,
                    const LoopConfig &config, const FeatureCache *cache, const HeldOut *held_out) {
    if (pool.empty()) throw PreconditionError("active learning needs a non-empty pool");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < pool.size(); ++i) index[pool[i].id] = i;
    LoopResult result;
    Rng rng(config.seed);
    std::set<std::string> queried;
    for (std::size_t round = 0; round < config.rounds; ++round) {
        const std::uint64_t round_seed = mix(config.seed, round);
        AcquisitionConfig acq = config.acquisition;
        if (round == 0) acq.criterion = Acquisition::random;
        const auto scores = score_pool(acq, model, pool, cache, round_seed);
        bool short_batch = false;
        const auto batch_ids = select_batch(scores, queried, config.batch, config.allow_relabel, &short_batch);
        if (batch_ids.empty()) {
            spdlog::warn("active learning: pool exhausted after {} rounds", round);
            break;
        }
        if (short_batch) spdlog::warn("active learning round {}: only {} pairs left to query", round, batch_ids.size());
        std::vector<const PairCandidate *> batch;
        for (const auto &id : batch_ids) batch.push_back(&pool[index.at(id)]);
        const auto answers = source.query(batch);
        RoundMetrics m;
        m.round = round;
        m.criterion = to_string(acq.criterion);
        m.queried = batch.size();
        std::vector<std::string> answered;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            queried.insert(batch_ids[i]);
            if (!answers.at(i) || answers[i]->empty()) {
                ++m.failed;
                continue;
            }
            result.labels.add_votes(batch_ids[i], *answers[i]);
            answered.push_back(batch_ids[i]);
        }
        if (m.failed) spdlog::info("active learning round {}: {} failed queries dropped", round, m.failed);
        if (answered.empty()) throw Error(fmt::format("label source exhausted in round {}", round));
        fit(model, pool, index, answered, result.labels, cache, config.train, rng);
        m.labeled = result.labels.size();
        if (held_out) m.balanced_accuracy = held_out_balanced_accuracy(model, *held_out, cache);
        result.rounds.push_back(m);
    }

    const auto all = result.labels.ids();
    const std::vector<std::string> all_ids(all.begin(), all.end());
    auto refit = config.train;
    switch (config.regime) {
    case Regime::per_round: break;
    case Regime::retrain:
    case Regime::retrain_reweigh:
        refit.epochs = 1;
        refit.reweight = config.regime == Regime::retrain_reweigh;
        fit(model, pool, index, all_ids, result.labels, cache, refit, rng);
        break;
    case Regime::from_scratch:
    case Regime::from_scratch_reweigh:
        refit.reweight = config.regime == Regime::from_scratch_reweigh;
        model.reinitialize(mix(config.seed, 0xfeed));
        fit(model, pool, index, all_ids, result.labels, cache, refit, rng);
        break;
    }
    if (held_out) result.final_balanced_accuracy = held_out_balanced_accuracy(model, *held_out, cache);
    return result;
}

} // namespace fairpairs
