// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/active_learning.hpp"
#include "fairpairs/annotation_service.hpp"
#include "fairpairs/clp_train.hpp"
#include "fairpairs/fairness_eval.hpp"
#include "fairpairs/group_presence.hpp"
#include "fairpairs/lexicon.hpp"
#include "fairpairs/pool.hpp"
#include "fairpairs/similarity.hpp"
#include "fairpairs/stub_backend.hpp"
#include "fairpairs/style_transfer.hpp"
#include "fairpairs/text.hpp"
#include "toy.hpp"

using namespace fairpairs;

namespace {

const std::filesystem::path kData = FAIRPAIRS_DATA_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

// ─── Metric fixture ─────────────────────────────────────────────────────────

Outcome metric_fixture() {
    std::vector<int> labels(1000, 0);
    std::fill(labels.begin() + 788, labels.end(), 1);
    const std::vector<int> preds(labels.size(), 0);
    const auto r = eval::confusion_rates(preds, labels);
    const double ba = eval::balanced_accuracy(preds, labels);
    const bool ok = std::abs(r.acc - 78.8) < 1e-9 && r.tnr == 100.0 && r.tpr == 0.0 && ba == 50.0 &&
                    eval::format_percent(r.acc) == "78.8";
    return {ok, fmt::format("ACC {} TNR {} TPR {} BA {}", eval::format_percent(r.acc), eval::format_percent(r.tnr),
                            eval::format_percent(r.tpr), eval::format_percent(ba))};
}

// ─── Majority vote ──────────────────────────────────────────────────────────

Outcome majority_noise() {
    constexpr double p = 0.3;
    const double closed = p * p * p + 3 * p * p * (1 - p);
    Rng rng(20240613);
    const double simulated = simulate_majority_flip_rate(p, 3, 100000, rng);
    const double analytic = majority_flip_probability(p, 3);
    const bool ok = std::abs(simulated - 0.216) <= 0.005 && std::abs(analytic - closed) < 1e-12 &&
                    std::abs(closed - 0.216) < 1e-12;
    return {ok, fmt::format("simulated {:.4f} over 1e5 trials, analytic {:.6f}", simulated, analytic)};
}

// ─── Lipschitz / constraint equivalence ─────────────────────────────────────

Outcome lipschitz_equivalence() {
    Rng rng(7);
    std::size_t instances = 0, counterexamples = 0, oracle_mismatch = 0, lipschitz_true = 0;
    const std::vector<double> grid = {0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
    for (; instances < 2000; ++instances) {
        eval::FiniteMetricSpace space;
        const auto n = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
        space.lipschitz_constant = std::vector<double>{0.5, 1.0, 2.0, 4.0, 8.0}[rng() % 5];
        space.d.assign(n, std::vector<double>(n, 0.0));
        const bool on_grid = instances % 2 == 0; // exercises L*d == 1 exactly
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) {
                const double v = on_grid ? grid[rng() % grid.size()]
                                         : std::uniform_real_distribution<double>(0.0, 1.5)(rng);
                space.d[a][b] = space.d[b][a] = v;
            }
        std::vector<int> f(n);
        for (auto &v : f) v = static_cast<int>(rng() % 2);
        const auto check = eval::lipschitz_equivalence_check(space, f);
        bool lip = true, con = true;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const int db = f[a] != f[b];
                const double ld = space.lipschitz_constant * space.d[a][b];
                if (db > ld) lip = false;
                if (db > (ld >= 1.0 ? 1 : 0)) con = false;
            }
        counterexamples += check.lipschitz != check.constraint_satisfied;
        oracle_mismatch += check.lipschitz != lip || check.constraint_satisfied != con;
        lipschitz_true += lip;
    }
    return {counterexamples == 0 && oracle_mismatch == 0,
            fmt::format("{} spaces, {} counterexamples, {} oracle mismatches ({} Lipschitz)", instances,
                        counterexamples, oracle_mismatch, lipschitz_true)};
}

// ─── Greedy masking ─────────────────────────────────────────────────────────

Outcome greedy_masking() {
    auto tokenizer = std::make_shared<WhitespaceTokenizer>();
    auto clf = std::make_shared<stub::StubClassifier>(1, tokenizer);
    Rng rng(11);
    std::vector<std::string> vocab;
    for (int i = 0; i < 40; ++i) vocab.push_back(fmt::format("w{}", i));
    std::normal_distribution<double> nd(0.0, 1.5);
    for (const auto &w : vocab) clf->set_weight(0, w, nd(rng));
    clf->set_bias(0, -0.5);
    GroupClassifier gc;
    gc.backend = clf;
    gc.groups = {"G"};

    auto oracle_p = [&](const std::vector<std::string> &tokens, const std::vector<bool> &masked) {
        double z = clf->bias(0);
        for (std::size_t k = 0; k < tokens.size(); ++k)
            if (!masked[k]) z += clf->weight(0, tokens[k]);
        return 1.0 / (1.0 + std::exp(-z));
    };

    StyleTransferConfig cfg;
    std::size_t sentences = 0, step_mismatch = 0, bad_termination = 0, valid = 0, invalid = 0;
    while (sentences < 300) {
        const auto len = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
        std::vector<std::string> tokens;
        for (std::size_t i = 0; i < len; ++i) tokens.push_back(vocab[rng() % vocab.size()]);
        const auto s = text::join(tokens, " ");
        ++sentences;
        const auto out = make_inference_template(s, "G", gc, cfg);

        std::vector<bool> masked(len, false);
        double current = oracle_p(tokens, masked);
        for (const auto &step : out.steps) {
            std::size_t best = len;
            double best_p = 2.0;
            for (std::size_t k = 0; k < len; ++k) {
                if (masked[k]) continue;
                masked[k] = true;
                const double p = oracle_p(tokens, masked);
                masked[k] = false;
                if (p < best_p - 1e-12) best_p = p, best = k;
            }
            if (step.position != best || std::abs(step.probability - best_p) > 1e-9) ++step_mismatch;
            masked[step.position] = true;
            current = oracle_p(tokens, masked);
        }
        const bool below = current < cfg.mask_threshold;
        if (std::abs(out.initial_probability - oracle_p(tokens, std::vector<bool>(len, false))) > 1e-9) ++step_mismatch;
        const bool started_below = out.initial_probability < cfg.mask_threshold;
        if (out.tmpl.valid) {
            ++valid;
            if (!below || out.steps.empty()) ++bad_termination;
        } else {
            ++invalid;
            const bool none = out.steps.empty() && started_below;
            const bool exhausted = out.steps.size() == len && !below;
            if (!none && !exhausted) ++bad_termination;
        }
        // Stops at the first step below threshold.
        for (std::size_t k = 0; k + 1 < out.steps.size(); ++k)
            if (out.steps[k].probability < cfg.mask_threshold) ++bad_termination;
    }
    return {sentences >= 100 && step_mismatch == 0 && bad_termination == 0 && valid > 0 && invalid > 0,
            fmt::format("{} sentences ({} valid, {} flagged), {} step mismatches, {} bad terminations", sentences, valid,
                        invalid, step_mismatch, bad_termination)};
}

// ─── Word replacement ───────────────────────────────────────────────────────

Outcome word_replacement_soundness() {
    const auto lex = load_lexicon(kData / "lexicon.json");
    const auto groups = lex.groups();
    Rng rng(5);
    auto pick = uniform_picker(rng);
    auto lower_in = [](const std::vector<std::string> &list, const std::string &t) {
        const auto lt = text::to_lower(t);
        return std::any_of(list.begin(), list.end(), [&](const std::string &x) { return text::to_lower(x) == lt; });
    };
    std::size_t candidates = 0, replaced = 0, violations = 0;
    const std::vector<std::string> fillers = {"the", "people", "said", "that", "my", "friend", "is", "very", "nice"};
    while (candidates < 10000) {
        const auto &j = groups[rng() % groups.size()];
        std::string jp;
        do jp = groups[rng() % groups.size()];
        while (jp == j);
        const auto &terms = lex.terms(j);
        std::vector<std::string> words;
        for (int i = 0; i < 6; ++i) {
            if (rng() % 3 == 0) {
                const auto &list = (!terms.nouns.empty() && (terms.descriptors.empty() || rng() % 2)) ? terms.nouns
                                                                                                       : terms.descriptors;
                words.push_back(list[rng() % list.size()]);
            } else {
                words.push_back(fillers[rng() % fillers.size()]);
            }
        }
        const auto s = text::join(words, " ");
        const auto r = replace(s, j, jp, lex, pick);
        if (!r) continue;
        ++candidates;
        const auto &target = lex.terms(jp);
        for (const auto &rep : r->replacements) {
            ++replaced;
            const auto &same = target.list(rep.source_kind);
            if (!same.empty()) {
                if (rep.kind != rep.source_kind || !lower_in(same, rep.target_term)) ++violations;
            } else if (!lower_in(target.list(rep.kind), rep.target_term)) {
                ++violations;
            }
        }
    }

    // Longest match on adversarial fixtures.
    std::size_t fixture_failures = 0;
    auto first = [](std::size_t) { return std::size_t{0}; };
    if (auto r = replace("my trans female friend", "Female", "Male", lex, first)) ++fixture_failures;
    if (auto r = replace("my trans female friend", "Transgender", "Female", lex, first);
        !r || r->replacements.size() != 1 || r->replacements[0].source_term != "trans female")
        ++fixture_failures;
    if (auto r = replace("a female and a trans female", "Female", "Male", lex, first);
        !r || r->replacements.size() != 1 || r->modified.find("trans female") == std::string::npos)
        ++fixture_failures;
    const auto occ = lex.find_terms("She is a trans female athlete");
    if (occ.size() != 1 || occ[0].text != "trans female") ++fixture_failures;

    return {violations == 0 && fixture_failures == 0,
            fmt::format("{} candidates, {} replaced tokens, {} violations, {} fixture failures", candidates, replaced,
                        violations, fixture_failures)};
}

// ─── Acquisition closed forms ───────────────────────────────────────────────

Outcome acquisition_closed_forms() {
    const auto lex = load_lexicon(kData / "lexicon.json");
    stub::StubBackend backend;
    SimilarityModel model(backend.pair_backbone(), backend.tokenizer(), HeadSpec{HeadVariant::concat, 16, 0.0}, 0.5, 3);
    const auto pairs = toy::similarity_pool(200, 0.3, 9, lex);
    std::size_t mismatches = 0;
    for (const auto &p : pairs) {
        const double lc = acquisition_score({Acquisition::lc, 50}, model, p, nullptr, 1);
        const double lcu = acquisition_score({Acquisition::lc_unc, 50}, model, p, nullptr, 1);
        const double bald = acquisition_score({Acquisition::bald, 50}, model, p, nullptr, 1);
        if (lc != lcu || bald != 0.0) ++mismatches;
    }
    const std::vector<double> two = {0.2, 0.8};
    const double lc_unc = score_from_samples(Acquisition::lc_unc, 0.5, two, 0.5);
    const double varra = score_from_samples(Acquisition::varra, 0.5, two, 0.5);
    const bool hand = std::abs(lc_unc - 0.5) <= 1e-12 && std::abs(varra - 0.2) <= 1e-12;
    return {mismatches == 0 && hand && pairs.size() == 200,
            fmt::format("{} pairs with LC != LC_UNC or BALD != 0; two-mask LC_UNC {:.12f}, VARRA {:.12f}", mismatches,
                        lc_unc, varra)};
}

// ─── Active learning benefit ────────────────────────────────────────────────

struct AlRun {
    double lc = 0.0;
    double random = 0.0;
};

AlRun al_pair(std::uint64_t seed, const Lexicon &lex) {
    stub::StubBackend backend;
    const auto pool = toy::similarity_pool(1500, 0.1, seed, lex);
    HeldOut held;
    SyntheticOracle oracle;
    held.pairs = toy::similarity_pool(600, 0.1, seed + 7919, lex);
    for (const auto &p : held.pairs) held.labels.push_back(oracle.label(p));

    AlRun out;
    for (auto criterion : {Acquisition::lc, Acquisition::random}) {
        SimilarityModel model(backend.pair_backbone(), backend.tokenizer(), HeadSpec{HeadVariant::concat, 16, 0.1}, 0.5,
                              seed);
        const auto cache = precompute_features(model, pool);
        OracleLabelSource source(oracle, NoiseModel{0.3, 1}, seed);
        LoopConfig cfg;
        cfg.rounds = 6;
        cfg.batch = 40;
        cfg.acquisition = {criterion, 50};
        cfg.train = {5, 16, 1e-2, false};
        cfg.seed = seed;
        const auto r = run_loop(model, pool, source, cfg, &cache, &held);
        (criterion == Acquisition::lc ? out.lc : out.random) = *r.final_balanced_accuracy;
    }
    return out;
}

Outcome active_learning_benefit() {
    const auto lex = load_lexicon(kData / "lexicon.json");
    std::vector<double> lc, rnd;
    std::size_t wins = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto r = al_pair(seed, lex);
        lc.push_back(r.lc);
        rnd.push_back(r.random);
        wins += r.lc > r.random;
    }
    const auto mlc = eval::mean_ci(lc), mr = eval::mean_ci(rnd);
    return {mlc.mean > mr.mean,
            fmt::format("LC {:.1f} ± {:.1f} vs RANDOM {:.1f} ± {:.1f} over 10 seeds, gap {:+.1f}, LC ahead on {}/10",
                        mlc.mean, mlc.half_width, mr.mean, mr.half_width, mlc.mean - mr.mean, wins)};
}

// ─── CLP gradient ───────────────────────────────────────────────────────────

Outcome clp_gradient() {
    Rng rng(13);
    std::normal_distribution<double> nd(0.0, 2.0);
    std::size_t checked = 0, bad = 0;
    double worst = 0.0;
    while (checked < 100) {
        const auto dim = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        std::vector<double> a(dim), b(dim);
        for (std::size_t i = 0; i < dim; ++i) a[i] = nd(rng), b[i] = nd(rng);
        double sep = 0.0;
        for (std::size_t i = 0; i < dim; ++i) sep += (a[i] - b[i]) * (a[i] - b[i]);
        if (std::sqrt(sep) <= 1e-3) continue;
        ++checked;
        const double lambda = std::uniform_real_distribution<double>(0.1, 125.0)(rng);
        const auto g = clp_penalty_gradient(a, b, lambda);
        for (std::size_t i = 0; i < dim; ++i) {
            const double h = 1e-6;
            auto ap = a, am = a;
            ap[i] += h;
            am[i] -= h;
            const double fd = (clp_penalty(ap, b, lambda) - clp_penalty(am, b, lambda)) / (2 * h);
            const double rel = std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-8});
            worst = std::max(worst, rel);
            if (rel > 1e-4) ++bad;
        }
    }
    const std::vector<double> same = {0.3, -1.2, 4.0};
    const double zero = clp_penalty(same, same, 5.0);
    const auto gz = clp_penalty_gradient(same, same, 5.0);
    const bool zero_ok = zero == 0.0 && std::all_of(gz.begin(), gz.end(), [](double v) { return v == 0.0; });
    return {bad == 0 && zero_ok,
            fmt::format("{} pairs, worst relative error {:.2e}, penalty on identical logits {}", checked, worst, zero)};
}

// ─── CLP lambda sweep ───────────────────────────────────────────────────────

struct ClpPoint {
    double fairness = 0.0;
    double ba = 0.0;
};

ClpPoint clp_point(double lambda, std::uint64_t seed, const Lexicon &lex) {
    stub::StubBackend backend;
    const auto train = toy::biased_corpus(2000, seed, Split::train, 0.8, "a");
    const auto test = toy::biased_corpus(800, seed + 101, Split::test, 0.8, "b");
    Rng rng(seed + 3);
    auto pool = enumerate_wr_candidates(train, lex, toy::groups(), rng);
    auto held = enumerate_wr_candidates(test, lex, toy::groups(), rng);
    std::map<std::string, double> predictions;
    for (const auto &p : pool) predictions[p.id] = 0.0;
    PartnerIndex index(pool, predictions);

    ClpConfig cfg = ClpConfig::reference(lambda);
    cfg.learning_rate = 0.05;
    cfg.seed = seed;
    const auto clf = train_clp(train, index, backend, cfg);
    eval::BatchClassifier f = [&](std::span<const std::string> texts) {
        std::vector<int> out;
        for (const auto &p : clf->predict(texts)) out.push_back(p.probs[0] > 0.5 ? 1 : 0);
        return out;
    };
    std::vector<std::string> texts;
    std::vector<int> labels;
    for (const auto &c : test) {
        texts.push_back(c.text);
        labels.push_back(label(c).y);
    }
    return {eval::individual_fairness(f, held), eval::balanced_accuracy(f(texts), labels)};
}

Outcome clp_lambda_sweep() {
    const auto lex = load_lexicon(kData / "lexicon.json");
    const std::vector<double> lambdas = {0.0, 5.0, 125.0};
    std::vector<double> fair(3, 0.0), ba(3, 0.0);
    constexpr int seeds = 5;
    for (int s = 1; s <= seeds; ++s)
        for (std::size_t i = 0; i < lambdas.size(); ++i) {
            const auto pt = clp_point(lambdas[i], static_cast<std::uint64_t>(s), lex);
            fair[i] += pt.fairness / seeds;
            ba[i] += pt.ba / seeds;
        }
    const bool ok = fair[0] <= fair[1] && fair[1] <= fair[2] && fair[2] > fair[0] && ba[2] <= ba[0];
    return {ok, fmt::format("mean over {} seeds: fairness {:.1f} / {:.1f} / {:.1f}, BA {:.1f} / {:.1f} / {:.1f} "
                            "at lambda 0 / 5 / 125",
                            seeds, fair[0], fair[1], fair[2], ba[0], ba[1], ba[2])};
}

// ─── Pool algebra ───────────────────────────────────────────────────────────

Outcome pool_algebra() {
    auto make = [](const std::string &tag, std::size_t n, bool passed) {
        std::vector<PairCandidate> out;
        for (std::size_t i = 0; i < n; ++i) {
            auto p = PairCandidate::make(fmt::format("{} source {}", tag, i), fmt::format("{} target {}", tag, i), tag,
                                         "Male", "Female");
            p.filter_passed = passed || i % 3 != 0;
            out.push_back(std::move(p));
        }
        return out;
    };
    const auto wr = make("word_replacement", 400, true);
    const auto st = make("style_transfer", 400, false);
    const auto llm = make("gpt_zero_shot", 200, false);
    const PoolSizes sizes{170, 170, 60};
    const auto a = assemble_c(wr, st, llm, sizes, 42).manifest_text();
    const auto b = assemble_c(wr, st, llm, sizes, 42).manifest_text();
    const auto c = assemble_c(wr, st, llm, sizes, 43).manifest_text();
    const bool reproducible = a == b && a != c;

    ConstraintPool big;
    big.name = "P";
    Rng rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::map<std::string, double> predictions;
    for (std::size_t i = 0; i < 10000; ++i) {
        auto p = PairCandidate::make(fmt::format("s{}", i), fmt::format("t{}", i), "word_replacement", "Male", "Female");
        predictions[p.id] = u(rng);
        big.source_of[p.id] = "wr";
        big.members.push_back(std::move(p));
    }
    std::sort(big.members.begin(), big.members.end(), [](const auto &x, const auto &y) { return x.id < y.id; });
    big.composition["wr"] = big.members.size();

    const std::vector<double> grid = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::set<std::string> previous;
    std::size_t violations = 0;
    std::vector<std::size_t> kept;
    for (double t : grid) {
        const auto f = filter_pool(big, predictions, t);
        std::set<std::string> ids;
        for (const auto &m : f.members) ids.insert(m.id);
        const auto oracle = std::count_if(predictions.begin(), predictions.end(), [&](const auto &kv) { return kv.second <= t; });
        if (static_cast<std::ptrdiff_t>(ids.size()) != oracle) ++violations;
        if (!std::includes(ids.begin(), ids.end(), previous.begin(), previous.end())) ++violations;
        previous = std::move(ids);
        kept.push_back(f.size());
    }
    return {reproducible && violations == 0,
            fmt::format("manifests {} under a fixed seed; kept {} over t = 0.1..0.9, {} monotonicity violations",
                        a == b ? "byte-identical" : "differ", fmt::join(kept, "/"), violations)};
}

// ─── Annotation protocol ────────────────────────────────────────────────────

Outcome annotation_protocol() {
    auto batteries = BatteryFile::load(kData / "battery.json");
    auto gold = load_gold_pairs(kData / "qualification_gold.jsonl");
    gold.resize(10);
    auto checks = load_gold_pairs(kData / "attention_checks.jsonl");
    AnnotationService service(batteries, gold, checks, 17);

    // Qualification at exactly 9 of 10.
    auto answers_with = [&](std::size_t correct) {
        std::vector<std::size_t> a;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            const int want = i < correct ? gold[i].expected_vote : 1 - gold[i].expected_vote;
            a.push_back(want == 0 ? 0 : 1);
        }
        return a;
    };
    std::string qual_detail;
    bool qual_ok = true;
    for (std::size_t correct = 7; correct <= 10; ++correct) {
        const auto w = fmt::format("q{}", correct);
        service.register_worker(w);
        const auto q = service.submit_qualification(w, answers_with(correct));
        const bool expect = correct >= 9;
        qual_ok &= (q == Qualification::qualified) == expect;
        qual_detail += fmt::format("{}/10 {} ", correct, to_string(q));
    }

    // 2000 pairs x 50 votes in blocks of 10 = 10^4 block submissions.
    std::vector<PairCandidate> pairs;
    for (std::size_t i = 0; i < 2000; ++i)
        pairs.push_back(PairCandidate::make(fmt::format("sentence {}", i), fmt::format("altered sentence {}", i),
                                            "word_replacement", "Male", "Female"));
    CampaignConfig cc;
    cc.id = "protocol";
    cc.pairs = pairs;
    cc.votes_per_pair = 50;
    cc.seed = 3;
    service.create_campaign(cc);

    constexpr std::size_t kWorkers = 64, kThreads = 16;
    std::vector<std::string> workers;
    for (std::size_t i = 0; i < kWorkers; ++i) {
        workers.push_back(fmt::format("w{:02d}", i));
        service.register_worker(workers.back());
        service.submit_qualification(workers.back(), answers_with(10));
    }
    // Workers w00..w03 fail the attention check on every third block.
    std::atomic<std::size_t> submitted{0}, flagged{0};
    std::mutex flagged_mutex;
    std::set<std::string> flagged_blocks;
    std::map<std::string, std::set<std::string>> flagged_pairs; // worker -> pairs in its flagged blocks
    const auto &battery = service.batteries().get("fairness_only");
    const auto fq = battery.fairness_question;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < kThreads; ++t)
        pool.emplace_back([&, t] {
            Rng rng(1000 + t);
            std::vector<std::size_t> mine;
            for (std::size_t w = t; w < kWorkers; w += kThreads) mine.push_back(w);
            std::vector<bool> done(mine.size(), false);
            std::size_t counter = 0;
            while (std::find(done.begin(), done.end(), false) != done.end()) {
                for (std::size_t k = 0; k < mine.size(); ++k) {
                    if (done[k]) continue;
                    const auto &worker = workers[mine[k]];
                    TaskBlock block;
                    try {
                        block = service.next_block("protocol", worker);
                    } catch (const PreconditionError &) {
                        done[k] = true;
                        continue;
                    }
                    const bool sabotage = mine[k] < 4 && (++counter % 3 == 0);
                    std::vector<ItemResponse> responses;
                    for (const auto &item : block.items) {
                        ItemResponse r;
                        std::size_t option = rng() % 4;
                        if (item.expected_vote) {
                            const int want = sabotage ? 1 - *item.expected_vote : *item.expected_vote;
                            option = want == 0 ? 0 : 1 + rng() % 3;
                        }
                        r.answers[fq] = option;
                        if (item.slot == block.explanation_index) r.explanation = "because";
                        responses.push_back(std::move(r));
                    }
                    const auto outcome = service.submit_block(worker, block.id, responses);
                    ++submitted;
                    if (outcome == BlockOutcome::flagged) {
                        ++flagged;
                        std::lock_guard lock(flagged_mutex);
                        flagged_blocks.insert(block.id);
                        for (const auto &item : block.items)
                            if (item.pair_id) flagged_pairs[worker].insert(*item.pair_id);
                    }
                }
            }
        });
    for (auto &th : pool) th.join();

    const auto records = service.vote_records("protocol");
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t duplicates = 0, flagged_votes = 0;
    for (const auto &r : records) {
        if (!seen.insert({r.worker, r.pair_id}).second) ++duplicates;
        if (auto it = flagged_pairs.find(r.worker); it != flagged_pairs.end() && it->second.count(r.pair_id))
            ++flagged_votes;
    }
    const auto votes = service.accepted_votes("protocol");
    std::size_t over_quota = 0;
    for (const auto &[id, v] : votes) over_quota += v.size() > cc.votes_per_pair;
    const std::size_t review_size = service.review_queue().size();

    service.close_campaign("protocol");
    const auto e1 = service.export_campaign("protocol");
    const auto e2 = service.export_campaign("protocol");
    const bool idempotent = e1.label_store_jsonl == e2.label_store_jsonl && e1.unlabeled == e2.unlabeled;

    const bool ok = qual_ok && submitted >= 10000 && flagged > 0 && flagged_votes == 0 && duplicates == 0 &&
                    over_quota == 0 && review_size == flagged && idempotent;
    return {ok, fmt::format("qualification [{}]; {} concurrent block submissions, {} flagged with {} stored votes; "
                            "{} votes, {} duplicate worker-pair votes; export {}",
                            text::trim(qual_detail), submitted.load(), flagged.load(), flagged_votes, records.size(),
                            duplicates, idempotent ? "idempotent" : "not idempotent")};
}

} // namespace

int main(int argc, char **argv) {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<Criterion> criteria = {
        {"metric-fixture", 1, metric_fixture},
        {"majority-vote-noise", 5, majority_noise},
        {"lipschitz-equivalence", 30, lipschitz_equivalence},
        {"greedy-masking-oracle", 10, greedy_masking},
        {"word-replacement-soundness", 10, word_replacement_soundness},
        {"acquisition-closed-forms", 1, acquisition_closed_forms},
        {"active-learning-benefit", 300, active_learning_benefit},
        {"clp-gradient", 1, clp_gradient},
        {"clp-lambda-direction", 300, clp_lambda_sweep},
        {"pool-algebra", 5, pool_algebra},
        {"annotation-protocol", 60, annotation_protocol},
    };
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) only.insert(argv[i]);
    int failures = 0;
    for (const auto &c : criteria) {
        if (!only.empty() && !only.count(c.name)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception &e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_seconds;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s %s: %s [%.2fs of %.0fs]%s\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(), secs,
                    c.budget_seconds, in_time ? "" : " over budget");
        std::fflush(stdout);
    }
    return failures;
}
