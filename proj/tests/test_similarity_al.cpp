#include <doctest.h>

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "fairpairs/active_learning.hpp"
#include "fairpairs/similarity.hpp"
#include "fairpairs/stub_backend.hpp"
#include "scratch.hpp"
#include "toy.hpp"

using namespace fairpairs;

namespace {

const Lexicon &shipped() {
    static const Lexicon lex = load_lexicon(std::filesystem::path(FAIRPAIRS_DATA_DIR) / "lexicon.json");
    return lex;
}

SimilarityModel toy_model(double dropout = 0.1, std::uint64_t seed = 1) {
    static stub::StubBackend backend;
    return SimilarityModel(backend.pair_backbone(), backend.tokenizer(), HeadSpec{HeadVariant::concat, 16, dropout},
                           0.5, seed);
}

PairCandidate pair(const std::string &s, const std::string &sp, std::string_view m = method::word_replacement,
                   const std::string &a = "White", const std::string &b = "Black") {
    return PairCandidate::make(s, sp, std::string(m), a, b);
}

} // namespace

TEST_CASE("similarity predictions") {
    auto m = toy_model();
    const auto p = pair("the white man", "the black man");
    m.zero_weights();
    CHECK(m.predict(p) == doctest::Approx(0.5));
    auto m2 = toy_model();
    CHECK(m2.predict(p, nullptr, 7) == m2.predict(p, nullptr, 7));
}

TEST_CASE("classification threshold is strict") {
    auto m = toy_model();
    CHECK(m.classify(0.5) == 0);
    CHECK(m.classify(0.6) == 1);
    m.set_threshold(0.0);
    CHECK(m.classify(1e-9) == 1);
    CHECK(m.classify(0.0) == 0);
    for (double p : {0.1, 0.3, 0.7})
        for (double t : {0.2, 0.5}) {
            m.set_threshold(t);
            CHECK(m.classify(p) <= m.classify(std::min(1.0, p + 0.1)));
        }
}

TEST_CASE("all head variants build and train") {
    stub::StubBackend backend;
    const auto pool = toy::similarity_pool(60, 0.5, 3, shipped());
    for (auto v : {HeadVariant::concat, HeadVariant::merge, HeadVariant::feature_diff, HeadVariant::bilinear}) {
        SimilarityModel m(backend.pair_backbone(), backend.tokenizer(), HeadSpec{v, 8, 0.1}, 0.5, 2);
        std::vector<Eigen::VectorXd> x;
        std::vector<double> y;
        for (const auto &p : pool) {
            x.push_back(m.features(p));
            y.push_back(p.method == method::word_replacement ? 0.0 : 1.0);
        }
        Rng rng(1);
        const auto losses = m.train(x, y, {10, 8, 1e-2, false}, rng);
        CHECK(losses.back() < losses.front());
        CHECK(head_variant_from_string(to_string(v)) == v);
    }
}

TEST_CASE("trained stub model separates a phi1 toy set") {
    auto m = toy_model();
    const auto pool = toy::similarity_pool(300, 0.5, 4, shipped());
    std::vector<Eigen::VectorXd> x;
    std::vector<double> y;
    for (const auto &p : pool) {
        x.push_back(m.features(p));
        y.push_back(p.method == method::word_replacement ? 0.0 : 1.0);
    }
    Rng rng(1);
    m.train(x, y, {20, 16, 1e-2, false}, rng);
    double s0 = 0, s1 = 0, n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) (y[i] ? s1 : s0) += m.predict(pool[i]), (y[i] ? n1 : n0) += 1;
    CHECK(s1 / n1 > s0 / n0);
}

TEST_CASE("feature cache") {
    auto m = toy_model(0.0);
    const auto pool = toy::similarity_pool(20, 0.5, 5, shipped());
    const auto cache = precompute_features(m, pool);
    CHECK(cache.size() == pool.size());
    for (const auto &p : pool) CHECK(m.predict(p, &cache) == m.predict(p));
    // Identity dropout: the MC mean equals the dropout-off prediction.
    const auto &p = pool[0];
    double mean = 0.0;
    for (std::uint64_t k = 0; k < 50; ++k) mean += m.predict(p, &cache, k) / 50.0;
    CHECK(mean == doctest::Approx(m.predict(p)).epsilon(1e-12));
}

TEST_CASE("similarity model save/load") {
    auto m = toy_model();
    stub::StubBackend backend;
    const auto back = SimilarityModel::load(m.save(), backend.pair_backbone(), backend.tokenizer());
    const auto p = pair("the white man", "the black man");
    CHECK(back.predict(p) == m.predict(p));
    CHECK(back.spec().hidden == 16);
}

TEST_CASE("variation ratio and closed-form scores") {
    CHECK(variation_ratio(0.5) == 0.5);
    CHECK(variation_ratio(0.9) == doctest::Approx(0.1));
    CHECK(variation_ratio(1.0) == 0.0);
    const std::vector<double> same(50, 0.8);
    CHECK(score_from_samples(Acquisition::lc, 0.8, same, 0.5) == doctest::Approx(0.2));
    CHECK(score_from_samples(Acquisition::lc_unc, 0.8, same, 0.5) == doctest::Approx(0.2));
    CHECK(score_from_samples(Acquisition::varra, 0.8, same, 0.5) == doctest::Approx(0.2));
    CHECK(score_from_samples(Acquisition::majority, 0.8, same, 0.5) == 0.0);
    CHECK(score_from_samples(Acquisition::bald, 0.8, same, 0.5) == 0.0);
    const std::vector<double> two = {0.2, 0.8};
    CHECK(score_from_samples(Acquisition::lc_unc, 0.5, two, 0.5) == doctest::Approx(0.5));
    CHECK(score_from_samples(Acquisition::varra, 0.5, two, 0.5) == doctest::Approx(0.2));
    CHECK(score_from_samples(Acquisition::majority, 0.5, two, 0.5) == doctest::Approx(0.5));
    CHECK(score_from_samples(Acquisition::bald, 0.5, two, 0.5) > 0.0);
}

TEST_CASE("random acquisition is reproducible") {
    auto m = toy_model();
    const auto pool = toy::similarity_pool(30, 0.5, 6, shipped());
    const AcquisitionConfig cfg{Acquisition::random, 0};
    CHECK(score_pool(cfg, m, pool, nullptr, 3) == score_pool(cfg, m, pool, nullptr, 3));
    CHECK(score_pool(cfg, m, pool, nullptr, 3) != score_pool(cfg, m, pool, nullptr, 4));
    CHECK(acquisition_from_string(to_string(Acquisition::lc_unc)) == Acquisition::lc_unc);
}

TEST_CASE("select_batch") {
    const std::map<std::string, double> scores = {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}};
    CHECK(select_batch(scores, {}, 2) == std::vector<std::string>{"a", "b"});
    CHECK(select_batch(scores, {"a"}, 2) == std::vector<std::string>{"b", "c"});
    CHECK(select_batch(scores, {"a"}, 2, true) == std::vector<std::string>{"a", "b"});
    bool short_batch = false;
    CHECK(select_batch(scores, {"a"}, 5, false, &short_batch).size() == 2);
    CHECK(short_batch);

    Rng rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::map<std::string, double> many;
    for (int i = 0; i < 1000; ++i) many[fmt::format("p{:04d}", i)] = std::round(u(rng) * 100) / 100;
    std::vector<std::pair<double, std::string>> all;
    for (const auto &[k, v] : many) all.emplace_back(-v, k);
    std::sort(all.begin(), all.end());
    const auto top = select_batch(many, {}, 100);
    for (std::size_t i = 0; i < 100; ++i) CHECK(top[i] == all[i].second);
}

TEST_CASE("vote aggregation and label store") {
    CHECK(aggregate(std::vector<int>{1, 1, 0}) == 1.0);
    CHECK(aggregate(std::vector<int>{1, 0}) == 0.5);
    CHECK(aggregate(std::vector<int>{0, 0, 0, 1}) == 0.0);
    CHECK_THROWS(aggregate(std::vector<int>{}));
    LabelStore s;
    s.add_votes("x", std::vector<int>{1, 0, 1});
    s.add_vote("y", 0);
    CHECK(s.aggregated("x") == 1.0);
    CHECK(LabelStore::from_jsonl_text(s.to_jsonl()).to_jsonl() == s.to_jsonl());
}

TEST_CASE("synthetic oracles") {
    SyntheticOracle phi1;
    CHECK(phi1.label(pair("a", "b")) == 0);
    CHECK(phi1.label(pair("a", "b", method::style_transfer)) == 1);
    SyntheticOracle phi2;
    phi2.kind = SyntheticOracle::Kind::phi2_axis;
    CHECK(phi2.label(pair("a", "b", method::style_transfer, "White", "Black")) == 0);
    CHECK(phi2.label(pair("a", "b", method::word_replacement, "White", "Muslim")) == 1);
    CHECK_THROWS(phi2.label(pair("a", "b", method::word_replacement, "White", "Martian")));
    Rng rng(1);
    CHECK(noisy_oracle_vote(phi1, pair("a", "b"), {0.0, 1}, rng) == 0);
    CHECK_THROWS(NoiseModel{0.5, 1}.validate());
}

TEST_CASE("majority flip probability") {
    CHECK(majority_flip_probability(0.3, 3) == doctest::Approx(0.216));
    CHECK(majority_flip_probability(0.3, 1) == doctest::Approx(0.3));
    CHECK(majority_flip_probability(0.0, 9) == 0.0);
}

TEST_CASE("relabel candidates") {
    auto m = toy_model(0.0);
    const auto pool = toy::similarity_pool(40, 0.5, 7, shipped());
    LabelStore store;
    for (std::size_t i = 0; i < pool.size(); ++i) store.add_vote(pool[i].id, i % 4 == 0 ? 1 : 0);
    const auto picked = relabel_candidates(m, store, pool, nullptr, 500);
    std::vector<std::pair<double, std::string>> oracle;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const double p = m.predict(pool[i]);
        if (i % 4 != 0 && m.classify(p) == 0) oracle.emplace_back(-variation_ratio(p), pool[i].id);
    }
    std::sort(oracle.begin(), oracle.end());
    REQUIRE(picked.size() == oracle.size());
    for (std::size_t i = 0; i < picked.size(); ++i) CHECK(picked[i] == oracle[i].second);
}

TEST_CASE("active learning loop") {
    const auto pool = toy::similarity_pool(5, 0.5, 8, shipped());
    REQUIRE(pool.size() == 5);
    auto m = toy_model();
    OracleLabelSource src(SyntheticOracle{}, NoiseModel{}, 1);
    LoopConfig cfg;
    cfg.rounds = 1;
    cfg.batch = 3;
    const auto r = run_loop(m, pool, src, cfg);
    CHECK(r.labels.size() == 3);
    CHECK(r.rounds.size() == 1);

    const auto big = toy::similarity_pool(200, 0.3, 9, shipped());
    auto run = [&] {
        auto model = toy_model();
        OracleLabelSource s(SyntheticOracle{}, NoiseModel{0.2, 3}, 5);
        LoopConfig c;
        c.rounds = 3;
        c.batch = 20;
        c.seed = 5;
        c.regime = Regime::retrain_reweigh;
        auto res = run_loop(model, big, s, c);
        return std::make_pair(res.labels.to_jsonl(), model.save().dump());
    };
    CHECK(run() == run());
    CHECK(round_metrics_csv(r.rounds).rfind("round,", 0) == 0);
}

TEST_CASE("stored label source reports missing pairs as failed") {
    const auto pool = toy::similarity_pool(4, 0.5, 10, shipped());
    LabelStore store;
    store.add_votes(pool[0].id, std::vector<int>{1, 1, 0});
    StoredLabelSource src(store);
    const auto out = src.query({&pool[0], &pool[1]});
    REQUIRE(out.size() == 2);
    CHECK(out[0] == std::vector<int>{1, 1, 0});
    CHECK_FALSE(out[1]);
}
