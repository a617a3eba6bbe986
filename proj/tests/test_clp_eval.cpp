#include <doctest.h>

#include <cmath>

#include <fmt/format.h>

#include "fairpairs/clp_train.hpp"
#include "fairpairs/fairness_eval.hpp"
#include "fairpairs/stub_backend.hpp"
#include "toy.hpp"

using namespace fairpairs;

namespace {

const Lexicon &shipped() {
    static const Lexicon lex = load_lexicon(std::filesystem::path(FAIRPAIRS_DATA_DIR) / "lexicon.json");
    return lex;
}

PairCandidate pair(const std::string &s, const std::string &sp) {
    return PairCandidate::make(s, sp, std::string(method::word_replacement), "Male", "Female");
}

// Predicts 1 iff the text contains `word`.
eval::BatchClassifier contains(const std::string &word) {
    return [word](std::span<const std::string> texts) {
        std::vector<int> out;
        for (const auto &t : texts) out.push_back(t.find(word) != std::string::npos);
        return out;
    };
}

} // namespace

TEST_CASE("clp penalty") {
    const std::vector<double> a = {0.3}, b = {0.1};
    CHECK(clp_penalty(a, b, 5.0) == doctest::Approx(1.0));
    CHECK(clp_penalty(a, a, 5.0) == 0.0);
    CHECK(clp_penalty(a, b, 0.0) == 0.0);
    const std::vector<double> c = {0.0, 3.0}, d = {4.0, 0.0};
    CHECK(clp_penalty(c, d, 1.0) == doctest::Approx(5.0));
    CHECK_THROWS(clp_penalty(a, c, 1.0));
}

TEST_CASE("partner selection") {
    const auto p1 = pair("s", "a"), p2 = pair("s", "b"), p3 = pair("s", "c");
    PartnerIndex idx({p1, p2, p3}, {{p1.id, 0.2}, {p2.id, 0.3}, {p3.id, 0.9}});
    Rng rng(1);
    CHECK(select_clp_pair("other", idx, 0.5, PartnerOrientation::constraint, rng) == "other");
    CHECK(select_clp_pair("s", idx, 0.5, PartnerOrientation::literal, rng) == "c");
    Rng r1(4), r2(4);
    std::set<std::string> seen;
    for (int i = 0; i < 20; ++i) {
        const auto x = select_clp_pair("s", idx, 0.5, PartnerOrientation::constraint, r1);
        CHECK(x == select_clp_pair("s", idx, 0.5, PartnerOrientation::constraint, r2));
        seen.insert(x);
    }
    CHECK(seen == std::set<std::string>{"a", "b"});
    CHECK(select_clp_pair("s", idx, 0.1, PartnerOrientation::constraint, rng) == "s");
    CHECK_THROWS_AS(PartnerIndex({p1}, {}), PreconditionError);
}

TEST_CASE("lambda 0 and self pairing reduce to plain training") {
    stub::StubBackend backend;
    const auto train = toy::biased_corpus(200, 1, Split::train);
    Rng rng(2);
    const auto pool = enumerate_wr_candidates(train, shipped(), toy::groups(), rng);
    std::map<std::string, double> pred;
    for (const auto &p : pool) pred[p.id] = 0.0;
    PartnerIndex idx(pool, pred);

    ClpConfig cfg = ClpConfig::reference(0.0);
    cfg.learning_rate = 0.05;
    cfg.seed = 3;
    ClpTrace t0, tb;
    const auto zero = train_clp(train, idx, backend, cfg, &t0);
    const auto base = train_baseline(train, backend, cfg, &tb);
    CHECK(zero->save() == base->save());
    CHECK(t0.epoch_loss == tb.epoch_loss);

    // Every candidate judged non-constraint: all members pair with themselves.
    std::map<std::string, double> none;
    for (const auto &p : pool) none[p.id] = 1.0;
    ClpConfig five = cfg;
    five.lambda = 5.0;
    ClpTrace ts;
    train_clp(train, PartnerIndex(pool, none), backend, five, &ts);
    CHECK(ts.epoch_loss == tb.epoch_loss);
    CHECK(ts.paired == 0);
    for (double p : ts.epoch_penalty) CHECK(p == 0.0);
}

TEST_CASE("clp config validation") {
    ClpConfig c;
    c.lambda = -1.0;
    CHECK_THROWS(c.validate());
    CHECK(ClpConfig::reference().lambda == 5.0);
    CHECK(partner_orientation_from_string("literal") == PartnerOrientation::literal);
}

TEST_CASE("censoring") {
    const std::set<std::string> female = {"Female"};
    CHECK(censor("the woman left", shipped(), female) == "the [GROUP] left");
    CHECK(censor("the dog left", shipped(), female) == "the dog left");
    const auto once = censor("Women and a trans female", shipped(), {"Female", "Transgender"});
    CHECK(once == "[GROUP] and a [GROUP]");
    CHECK(censor(once, shipped(), {"Female", "Transgender"}) == once);
}

TEST_CASE("individual fairness") {
    const std::vector<PairCandidate> ident = {PairCandidate::make("a", "a", "x", "", "", {}, true)};
    CHECK(eval::individual_fairness(contains("a"), ident) == 100.0);
    const std::vector<PairCandidate> four = {pair("w a", "w b"), pair("x a", "x c"), pair("y a", "y"),
                                             pair("z", "z b")};
    CHECK(eval::individual_fairness([](std::span<const std::string> t) { return std::vector<int>(t.size(), 1); },
                                    four) == 100.0);
    CHECK(eval::individual_fairness(contains("b"), four) == doctest::Approx(50.0));
    CHECK(eval::individual_fairness(contains("c"), four) == doctest::Approx(75.0));
    const std::vector<int> x = {1, 0, 1, 1}, y = {1, 1, 1, 0};
    CHECK(eval::individual_fairness(x, y) == 50.0);
    CHECK_THROWS(eval::individual_fairness(contains("a"), std::vector<PairCandidate>{}));
}

TEST_CASE("confusion rates") {
    const std::vector<int> labels = {1, 1, 0, 0};
    CHECK(eval::balanced_accuracy(labels, labels) == 100.0);
    const std::vector<int> preds = {1, 0, 0, 1};
    const auto r = eval::confusion_rates(preds, labels);
    CHECK(r.tpr == 50.0);
    CHECK(r.tnr == 50.0);
    CHECK(r.acc == 50.0);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> p(30), l(30);
        int tp = 0, tn = 0, pos = 0, neg = 0;
        for (int i = 0; i < 30; ++i) {
            p[i] = rng() % 2;
            l[i] = i < 2 ? i : rng() % 2;
            (l[i] ? pos : neg)++;
            tp += p[i] && l[i];
            tn += !p[i] && !l[i];
        }
        const auto q = eval::confusion_rates(p, l);
        CHECK(q.tpr == doctest::Approx(100.0 * tp / pos));
        CHECK(q.tnr == doctest::Approx(100.0 * tn / neg));
        CHECK(eval::balanced_accuracy(p, l) == doctest::Approx((q.tpr + q.tnr) / 2));
    }
    CHECK_THROWS_AS(eval::balanced_accuracy(std::vector<int>{1}, std::vector<int>{1}), PreconditionError);
}

TEST_CASE("pairwise gaps") {
    const std::vector<double> tprs = {80, 90, 100};
    const auto [mean, max] = eval::pairwise_gaps(tprs);
    CHECK(mean == doctest::Approx(40.0 / 3));
    CHECK(max == 20.0);
    const std::vector<double> same = {70, 70};
    CHECK(eval::pairwise_gaps(same).first == 0.0);
}

TEST_CASE("equality of odds gaps") {
    const auto test = toy::biased_corpus(400, 5, Split::test);
    const auto g = eval::eo_gaps(contains("stupid"), test, {"Male", "Female"});
    CHECK(g.tnr_max == 0.0);
    CHECK(g.per_group.size() == 2);
    const auto biased = eval::eo_gaps(contains("black"), test, {"Black", "White"});
    CHECK(biased.tpr_max == 100.0);
}

TEST_CASE("cross evaluation") {
    const auto test = toy::biased_corpus(100, 6, Split::test);
    const std::vector<PairCandidate> pa = {pair("a x", "b x"), pair("a y", "b y")};
    const std::vector<PairCandidate> pb = {pair("c x", "d x"), pair("c y", "x y")};
    const std::vector<eval::NamedClassifier> clfs = {{"fa", contains("x"), "A"}, {"fb", contains("c"), "B"}};
    const auto r = eval::cross_eval(clfs, {{"A", pa}, {"B", pb}}, test);
    CHECK(r.fairness[0][0] == eval::individual_fairness(contains("x"), pa));
    CHECK(r.fairness[0][0] == 100.0);
    CHECK(r.fairness[0][1] == 50.0);
    CHECK(r.fairness[1][0] == 100.0);
    CHECK(r.fairness[1][1] == 0.0);
    CHECK_FALSE(r.diagonal_dominant());
    const auto one = eval::cross_eval({clfs[0]}, {{"A", pa}}, test);
    CHECK(one.diagonal_dominant());
    CHECK(r.render_table().find("fa") != std::string::npos);
    CHECK(r.to_csv().rfind("classifier,", 0) == 0);
}

TEST_CASE("lipschitz equivalence fixtures") {
    eval::FiniteMetricSpace s;
    s.d = {{0.0, 0.5}, {0.5, 0.0}};
    const std::vector<int> constant = {1, 1};
    const auto c = eval::lipschitz_equivalence_check(s, constant);
    CHECK(c.lipschitz);
    CHECK(c.constraint_satisfied);
    const std::vector<int> split = {0, 1};
    const auto v = eval::lipschitz_equivalence_check(s, split);
    CHECK_FALSE(v.lipschitz);
    CHECK_FALSE(v.constraint_satisfied);
    REQUIRE(v.witness);
    CHECK(v.witness->first == 0);
    CHECK(v.witness->second == 1);
    s.lipschitz_constant = 2.0;
    CHECK(eval::lipschitz_equivalence_check(s, split).lipschitz);
    CHECK(eval::similarity_indicator(s, 0, 1) == 1);
    s.d[0][1] = -1.0;
    CHECK_THROWS(s.validate());
}

TEST_CASE("interval and formatting") {
    const std::vector<double> v = {1.0, 1.0, 1.0};
    CHECK(eval::mean_ci(v).half_width == 0.0);
    CHECK(eval::format_percent(78.84) == "78.8");
    CHECK(eval::format_percent(100.0) == "100.0");
}
