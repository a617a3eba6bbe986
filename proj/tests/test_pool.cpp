#include <doctest.h>

#include <fmt/format.h>

#include "fairpairs/pair.hpp"
#include "fairpairs/pool.hpp"
#include "scratch.hpp"

using namespace fairpairs;

namespace {

std::vector<PairCandidate> source(const std::string &tag, std::size_t n, bool passed = true) {
    std::vector<PairCandidate> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto p = PairCandidate::make(fmt::format("{} s {}", tag, i), fmt::format("{} t {}", tag, i), tag, "Male",
                                     "Female");
        p.filter_passed = passed;
        out.push_back(std::move(p));
    }
    return out;
}

CommentStore labeled_store(std::size_t toxic, std::size_t clean) {
    std::vector<Comment> cs;
    for (std::size_t i = 0; i < toxic + clean; ++i) {
        Comment c;
        c.id = fmt::format("c{}", i);
        c.text = fmt::format("comment {}", i);
        c.toxicity_fraction = i < toxic ? 0.9 : 0.0;
        cs.push_back(c);
    }
    return CommentStore(cs);
}

} // namespace

TEST_CASE("pair ids and degenerate pairs") {
    const auto a = PairCandidate::make("x", "y", "word_replacement", "Male", "Female");
    CHECK(a.id == pair_id("x", "y", "word_replacement"));
    CHECK(a.id != pair_id("y", "x", "word_replacement"));
    CHECK_THROWS_AS(PairCandidate::make("x", "x", "word_replacement", "Male", "Female"), PreconditionError);
    CHECK(PairCandidate::from_json(a.to_json()) == a);
}

TEST_CASE("assemble sizes and shortfall") {
    const auto p = assemble_c(source("word_replacement", 1), source("style_transfer", 1), source("gpt_edit", 1),
                              {1, 1, 1}, 0);
    CHECK(p.size() == 3);
    CHECK(p.composition.at("wr") == 1);
    CHECK_THROWS_WITH_AS(
        assemble("C", {{"wr", source("word_replacement", 10), 20}}, 0), "shortfall wr: 10 < 20", PreconditionError);
    // Only filter-passed candidates count.
    CHECK_THROWS_AS(assemble("C", {{"st", source("style_transfer", 5, false), 1}}, 0), PreconditionError);
}

TEST_CASE("assemble skips ids already taken") {
    const auto shared = source("word_replacement", 5);
    AssembleReport report;
    const auto p = assemble("C", {{"a", shared, 5}, {"b", shared, 0}}, 1, Split::train, &report);
    CHECK(p.size() == 5);
    p.validate();
}

TEST_CASE("default pool sizes") {
    const PoolSizes s;
    CHECK(s.wr + s.st + s.llm == 100000);
    const LlmModeSizes m;
    CHECK(m.zero_shot + m.edit + m.postprocess == s.llm);
}

TEST_CASE("test pool is a floor fraction with proportional allocation") {
    const auto c = assemble_c(source("word_replacement", 2), source("style_transfer", 1), source("gpt_edit", 1),
                              {2, 1, 1}, 0);
    const auto t = make_test_pool(c, {{"wr", source("word_replacement_t", 5), 0}, {"st", source("style_transfer_t", 5), 0},
                                      {"llm", source("gpt_edit_t", 5), 0}},
                                  0);
    CHECK(t.size() == 1);
    CHECK(t.split == Split::test);
    const auto alloc = proportional_allocation({{"wr", 42500}, {"st", 42500}, {"llm", 15000}}, 25000);
    CHECK(alloc.at("wr") == 10625);
    CHECK(alloc.at("st") == 10625);
    CHECK(alloc.at("llm") == 3750);
    const auto ties = proportional_allocation({{"a", 1}, {"b", 1}, {"c", 1}}, 2);
    CHECK(ties.at("a") == 1);
    CHECK(ties.at("b") == 1);
    CHECK(ties.at("c") == 0);
}

TEST_CASE("adverse pairs join toxic and non-toxic comments") {
    const auto base = assemble("C", {{"wr", source("word_replacement", 3), 3}}, 0);
    const auto store = labeled_store(4, 4);
    CHECK(make_adverse(base, store, 0, 1).members == base.members);
    const auto adv = make_adverse(base, store, 3, 1, "C_adverse");
    CHECK(adv.size() == 6);
    CHECK(adv.composition.at("adverse") == 3);
    for (const auto &m : adv.members)
        if (m.method == "adverse") {
            CHECK(store.find(m.provenance["s_comment_id"])->toxicity_fraction > 0.5);
            CHECK(store.find(m.provenance["s_prime_comment_id"])->toxicity_fraction <= 0.5);
        }
    CHECK_THROWS_AS(make_adverse(base, store, 5, 1), PreconditionError);
}

TEST_CASE("filter_pool keeps p <= t") {
    const auto base = assemble("C", {{"wr", source("word_replacement", 2), 2}}, 0);
    std::map<std::string, double> pred = {{base.members[0].id, 0.4}, {base.members[1].id, 0.6}};
    const auto half = filter_pool(base, pred, 0.5);
    REQUIRE(half.size() == 1);
    CHECK(half.members[0].id == base.members[0].id);
    CHECK(half.notes["retention_percent"].get<double>() == doctest::Approx(50.0));
    CHECK(filter_pool(base, pred, 1.0).size() == 2);
    CHECK_THROWS_AS(filter_pool(base, {}, 0.5), PreconditionError);
}

TEST_CASE("pools round-trip through disk") {
    Scratch tmp;
    const auto c = assemble_c(source("word_replacement", 4), source("style_transfer", 4), source("gpt_edit", 4),
                              {2, 2, 1}, 5);
    c.save(tmp.dir);
    const auto back = ConstraintPool::load(tmp.dir, "C");
    CHECK(back.manifest_text() == c.manifest_text());
    CHECK(back.members == c.members);
}
