#include <doctest.h>

#include "fairpairs/llm_rewrite.hpp"
#include "fairpairs/stub_backend.hpp"
#include "scratch.hpp"

using namespace fairpairs;

namespace {

const Lexicon &shipped() {
    static const Lexicon lex = load_lexicon(std::filesystem::path(FAIRPAIRS_DATA_DIR) / "lexicon.json");
    return lex;
}

const std::string kSource = "OK, so now I'm confused.  Is it or is it not OK to mock a reporter's physical handicap?  "
                            "Call a Latina beauty queen \"Miss Housekeeping\"?";
const std::string kRecorded = "  Is it or is it not OK to mock a reporter's physical handicap? Call a Muslim beauty "
                              "queen \"Miss Housekeeping\"?";

} // namespace

TEST_CASE("request construction per mode") {
    const auto z = build_request(RewriteMode::zero_shot, "some text", "Atheist", "Homosexual", shipped());
    CHECK(z.prompt.rfind("Please rewrite the following sentence to be about homosexual rather than atheist:", 0) == 0);
    CHECK(z.prompt.substr(z.prompt.size() - 10) == "\nsome text");
    CHECK(z.model == "text-davinci-001");

    const auto e = build_request(RewriteMode::edit, "some text", "Atheist", "Homosexual", shipped());
    CHECK(e.instruction == "Rewrite the text to be about homosexual rather than atheist");
    CHECK(e.input == "some text");
    CHECK(e.prompt.empty());

    CHECK_THROWS_AS(build_request(RewriteMode::postprocess_wr, "x", "Female", "Male", shipped()), PreconditionError);
    const auto p = build_request(RewriteMode::postprocess_wr, "the woman", "Female", "Male", shipped(), {},
                                 std::string("the man"));
    CHECK(p.input == "the man");
    CHECK(p.instruction == kPostprocessInstruction);
}

TEST_CASE("request hashes are stable and sensitive") {
    const auto a = build_request(RewriteMode::zero_shot, "t", "Female", "Male", shipped());
    auto b = a;
    CHECK(a.hash() == b.hash());
    b.temperature = 0.5;
    CHECK(a.hash() != b.hash());
    CHECK(a.hash().size() == 64);
}

TEST_CASE("normalize") {
    CHECK(normalize("  hello") == "hello");
    CHECK(normalize("\"hello\"") == "hello");
    CHECK(normalize("a  b") == "a b");
    CHECK_THROWS_AS(normalize("   "), FormatError);
}

TEST_CASE("replay serves recorded output and rejects unknown requests") {
    ReplayLlmClient client;
    const auto req = build_request(RewriteMode::zero_shot, kSource, "Latino", "Muslim", shipped());
    client.add(req, kRecorded);
    CHECK(client.complete(req) == kRecorded);
    CHECK(normalize(client.complete(req)).rfind("Is it or is it not OK", 0) == 0);
    const auto other = build_request(RewriteMode::edit, kSource, "Latino", "Muslim", shipped());
    CHECK_THROWS_AS(client.complete(other), Error);
}

TEST_CASE("recording produces a replayable log") {
    Scratch tmp;
    auto inner = std::make_shared<ReplayLlmClient>();
    const auto req = build_request(RewriteMode::zero_shot, kSource, "Latino", "Muslim", shipped());
    inner->add(req, kRecorded);
    {
        RecordingLlmClient rec(inner, tmp.dir / "log.jsonl");
        CHECK(rec.complete(req) == kRecorded);
    }
    ReplayLlmClient replay(tmp.dir / "log.jsonl");
    CHECK(replay.size() == 1);
    CHECK(replay.complete(req) == kRecorded);
}

TEST_CASE("live client needs its key from the environment") {
    LlmConfig cfg;
    cfg.api_key_env = "FAIRPAIRS_TEST_UNSET_KEY";
    ::unsetenv("FAIRPAIRS_TEST_UNSET_KEY");
    CHECK_THROWS(HttpLlmClient(cfg));
}

TEST_CASE("llm config validation and budgets") {
    LlmConfig cfg;
    cfg.temperature = -1.0;
    CHECK_THROWS(cfg.validate());
    CHECK(LlmConfig::from_json(LlmConfig{}.to_json()).to_json() == LlmConfig{}.to_json());
    CHECK(LlmBudget::extended(RewriteMode::zero_shot).max_attempts == 2250u);
    CHECK(LlmBudget::extended(RewriteMode::zero_shot).target_successes == 250u);
    CHECK(LlmBudget::extended(RewriteMode::edit).max_attempts == 750u);
    CHECK_FALSE(LlmBudget::extended(RewriteMode::postprocess_wr).max_attempts);
    CHECK(method_tag(RewriteMode::postprocess_wr) == "gpt_postprocess");
}

TEST_CASE("generation respects the attempt budget and the post-filter") {
    auto clf = std::make_shared<stub::StubClassifier>(2, std::make_shared<WhitespaceTokenizer>());
    clf->set_bias(0, -2.0);
    clf->set_bias(1, -2.0);
    clf->set_weight(0, "woman", 4.0);
    clf->set_weight(1, "man", 4.0);
    GroupClassifier gc;
    gc.backend = clf;
    gc.groups = {"Female", "Male"};

    std::vector<Comment> cs;
    ReplayLlmClient client;
    for (int i = 0; i < 6; ++i) {
        Comment c;
        c.id = std::to_string(i);
        c.text = "the woman said " + std::to_string(i);
        c.group_fractions = std::map<std::string, double>{{"Female", 1.0}, {"Male", 0.0}};
        cs.push_back(c);
        const auto req = build_request(RewriteMode::zero_shot, c.text, "Female", "Male", shipped());
        client.add(req, i % 2 ? "the man said " + std::to_string(i) : "the woman said hi " + std::to_string(i));
    }
    const CommentStore store(cs);
    Rng rng(1);
    LlmStats stats;
    LlmBudget budget;
    budget.max_attempts = 4;
    const auto pairs = generate_llm_candidates(store, {"Female", "Male"}, shipped(), client, gc,
                                               RewriteMode::zero_shot, rng, {}, budget, 0.5,
                                               FilterOrientation::intent, &stats);
    CHECK(stats.attempts == 4);
    CHECK(pairs.size() == 4);
    std::size_t passed = 0;
    for (const auto &p : pairs) {
        CHECK(p.method == "gpt_zero_shot");
        passed += p.filter_passed;
    }
    CHECK(passed == stats.successes);
}
