#include <doctest.h>

#include <fmt/format.h>

#include "fairpairs/pipeline.hpp"
#include "fairpairs/text.hpp"
#include "scratch.hpp"

using namespace fairpairs;
namespace pl = fairpairs::pipeline;

TEST_CASE("config merge rejects unknown keys and wrong types") {
    const auto base = pl::default_config();
    CHECK(pl::merge_config(base, json{{"al", {{"rounds", 3}}}})["al"]["rounds"] == 3);
    CHECK(pl::merge_config(base, json{{"al", {{"rounds", 3}}}})["al"]["batch"] == base["al"]["batch"]);
    CHECK_THROWS_WITH_AS(pl::merge_config(base, json{{"al", {{"roundz", 3}}}}), "unknown config key 'al.roundz'",
                         FormatError);
    CHECK_THROWS_AS(pl::merge_config(base, json{{"al", {{"rounds", "three"}}}}), FormatError);
    CHECK(pl::merge_config(base, json{{"run", {{"backend_options", {{"anything", 1}}}}}})["run"]["backend_options"]
              ["anything"] == 1);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
    auto cfg = pl::default_config();
    pl::apply_override(cfg, "al.rounds=2");
    pl::apply_override(cfg, "al.criterion=BALD");
    pl::apply_override(cfg, "clp.censor=true");
    CHECK(cfg["al"]["rounds"] == 2);
    CHECK(cfg["al"]["criterion"] == "BALD");
    CHECK(cfg["clp"]["censor"] == true);
    CHECK_THROWS_AS(pl::apply_override(cfg, "al.rounds"), FormatError);
    CHECK_THROWS_AS(pl::apply_override(cfg, "nope.x=1"), FormatError);
}

TEST_CASE("resolved config layers defaults, run config, file, overrides") {
    Scratch tmp;
    tmp.write("config.json", R"({"al": {"rounds": 4, "batch": 7}})");
    const auto file = tmp.write("extra.json", R"({"al": {"rounds": 5}})");
    const auto cfg = pl::resolve_config(tmp.dir, file, {"al.criterion=VARRA"});
    CHECK(cfg["al"]["rounds"] == 5);
    CHECK(cfg["al"]["batch"] == 7);
    CHECK(cfg["al"]["criterion"] == "VARRA");
    tmp.write("bad.json", "{not json");
    CHECK_THROWS_AS(pl::resolve_config(tmp.dir, tmp.dir / "bad.json", {}), FormatError);
}

TEST_CASE("run lock is exclusive and survives a dead holder") {
    Scratch tmp;
    {
        pl::RunLock lock(tmp.dir);
        CHECK_THROWS_AS(pl::RunLock(tmp.dir), PreconditionError);
    }
    CHECK_FALSE(std::filesystem::exists(tmp.dir / ".lock"));
    tmp.write(".lock", "999999999\n");
    CHECK_NOTHROW(pl::RunLock(tmp.dir));
}

TEST_CASE("artifacts are owned by the stage that wrote them") {
    Scratch tmp;
    pl::RunDir run(tmp.dir);
    CHECK_THROWS_WITH_AS(run.require("corpus/train.jsonl", "ingest"),
                         "missing upstream artifact 'corpus/train.jsonl' (produced by `fairpairs ingest`)",
                         PreconditionError);
    std::filesystem::create_directories(tmp.dir / "corpus");
    run.write("ingest", "corpus/train.jsonl", "x\n");
    CHECK(run.read("corpus/train.jsonl", "ingest") == "x\n");
    CHECK_NOTHROW(run.write("ingest", "corpus/train.jsonl", "y\n"));
    CHECK_THROWS_AS(run.write("train-groups", "corpus/train.jsonl", "z\n"), PreconditionError);
    text::write_file(tmp.dir / "corpus/train.jsonl", "tampered\n");
    CHECK_THROWS_WITH_AS(run.require("corpus/train.jsonl", "ingest"), doctest::Contains("changed"), PreconditionError);
    pl::RunDir reopened(tmp.dir);
    CHECK(reopened.has("corpus/train.jsonl"));
}

namespace {

// Runs the stub pipeline through evaluation and returns artifacts.json.
std::string full_run(const std::filesystem::path &dir) {
    auto cfg = pl::resolve_config(
        dir, std::nullopt,
        {fmt::format("corpus.csv={}", (pl::data_dir() / "toy_corpus.csv").string()), "pool.wr=200", "pool.st=60",
         "pool.llm=0", "similarity.hidden=8", "al.rounds=2", "al.batch=40", "clp.learning_rate=0.05",
         "clp.epochs=1"});
    pl::Context ctx(dir, cfg);
    auto stage = [&](const std::string &name, auto fn) {
        pl::snapshot_config(ctx, name);
        return fn();
    };
    stage("ingest", [&] { return pl::ingest(ctx); });
    stage("train-groups", [&] { return pl::train_groups(ctx); });
    stage("generate-wr", [&] { return pl::generate(ctx, "wr"); });
    stage("generate-st", [&] { return pl::generate(ctx, "st"); });
    stage("pool-assemble", [&] { return pl::pool_assemble(ctx); });
    stage("al-run", [&] { return pl::al_run(ctx); });
    const auto filtered = stage("pool-filter", [&] { return pl::pool_filter(ctx); });
    CHECK(filtered.text.find("retention") != std::string::npos);
    stage("train-clp", [&] { return pl::train_clp(ctx); });
    ctx.config["clp"]["lambda"] = 0.0;
    ctx.config["clp"]["name"] = "baseline";
    stage("train-clp", [&] { return pl::train_clp(ctx); });
    const auto ev = stage("evaluate", [&] { return pl::evaluate(ctx); });
    CHECK(ev.report.contains("equality_of_odds"));
    return text::read_file(dir / "artifacts.json");
}

} // namespace

TEST_CASE("stub pipeline is reproducible from its config and seeds") {
    Scratch a, b;
    const auto first = full_run(a.dir);
    CHECK(first == full_run(b.dir));
    pl::Context ctx(a.dir, pl::resolve_config(a.dir, std::nullopt, {}));
    CHECK(ctx.config["pool"]["wr"] == 200);
    // Re-running an upstream stage cannot clobber artifacts of another stage.
    CHECK_THROWS_AS(ctx.run.write("ingest", "groups/classifier.json", "{}"), PreconditionError);
}

TEST_CASE("stages name the missing upstream artifact") {
    Scratch tmp;
    pl::Context ctx(tmp.dir, pl::resolve_config(tmp.dir, std::nullopt, {}));
    CHECK_THROWS_WITH_AS(pl::train_groups(ctx), doctest::Contains("fairpairs ingest"), PreconditionError);
    CHECK_THROWS_WITH_AS(pl::al_run(ctx), doctest::Contains("missing upstream artifact"), PreconditionError);
}
