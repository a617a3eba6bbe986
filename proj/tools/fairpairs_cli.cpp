#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fairpairs/pipeline.hpp"

using namespace fairpairs;

namespace {

struct Mirror {
    std::string key;
    std::string value;
};

// Adds `--flag` that becomes a `key=value` override when given.
void mirror(CLI::App *app, std::vector<Mirror> &out, const std::string &flag, const std::string &key,
            const std::string &help) {
    auto *slot = &out.emplace_back(Mirror{key, ""});
    app->add_option(flag, slot->value, help + " (" + key + ")");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"fairpairs: generate, validate and train with individual-fairness constraints"};
    app.require_subcommand(1);

    std::string run_dir;
    std::optional<std::string> config_file;
    std::vector<std::string> sets;
    bool as_json = false;
    std::string log_level = "info";
    app.add_option("--run", run_dir, "run directory")->required();
    app.add_option("--config", config_file, "JSON config overlaid on the run's config.json");
    app.add_option("--set", sets, "override a config key, e.g. --set al.rounds=3")->take_all();
    app.add_flag("--json", as_json, "print reports as JSON");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

    // Reserve so pointers into the vector stay valid.
    std::vector<Mirror> mirrors;
    mirrors.reserve(64);

    auto *ingest = app.add_subcommand("ingest", "load the corpus CSV and split it");
    mirror(ingest, mirrors, "--csv", "corpus.csv", "corpus CSV");
    mirror(ingest, mirrors, "--columns", "corpus.columns", "column mapping JSON");
    mirror(ingest, mirrors, "--train-ratio", "corpus.train_ratio", "train fraction");

    auto *train_groups = app.add_subcommand("train-groups", "train the group-presence classifier");
    mirror(train_groups, mirrors, "--ba-threshold", "groups.ba_threshold", "eligibility threshold, percent");

    std::string method;
    auto *generate = app.add_subcommand("generate", "generate candidate pairs");
    generate->add_option("method", method, "wr, wr50, st or llm")->required()->check(CLI::IsMember({"wr", "wr50", "st", "llm"}));
    mirror(generate, mirrors, "--lexicon", "generate.lexicon", "lexicon JSON");
    mirror(generate, mirrors, "--fill-table", "st.fill_table", "infill table JSONL");
    mirror(generate, mirrors, "--replay", "llm.replay", "recorded LLM responses");
    mirror(generate, mirrors, "--record", "llm.record", "append LLM exchanges here");

    auto *pool = app.add_subcommand("pool", "assemble, extend or filter constraint pools");
    pool->require_subcommand(1);
    auto *assemble = pool->add_subcommand("assemble", "sample C and C_test from the candidates");
    mirror(assemble, mirrors, "--name", "pool.name", "pool name");
    mirror(assemble, mirrors, "--wr", "pool.wr", "word-replacement pairs");
    mirror(assemble, mirrors, "--st", "pool.st", "style-transfer pairs");
    mirror(assemble, mirrors, "--llm", "pool.llm", "LLM pairs");
    auto *adverse = pool->add_subcommand("adverse", "add toxic/non-toxic pairs to a pool");
    mirror(adverse, mirrors, "--pool", "pool.source", "source pool");
    mirror(adverse, mirrors, "--n", "pool.adverse", "adverse pairs");
    mirror(adverse, mirrors, "--name", "pool.name", "output pool name");
    auto *filter = pool->add_subcommand("filter", "keep the pairs the similarity model judges constraints");
    mirror(filter, mirrors, "--pool", "pool.source", "source pool");
    mirror(filter, mirrors, "--t", "pool.filter_threshold", "similarity threshold");
    mirror(filter, mirrors, "--name", "pool.name", "output pool name");

    auto *al_run = app.add_subcommand("al-run", "active learning of the similarity model");
    mirror(al_run, mirrors, "--labels", "al.labels", "oracle:phi1, oracle:phi2 or service:<campaign>");
    mirror(al_run, mirrors, "--pool", "al.pool", "unlabeled pool");
    mirror(al_run, mirrors, "--rounds", "al.rounds", "rounds");
    mirror(al_run, mirrors, "--batch", "al.batch", "queries per round");
    mirror(al_run, mirrors, "--criterion", "al.criterion", "RANDOM, LC, LC_UNC, BALD, VARRA or MAJORITY");
    mirror(al_run, mirrors, "--flip", "al.flip_probability", "oracle flip probability");
    mirror(al_run, mirrors, "--label-export", "al.label_export", "exported campaign labels");

    auto *train_clp = app.add_subcommand("train-clp", "train a downstream classifier");
    mirror(train_clp, mirrors, "--pool", "clp.pool", "constraint pool");
    mirror(train_clp, mirrors, "--lambda", "clp.lambda", "pairing weight");
    mirror(train_clp, mirrors, "--name", "clp.name", "model name");
    mirror(train_clp, mirrors, "--censor", "clp.censor", "true to train the censoring baseline");

    auto *evaluate = app.add_subcommand("evaluate", "balanced accuracy and pool fairness of every model");
    mirror(evaluate, mirrors, "--restrict", "eval.restrict_oracle", "none, phi1 or phi2");

    auto *serve = app.add_subcommand("serve", "run the annotation service");
    mirror(serve, mirrors, "--host", "serve.host", "bind address");
    mirror(serve, mirrors, "--port", "serve.port", "port");

    CLI11_PARSE(app, argc, argv);

    spdlog::set_default_logger(spdlog::stderr_color_mt("fairpairs"));
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        std::vector<std::string> overrides = sets;
        for (const auto &m : mirrors)
            if (!m.value.empty()) overrides.push_back(m.key + "=" + m.value);
        const auto resolved = pipeline::resolve_config(run_dir, config_file, overrides);

        pipeline::RunLock lock(run_dir);
        pipeline::Context ctx(run_dir, resolved);

        std::string stage;
        std::function<pipeline::StageResult()> run;
        if (*ingest) stage = "ingest", run = [&] { return pipeline::ingest(ctx); };
        else if (*train_groups) stage = "train-groups", run = [&] { return pipeline::train_groups(ctx); };
        else if (*generate) stage = "generate-" + method, run = [&] { return pipeline::generate(ctx, method); };
        else if (*assemble) stage = "pool-assemble", run = [&] { return pipeline::pool_assemble(ctx); };
        else if (*adverse) stage = "pool-adverse", run = [&] { return pipeline::pool_adverse(ctx); };
        else if (*filter) stage = "pool-filter", run = [&] { return pipeline::pool_filter(ctx); };
        else if (*al_run) stage = "al-run", run = [&] { return pipeline::al_run(ctx); };
        else if (*train_clp) stage = "train-clp", run = [&] { return pipeline::train_clp(ctx); };
        else if (*evaluate) stage = "evaluate", run = [&] { return pipeline::evaluate(ctx); };
        else if (*serve) stage = "serve", run = [&] { return pipeline::serve(ctx); };

        pipeline::snapshot_config(ctx, stage);
        const auto result = run();
        if (as_json) std::cout << result.report.dump(2) << '\n';
        else std::cout << result.text;
        return 0;
    } catch (const std::exception &e) {
        spdlog::error("{}", e.what());
        if (as_json) std::cout << json{{"error", e.what()}}.dump(2) << '\n';
        return 1;
    }
}
