#include "fairpairs/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <fstream>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/active_learning.hpp"
#include "fairpairs/annotation_http.hpp"
#include "fairpairs/annotation_service.hpp"
#include "fairpairs/clp_train.hpp"
#include "fairpairs/corpus.hpp"
#include "fairpairs/fairness_eval.hpp"
#include "fairpairs/group_presence.hpp"
#include "fairpairs/lexicon.hpp"
#include "fairpairs/llm_rewrite.hpp"
#include "fairpairs/pool.hpp"
#include "fairpairs/similarity.hpp"
#include "fairpairs/stub_backend.hpp"
#include "fairpairs/style_transfer.hpp"
#include "fairpairs/text.hpp"

#ifndef FAIRPAIRS_DEFAULT_DATA_DIR
#define FAIRPAIRS_DEFAULT_DATA_DIR "data"
#endif

namespace fairpairs::pipeline {

namespace fs = std::filesystem;

json default_config() {
    return json::parse(R"({
  "run": {"seed": 0, "backend": "stub", "backend_options": {}},
  "corpus": {"csv": "", "columns": "", "max_tokens": 64, "train_ratio": 0.75},
  "groups": {"epochs": 3, "batch_size": 16, "learning_rate": 1e-5, "ba_threshold": 90.0,
             "exclusions": ["mental illness"]},
  "generate": {"lexicon": "", "lexicon_wr50": "", "filter_threshold": 0.5, "filter_orientation": "intent"},
  "st": {"fill_table": "", "beam_width": 5, "mask_threshold": 0.25, "max_mask_iterations": null,
         "selection": "logit_diff", "mask_token": "<mask>"},
  "llm": {"modes": ["zero_shot", "edit", "postprocess_wr"], "replay": "", "record": "", "live": false,
          "max_attempts": 75, "target_successes": null, "extended_budget": false,
          "temperature": 0.7, "top_p": 1.0, "max_tokens": 64,
          "completion_model": "text-davinci-001", "edit_model": "text-davinci-edit-001",
          "api_key_env": "OPENAI_API_KEY", "base_url": "https://api.openai.com",
          "requests_per_minute": 60.0, "max_retries": 3},
  "pool": {"wr": 42500, "st": 42500, "llm": 15000, "llm_by_mode": false,
           "gpt_zero_shot": 6200, "gpt_edit": 3500, "gpt_postprocess": 5300,
           "test_fraction": 0.25, "adverse": 10000, "source": "C", "filter_threshold": 0.5, "name": ""},
  "similarity": {"variant": "concat", "hidden": 768, "dropout": 0.1, "threshold": 0.5,
                 "epochs": 5, "batch_size": 16, "learning_rate": 1e-3},
  "al": {"labels": "oracle:phi1", "pool": "C", "rounds": 6, "batch": 1000, "criterion": "LC", "n_masks": 50,
         "regime": "per_round", "flip_probability": 0.0, "votes_per_pair": 1, "allow_relabel": false,
         "relabel": 0, "relabel_votes": 2, "label_export": ""},
  "clp": {"name": "", "pool": "", "lambda": 5.0, "threshold": 0.5, "orientation": "constraint", "epochs": 3,
          "batch_size": 32, "learning_rate": 1e-5, "reweight": true, "use_similarity": false, "censor": false},
  "eval": {"pools": [], "models": [], "restrict_oracle": "none"},
  "serve": {"host": "127.0.0.1", "port": 8080, "battery": "", "qualification": "", "attention_checks": "",
            "admin_token_env": "FAIRPAIRS_ADMIN_TOKEN"}
})");
}

namespace {

std::string type_name(const json &v) {
    if (v.is_number()) return "number";
    return v.type_name();
}

bool compatible(const json &base, const json &value) {
    if (base.is_null() || value.is_null()) return true;
    if (base.is_number() && value.is_number()) return true;
    return base.type() == value.type();
}

} // namespace

json merge_config(const json &base, const json &user, const std::string &prefix) {
    if (!user.is_object()) throw FormatError(fmt::format("config{}: expected an object", prefix.empty() ? "" : " key '" + prefix + "'"));
    json out = base;
    for (const auto &[key, value] : user.items()) {
        const auto dotted = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw FormatError(fmt::format("unknown config key '{}'", dotted));
        const auto &b = base.at(key);
        // Free-form maps such as backend options are taken as given.
        if (b.is_object() && b.empty()) {
            if (!value.is_object()) throw FormatError(fmt::format("config key '{}': expected object", dotted));
            out[key] = value;
        } else if (b.is_object()) {
            out[key] = merge_config(b, value, dotted);
        } else {
            if (!compatible(b, value))
                throw FormatError(fmt::format("config key '{}': expected {}, got {}", dotted, type_name(b), type_name(value)));
            out[key] = value;
        }
    }
    return out;
}

void apply_override(json &config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw FormatError(fmt::format("override '{}' is not key=value", assignment));
    const std::string key(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json patch = value;
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    config = merge_config(config, patch);
}

fs::path data_dir() {
    if (const char *env = std::getenv("FAIRPAIRS_DATA_DIR"); env && *env) return env;
    return FAIRPAIRS_DEFAULT_DATA_DIR;
}

// ─── Lock ───────────────────────────────────────────────────────────────────

RunLock::RunLock(fs::path dir) : path_(std::move(dir) / ".lock") {
    fs::create_directories(path_.parent_path());
    for (int attempt = 0; attempt < 2; ++attempt) {
        int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const auto pid = std::to_string(::getpid()) + "\n";
            [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            return;
        }
        if (errno != EEXIST) throw IoError(fmt::format("cannot create lock {}", path_.string()));
        long holder = 0;
        std::ifstream(path_) >> holder;
        if (holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM))
            throw PreconditionError(
                fmt::format("run directory {} is locked by process {}", path_.parent_path().string(), holder));
        spdlog::warn("removing stale lock left by process {}", holder);
        fs::remove(path_);
    }
    throw PreconditionError(fmt::format("could not lock {}", path_.parent_path().string()));
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ─── Run directory ──────────────────────────────────────────────────────────

RunDir::RunDir(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    const auto m = root_ / "artifacts.json";
    manifest_ = fs::exists(m) ? json::parse(text::read_file(m)) : json{{"artifacts", json::object()}};
}

bool RunDir::has(const std::string &rel) const { return manifest_["artifacts"].contains(rel); }

fs::path RunDir::require(const std::string &rel, std::string_view producer) const {
    const auto &arts = manifest_.at("artifacts");
    if (!arts.contains(rel) || !fs::exists(path(rel)))
        throw PreconditionError(fmt::format("missing upstream artifact '{}' (produced by `fairpairs {}`)", rel, producer));
    const auto expected = arts.at(rel).at("sha256").get<std::string>();
    if (text::sha256_hex(text::read_file(path(rel))) != expected)
        throw PreconditionError(fmt::format("artifact '{}' changed since it was recorded", rel));
    return path(rel);
}

std::string RunDir::read(const std::string &rel, std::string_view producer) const {
    return text::read_file(require(rel, producer));
}

void RunDir::check_owner(const std::string &stage, const std::string &rel) const {
    const auto &arts = manifest_.at("artifacts");
    if (arts.contains(rel)) {
        const auto owner = arts.at(rel).at("stage").get<std::string>();
        if (owner != stage)
            throw PreconditionError(fmt::format("'{}' belongs to stage '{}' and is not rewritten by '{}'", rel, owner, stage));
    }
}

void RunDir::write(const std::string &stage, const std::string &rel, std::string_view contents) {
    check_owner(stage, rel);
    text::write_file(path(rel), contents);
    record(stage, rel);
}

void RunDir::record(const std::string &stage, const std::string &rel) {
    check_owner(stage, rel);
    const auto data = text::read_file(path(rel));
    manifest_["artifacts"][rel] = {{"sha256", text::sha256_hex(data)}, {"stage", stage}, {"bytes", data.size()}};
    save_manifest();
}

void RunDir::save_manifest() const {
    const auto tmp = root_ / "artifacts.json.tmp";
    text::write_file(tmp, manifest_.dump(2) + "\n");
    fs::rename(tmp, root_ / "artifacts.json");
}

Context::Context(fs::path root, json resolved)
    : run(std::move(root)), config(std::move(resolved)),
      backend(make_backend(config.at("run").at("backend").get<std::string>(), config.at("run").at("backend_options"))) {}

std::uint64_t Context::seed(std::string_view stage) const {
    const auto base = config.at("run").at("seed").get<std::uint64_t>();
    return base ^ text::fnv1a(stage);
}

json resolve_config(const fs::path &run, const std::optional<fs::path> &file, const std::vector<std::string> &overrides) {
    json cfg = default_config();
    auto overlay = [&](const fs::path &p) {
        json user;
        try {
            user = json::parse(text::read_file(p));
        } catch (const json::parse_error &e) {
            throw FormatError(fmt::format("{}: {}", p.string(), e.what()));
        }
        cfg = merge_config(cfg, user);
    };
    if (fs::exists(run / "config.json")) overlay(run / "config.json");
    if (file) overlay(*file);
    for (const auto &o : overrides) apply_override(cfg, o);
    return cfg;
}

void snapshot_config(Context &ctx, const std::string &stage) {
    const auto text = ctx.config.dump(2) + "\n";
    if (!fs::exists(ctx.run.path("config.json"))) text::write_file(ctx.run.path("config.json"), text);
    ctx.run.write(stage, "configs/" + stage + ".json", text);
}

// ─── Shared loaders ─────────────────────────────────────────────────────────

namespace {

const json &section(const Context &ctx, const char *name) { return ctx.config.at(name); }

fs::path configured_path(const json &value, const fs::path &fallback) {
    const auto s = value.get<std::string>();
    return s.empty() ? fallback : fs::path(s);
}

CommentStore load_split(const Context &ctx, Split s) {
    const std::string rel = s == Split::train ? "corpus/train.jsonl" : "corpus/test.jsonl";
    return CommentStore::read_jsonl(ctx.run.require(rel, "ingest"));
}

GroupClassifier load_groups(const Context &ctx) {
    return GroupClassifier::load(json::parse(ctx.run.read("groups/classifier.json", "train-groups")), *ctx.backend);
}

std::set<std::string> load_eligible(const Context &ctx) {
    return json::parse(ctx.run.read("groups/eligible.json", "train-groups")).get<std::set<std::string>>();
}

Lexicon load_lex(const Context &ctx, bool wr50 = false) {
    const auto &g = section(ctx, "generate");
    auto lex = wr50 ? load_lexicon(configured_path(g.at("lexicon_wr50"), data_dir() / "lexicon_wr50.json"))
                    : load_lexicon(configured_path(g.at("lexicon"), data_dir() / "lexicon.json"));
    if (lex.groups().empty()) throw PreconditionError("lexicon lists no groups");
    return lex;
}

FilterOrientation filter_orientation(const Context &ctx) {
    const auto o = section(ctx, "generate").at("filter_orientation").get<std::string>();
    if (o == "intent") return FilterOrientation::intent;
    if (o == "literal") return FilterOrientation::literal;
    throw FormatError(fmt::format("generate.filter_orientation: unknown value '{}'", o));
}

std::string candidates_rel(std::string_view method, Split s) {
    return fmt::format("candidates/{}{}.jsonl", method, s == Split::test ? "_test" : "");
}

std::vector<PairCandidate> read_candidates(const Context &ctx, std::string_view method, Split s) {
    return read_pairs(ctx.run.require(candidates_rel(method, s), fmt::format("generate {}", method)));
}

void write_candidates(Context &ctx, const std::string &stage, std::string_view method, Split s,
                      std::vector<PairCandidate> pairs) {
    ctx.run.write(stage, candidates_rel(method, s), pairs_to_jsonl(std::move(pairs)));
}

std::string pool_rel(const std::string &name, bool manifest) {
    return fmt::format("pools/{}.{}", name, manifest ? "manifest.json" : "pairs.jsonl");
}

ConstraintPool load_pool(const Context &ctx, const std::string &name) {
    ctx.run.require(pool_rel(name, false), "pool");
    ctx.run.require(pool_rel(name, true), "pool");
    return ConstraintPool::load(ctx.run.path("pools"), name);
}

void save_pool(Context &ctx, const std::string &stage, const ConstraintPool &pool) {
    // Check ownership before the library writes the files.
    for (bool m : {false, true}) {
        const auto rel = pool_rel(pool.name, m);
        if (ctx.run.has(rel)) {
            const auto owner = ctx.run.manifest()["artifacts"][rel]["stage"].get<std::string>();
            if (owner != stage)
                throw PreconditionError(fmt::format("'{}' belongs to stage '{}' and is not rewritten by '{}'", rel, owner, stage));
        }
    }
    fs::create_directories(ctx.run.path("pools"));
    pool.save(ctx.run.path("pools"));
    ctx.run.record(stage, pool_rel(pool.name, false));
    ctx.run.record(stage, pool_rel(pool.name, true));
}

HeadSpec head_spec(const Context &ctx) {
    const auto &s = section(ctx, "similarity");
    return {head_variant_from_string(s.at("variant").get<std::string>()), s.at("hidden").get<std::size_t>(),
            s.at("dropout").get<double>()};
}

SimilarityModel load_similarity(const Context &ctx) {
    return SimilarityModel::load(json::parse(ctx.run.read("similarity/model.json", "al-run")),
                                 ctx.backend->pair_backbone(), ctx.backend->tokenizer());
}

SyntheticOracle oracle_for(std::string_view kind) {
    SyntheticOracle o;
    if (kind == "phi1") o.kind = SyntheticOracle::Kind::phi1_method;
    else if (kind == "phi2") o.kind = SyntheticOracle::Kind::phi2_axis;
    else throw FormatError(fmt::format("unknown oracle '{}' (phi1 or phi2)", kind));
    return o;
}

std::string format_number(double v) { return fmt::format("{}", v); }

} // namespace

// ─── Stages ─────────────────────────────────────────────────────────────────

StageResult ingest(Context &ctx) {
    const auto &c = section(ctx, "corpus");
    const auto csv = c.at("csv").get<std::string>();
    if (csv.empty()) throw PreconditionError("corpus.csv is not set");
    CorpusConfig cc;
    cc.max_tokens = c.at("max_tokens").get<std::size_t>();
    cc.train_ratio = c.at("train_ratio").get<double>();
    cc.seed = ctx.seed("ingest");
    cc.tokenizer = ctx.backend->tokenizer();
    if (const auto cols = c.at("columns").get<std::string>(); !cols.empty()) cc.columns = load_column_mapping(cols);

    LoadStats st;
    const auto store = load_corpus(csv, cc, &st);
    auto [train, test] = split(store, cc);
    ctx.run.write("ingest", "corpus/train.jsonl", train.to_jsonl());
    ctx.run.write("ingest", "corpus/test.jsonl", test.to_jsonl());
    json report = {{"rows", st.rows},
                   {"kept", st.kept},
                   {"missing_values", st.missing_values},
                   {"too_long", st.too_long},
                   {"unannotated", st.unannotated},
                   {"train", train.size()},
                   {"test", test.size()}};
    ctx.run.write("ingest", "corpus/stats.json", report.dump(2) + "\n");
    return {report, fmt::format("{} rows read, {} kept; {} train / {} test\n", st.rows, st.kept, train.size(), test.size())};
}

StageResult train_groups(Context &ctx) {
    const auto &g = section(ctx, "groups");
    const auto train = load_split(ctx, Split::train);
    const auto test = load_split(ctx, Split::test);
    TrainConfig tc{g.at("epochs").get<int>(), g.at("batch_size").get<std::size_t>(), g.at("learning_rate").get<double>(), true};
    const auto gc = train_group_classifier(train, test, *ctx.backend, tc);
    EligibilityPolicy policy;
    policy.ba_threshold = g.at("ba_threshold").get<double>();
    policy.exclusions = g.at("exclusions").get<std::set<std::string>>();
    const auto eligible = eligible_groups(gc, policy);

    ctx.run.write("train-groups", "groups/classifier.json", gc.save().dump() + "\n");
    ctx.run.write("train-groups", "groups/eval.csv", gc.eval_table_csv());
    ctx.run.write("train-groups", "groups/eligible.json", json(eligible).dump(2) + "\n");

    std::string out = gc.eval_table_csv();
    out += fmt::format("eligible ({}): {}\n", eligible.size(), text::join({eligible.begin(), eligible.end()}, ", "));
    return {{{"balanced_accuracy", gc.eval_report}, {"eligible", eligible}}, out};
}

StageResult generate(Context &ctx, std::string_view method) {
    const auto stage = fmt::format("generate-{}", method);
    const auto train = load_split(ctx, Split::train);
    const auto test = load_split(ctx, Split::test);
    const auto eligible = load_eligible(ctx);
    const auto &g = section(ctx, "generate");
    const double t = g.at("filter_threshold").get<double>();
    json report = {{"method", method}};
    std::string out;

    if (method == "wr" || method == "wr50") {
        const bool wr50 = method == "wr50";
        const auto lex = load_lex(ctx, wr50);
        // The 50-term list is not restricted to groups with a classifier head.
        std::set<std::string> groups = eligible;
        if (wr50) {
            const auto all = lex.groups();
            groups = {all.begin(), all.end()};
        }
        Rng rng(ctx.seed(stage));
        const auto tag = wr50 ? method::word_replacement_50 : method::word_replacement;
        for (Split s : {Split::train, Split::test}) {
            EnumerationStats st;
            auto pairs = enumerate_wr_candidates(s == Split::train ? train : test, lex, groups, rng, tag, &st);
            report[to_string(s)] = {{"attempted", st.attempted}, {"produced", st.produced}, {"no_marker", st.no_marker}};
            out += fmt::format("{}: {} candidates from {} attempts\n", to_string(s), st.produced, st.attempted);
            write_candidates(ctx, stage, method, s, std::move(pairs));
        }
    } else if (method == "st") {
        const auto &c = section(ctx, "st");
        const auto gc = load_groups(ctx);
        const auto lex = load_lex(ctx);
        StyleTransferConfig cfg;
        cfg.mask_threshold = c.at("mask_threshold").get<double>();
        cfg.beam_width = c.at("beam_width").get<std::size_t>();
        if (!c.at("max_mask_iterations").is_null()) cfg.max_mask_iterations = c.at("max_mask_iterations").get<std::size_t>();
        const auto sel = c.at("selection").get<std::string>();
        if (sel == "logit_diff") cfg.selection = Selection::logit_diff;
        else if (sel == "prob_diff") cfg.selection = Selection::prob_diff;
        else throw FormatError(fmt::format("st.selection: unknown value '{}'", sel));
        cfg.mask_token = c.at("mask_token").get<std::string>();
        cfg.filter_threshold = t;
        cfg.filter_orientation = filter_orientation(ctx);
        cfg.validate();

        if (ctx.backend->name() != "stub")
            throw CapabilityError(fmt::format("backend '{}' provides no infill generator", ctx.backend->name()));
        std::map<std::string, std::vector<std::string>> fallback;
        for (const auto &group : lex.groups()) {
            const auto &terms = lex.terms(group);
            auto &words = fallback[group];
            words.insert(words.end(), terms.nouns.begin(), terms.nouns.end());
            words.insert(words.end(), terms.descriptors.begin(), terms.descriptors.end());
        }
        stub::FillTable table;
        if (const auto p = c.at("fill_table").get<std::string>(); !p.empty()) table = stub::load_fill_table(p);
        stub::StubInfill generator(std::move(table), std::move(fallback), std::max<std::size_t>(cfg.beam_width, 5));
        Rng rng(ctx.seed(stage));
        generator.train(infill_training_examples(train, gc, rng, cfg.mask_token));

        for (Split s : {Split::train, Split::test}) {
            StyleTransferStats st;
            auto pairs = enumerate_st_candidates(s == Split::train ? train : test, eligible, generator, gc, cfg, &st);
            report[to_string(s)] = {{"attempted", st.attempted},
                                    {"accepted", st.accepted},
                                    {"rejected_template", st.rejected_template},
                                    {"rejected_generate", st.rejected_generate},
                                    {"rejected_post_filter", st.rejected_post_filter}};
            out += fmt::format("{}: {} accepted of {} attempts ({} template, {} generate, {} post-filter rejections)\n",
                               to_string(s), st.accepted, st.attempted, st.rejected_template, st.rejected_generate,
                               st.rejected_post_filter);
            write_candidates(ctx, stage, method, s, std::move(pairs));
        }
    } else if (method == "llm") {
        const auto &c = section(ctx, "llm");
        const auto gc = load_groups(ctx);
        const auto lex = load_lex(ctx);
        json client_cfg = json::object();
        for (const char *k : {"temperature", "top_p", "max_tokens", "completion_model", "edit_model", "api_key_env",
                              "base_url", "requests_per_minute", "max_retries"})
            client_cfg[k] = c.at(k);
        const auto lc = LlmConfig::from_json(client_cfg);

        std::shared_ptr<LlmClient> client;
        if (c.at("live").get<bool>()) {
            client = std::make_shared<HttpLlmClient>(lc);
        } else {
            const auto replay = c.at("replay").get<std::string>();
            if (replay.empty()) throw PreconditionError("llm.replay is not set and llm.live is false");
            client = std::make_shared<ReplayLlmClient>(replay);
        }
        if (const auto rec = c.at("record").get<std::string>(); !rec.empty())
            client = std::make_shared<RecordingLlmClient>(client, rec);

        std::vector<PairCandidate> by_split[2];
        Rng rng(ctx.seed(stage));
        for (const auto &m : c.at("modes")) {
            const auto mode = rewrite_mode_from_string(m.get<std::string>());
            LlmBudget budget;
            if (c.at("extended_budget").get<bool>()) {
                budget = LlmBudget::extended(mode);
            } else {
                budget.max_attempts = c.at("max_attempts").is_null() ? std::nullopt
                                                                     : std::optional(c.at("max_attempts").get<std::size_t>());
                budget.target_successes = c.at("target_successes").is_null()
                                              ? std::nullopt
                                              : std::optional(c.at("target_successes").get<std::size_t>());
            }
            for (Split s : {Split::train, Split::test}) {
                LlmStats st;
                auto pairs = generate_llm_candidates(s == Split::train ? train : test, eligible, lex, *client, gc, mode,
                                                     rng, lc, budget, t, filter_orientation(ctx), &st);
                report[to_string(mode)][to_string(s)] = {{"attempts", st.attempts},
                                                         {"successes", st.successes},
                                                         {"failed_requests", st.failed_requests},
                                                         {"skipped", st.skipped}};
                out += fmt::format("{} {}: {} of {} responses passed the filter, {} failed requests\n", to_string(mode),
                                   to_string(s), st.successes, st.attempts, st.failed_requests);
                auto &dst = by_split[s == Split::train ? 0 : 1];
                dst.insert(dst.end(), pairs.begin(), pairs.end());
            }
        }
        write_candidates(ctx, stage, method, Split::train, std::move(by_split[0]));
        write_candidates(ctx, stage, method, Split::test, std::move(by_split[1]));
    } else {
        throw FormatError(fmt::format("unknown generation method '{}' (wr, wr50, st, llm)", method));
    }
    return {report, out};
}

StageResult pool_assemble(Context &ctx) {
    const auto &p = section(ctx, "pool");
    const auto name = p.at("name").get<std::string>().empty() ? std::string("C") : p.at("name").get<std::string>();
    auto sized = [&](const char *key) { return p.at(key).get<std::size_t>(); };
    const bool by_mode = p.at("llm_by_mode").get<bool>();
    const std::size_t llm_total =
        by_mode ? sized("gpt_zero_shot") + sized("gpt_edit") + sized("gpt_postprocess") : sized("llm");
    auto maybe = [&](std::string_view m, std::size_t size, Split s) {
        return size > 0 ? read_candidates(ctx, m, s) : std::vector<PairCandidate>{};
    };
    const auto seed = ctx.seed("pool-assemble");

    ConstraintPool c;
    if (by_mode) {
        LlmModeSizes ls{sized("gpt_zero_shot"), sized("gpt_edit"), sized("gpt_postprocess")};
        c = assemble_c_by_mode(maybe("wr", sized("wr"), Split::train), maybe("st", sized("st"), Split::train),
                               maybe("llm", llm_total, Split::train), sized("wr"), sized("st"), ls, seed, name);
    } else {
        c = assemble_c(maybe("wr", sized("wr"), Split::train), maybe("st", sized("st"), Split::train),
                       maybe("llm", llm_total, Split::train), PoolSizes{sized("wr"), sized("st"), sized("llm")}, seed,
                       name);
    }
    std::vector<PoolSource> test_sources;
    for (const auto &[src, n] : c.composition) {
        if (n == 0) continue;
        // Composition keys are source names; llm modes share the llm file.
        const std::string file = src.rfind("gpt_", 0) == 0 ? "llm" : src;
        auto cands = read_candidates(ctx, file, Split::test);
        if (file == "llm" && by_mode)
            cands.erase(std::remove_if(cands.begin(), cands.end(), [&](const PairCandidate &x) { return x.method != src; }),
                        cands.end());
        test_sources.push_back({src, std::move(cands), 0});
    }
    const auto c_test = make_test_pool(c, test_sources, seed + 1, p.at("test_fraction").get<double>());
    save_pool(ctx, "pool-assemble", c);
    save_pool(ctx, "pool-assemble", c_test);
    std::string out;
    for (const ConstraintPool *pool : std::initializer_list<const ConstraintPool *>{&c, &c_test}) {
        out += fmt::format("{}: {} pairs", pool->name, pool->size());
        for (const auto &[src, n] : pool->composition) out += fmt::format(", {} {}", src, n);
        out += "\n";
    }
    return {{{"pools", {c.manifest()["composition"], c_test.manifest()["composition"]}},
             {"names", {c.name, c_test.name}},
             {"sizes", {c.size(), c_test.size()}}},
            out};
}

StageResult pool_adverse(Context &ctx) {
    const auto &p = section(ctx, "pool");
    const auto source = load_pool(ctx, p.at("source").get<std::string>());
    const auto train = load_split(ctx, Split::train);
    auto name = p.at("name").get<std::string>();
    if (name.empty()) name = source.name + "_adverse";
    const auto pool = make_adverse(source, train, p.at("adverse").get<std::size_t>(), ctx.seed("pool-adverse"), name);
    save_pool(ctx, "pool-adverse", pool);
    return {{{"name", pool.name}, {"size", pool.size()}, {"composition", pool.composition}},
            fmt::format("{}: {} pairs ({} adverse)\n", pool.name, pool.size(), pool.size() - source.size())};
}

StageResult pool_filter(Context &ctx) {
    const auto &p = section(ctx, "pool");
    const auto source = load_pool(ctx, p.at("source").get<std::string>());
    const double t = p.at("filter_threshold").get<double>();
    const auto model = load_similarity(ctx);
    const auto predictions = predict_all(model, source.members);
    auto name = p.at("name").get<std::string>();
    if (name.empty()) name = fmt::format("{}_t{}", source.name, format_number(t));
    const auto pool = filter_pool(source, predictions, t, name);
    save_pool(ctx, "pool-filter", pool);
    const double retention = pool.notes.value("retention_percent", 0.0);
    return {{{"name", pool.name},
             {"threshold", t},
             {"kept", pool.size()},
             {"of", source.size()},
             {"retention_percent", retention}},
            fmt::format("{}: kept {} of {} pairs at t = {} (retention {}%)\n", pool.name, pool.size(), source.size(),
                        format_number(t), eval::format_percent(retention))};
}

StageResult al_run(Context &ctx) {
    const auto &a = section(ctx, "al");
    const auto &sim = section(ctx, "similarity");
    const auto pool = load_pool(ctx, a.at("pool").get<std::string>());
    const auto labels_spec = a.at("labels").get<std::string>();
    const auto seed = ctx.seed("al-run");

    SimilarityModel model(ctx.backend->pair_backbone(), ctx.backend->tokenizer(), head_spec(ctx),
                          sim.at("threshold").get<double>(), seed);
    const auto cache = precompute_features(model, pool.members);

    std::unique_ptr<LabelSource> source;
    std::optional<HeldOut> held_out;
    std::optional<ConstraintPool> test_pool;
    const auto test_name = pool.name + "_test";
    if (ctx.run.has(pool_rel(test_name, false))) test_pool = load_pool(ctx, test_name);

    if (labels_spec.rfind("oracle:", 0) == 0) {
        const auto oracle = oracle_for(labels_spec.substr(7));
        NoiseModel noise{a.at("flip_probability").get<double>(), a.at("votes_per_pair").get<std::size_t>()};
        noise.validate();
        source = std::make_unique<OracleLabelSource>(oracle, noise, seed + 1);
        if (test_pool && !test_pool->members.empty()) {
            HeldOut h;
            for (const auto &pair : test_pool->members) {
                h.pairs.push_back(pair);
                h.labels.push_back(oracle.label(pair));
            }
            const auto pos = std::count(h.labels.begin(), h.labels.end(), 1);
            if (pos > 0 && pos < static_cast<std::ptrdiff_t>(h.labels.size())) held_out = std::move(h);
        }
    } else if (labels_spec.rfind("service:", 0) == 0) {
        const auto campaign = labels_spec.substr(8);
        if (campaign.empty()) throw FormatError("al.labels: service needs a campaign id");
        fs::path exported = a.at("label_export").get<std::string>();
        if (exported.empty()) exported = ctx.run.path(fmt::format("annotation/{}.labels.jsonl", campaign));
        if (!fs::exists(exported))
            throw PreconditionError(fmt::format("missing upstream artifact '{}' (campaign export of '{}')", exported.string(), campaign));
        source = std::make_unique<StoredLabelSource>(LabelStore::load(exported));
    } else {
        throw FormatError(fmt::format("al.labels: expected oracle:phi1, oracle:phi2 or service:<campaign>, got '{}'", labels_spec));
    }

    LoopConfig lc;
    lc.rounds = a.at("rounds").get<std::size_t>();
    lc.batch = a.at("batch").get<std::size_t>();
    lc.acquisition = {acquisition_from_string(a.at("criterion").get<std::string>()), a.at("n_masks").get<std::size_t>()};
    lc.regime = regime_from_string(a.at("regime").get<std::string>());
    lc.train = {sim.at("epochs").get<int>(), sim.at("batch_size").get<std::size_t>(), sim.at("learning_rate").get<double>(), false};
    lc.allow_relabel = a.at("allow_relabel").get<bool>();
    lc.seed = seed;
    auto result = run_loop(model, pool.members, *source, lc, &cache, held_out ? &*held_out : nullptr);

    json relabel_report = nullptr;
    if (const auto k = a.at("relabel").get<std::size_t>(); k > 0) {
        bool short_list = false;
        const auto ids = relabel_candidates(model, result.labels, pool.members, &cache, k, &short_list);
        std::vector<const PairCandidate *> batch;
        for (const auto &id : ids) batch.push_back(pool.find(id));
        std::size_t answered = 0;
        const auto extra = a.at("relabel_votes").get<std::size_t>();
        for (std::size_t v = 0; v < extra; ++v) {
            const auto answers = source->query(batch);
            for (std::size_t i = 0; i < batch.size(); ++i)
                if (answers[i]) {
                    result.labels.add_votes(batch[i]->id, *answers[i]);
                    ++answered;
                }
        }
        std::vector<Eigen::VectorXd> x;
        std::vector<double> y;
        for (const auto &[id, label] : result.labels.aggregated_all()) {
            x.push_back(*cache.find(id));
            y.push_back(label);
        }
        auto tc = lc.train;
        tc.epochs = 1;
        Rng rng(seed + 2);
        model.train(x, y, tc, rng);
        relabel_report = {{"selected", ids.size()}, {"short", short_list}, {"votes_added", answered}};
        if (held_out) result.final_balanced_accuracy = held_out_balanced_accuracy(model, *held_out);
    }

    json predictions = predict_all(model, pool.members, &cache);
    if (test_pool)
        for (const auto &[id, p] : predict_all(model, test_pool->members)) predictions[id] = p;

    ctx.run.write("al-run", "similarity/model.json", model.save().dump() + "\n");
    ctx.run.write("al-run", "similarity/labels.jsonl", result.labels.to_jsonl());
    ctx.run.write("al-run", "similarity/rounds.csv", round_metrics_csv(result.rounds));
    ctx.run.write("al-run", "similarity/predictions.json", predictions.dump() + "\n");

    json rounds = json::array();
    for (const auto &r : result.rounds)
        rounds.push_back({{"round", r.round},
                          {"criterion", r.criterion},
                          {"queried", r.queried},
                          {"failed", r.failed},
                          {"labeled", r.labeled},
                          {"balanced_accuracy", r.balanced_accuracy ? json(*r.balanced_accuracy) : json(nullptr)}});
    json report = {{"labels", labels_spec},
                   {"rounds", rounds},
                   {"labeled", result.labels.size()},
                   {"final_balanced_accuracy",
                    result.final_balanced_accuracy ? json(*result.final_balanced_accuracy) : json(nullptr)},
                   {"relabel", relabel_report}};
    std::string out = round_metrics_csv(result.rounds);
    out += fmt::format("{} labeled pairs", result.labels.size());
    if (result.final_balanced_accuracy)
        out += fmt::format(", held-out BA {}", eval::format_percent(*result.final_balanced_accuracy));
    out += "\n";
    return {report, out};
}

StageResult train_clp(Context &ctx) {
    const auto &c = section(ctx, "clp");
    ClpConfig cfg;
    cfg.lambda = c.at("lambda").get<double>();
    cfg.threshold = c.at("threshold").get<double>();
    cfg.orientation = partner_orientation_from_string(c.at("orientation").get<std::string>());
    cfg.epochs = c.at("epochs").get<int>();
    cfg.batch_size = c.at("batch_size").get<std::size_t>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.reweight = c.at("reweight").get<bool>();
    cfg.seed = ctx.seed("train-clp");
    cfg.validate();

    const auto pool_name = c.at("pool").get<std::string>();
    const bool censored = c.at("censor").get<bool>();
    if (pool_name.empty() && cfg.lambda != 0.0 && !censored)
        spdlog::warn("clp.pool is empty; lambda {} has no pairs to act on", format_number(cfg.lambda));
    auto name = c.at("name").get<std::string>();
    if (name.empty()) {
        if (censored) name = "censored";
        else if (pool_name.empty() || cfg.lambda == 0.0) name = "baseline";
        else name = fmt::format("clp_{}_l{}", pool_name, format_number(cfg.lambda));
    }

    auto train = load_split(ctx, Split::train);
    std::set<std::string> censor_groups;
    std::optional<Lexicon> lex;
    if (censored) {
        lex = load_lex(ctx);
        censor_groups = load_eligible(ctx);
        train = censor_store(train, *lex, censor_groups);
    }

    PartnerIndex partners;
    std::size_t pool_size = 0;
    if (!pool_name.empty() && cfg.lambda > 0.0) {
        const auto pool = load_pool(ctx, pool_name);
        pool_size = pool.size();
        std::map<std::string, double> predictions;
        if (c.at("use_similarity").get<bool>()) {
            predictions = predict_all(load_similarity(ctx), pool.members);
        } else {
            // The pool is taken as already validated: every member is a constraint.
            for (const auto &m : pool.members) predictions[m.id] = 0.0;
            if (cfg.orientation == PartnerOrientation::literal)
                for (auto &[_, p] : predictions) p = 1.0;
        }
        partners = PartnerIndex(pool.members, predictions);
    }

    ClpTrace trace;
    auto model = train_clp(train, partners, *ctx.backend, cfg, &trace);
    json saved = {{"kind", "downstream"},
                  {"name", name},
                  {"trained_on", pool_name.empty() || cfg.lambda == 0.0 ? json(nullptr) : json(pool_name)},
                  {"config", cfg.to_json()},
                  {"head", downstream_head_spec()},
                  {"censor", censored ? json(censor_groups) : json(nullptr)},
                  {"classifier", model->save()}};
    ctx.run.write("train-clp", fmt::format("clp/{}.json", name), saved.dump() + "\n");
    json report = {{"name", name},
                   {"pool", pool_name.empty() ? json(nullptr) : json(pool_name)},
                   {"pool_size", pool_size},
                   {"lambda", cfg.lambda},
                   {"epoch_loss", trace.epoch_loss},
                   {"epoch_penalty", trace.epoch_penalty},
                   {"paired", trace.paired},
                   {"self_paired", trace.self_paired}};
    return {report, fmt::format("{}: {} epochs, final loss {:.4f}, {} paired / {} self-paired batch members\n", name,
                                trace.epoch_loss.size(), trace.epoch_loss.empty() ? 0.0 : trace.epoch_loss.back(),
                                trace.paired, trace.self_paired)};
}

StageResult evaluate(Context &ctx) {
    const auto &e = section(ctx, "eval");
    const auto test = load_split(ctx, Split::test);

    std::vector<std::string> model_names = e.at("models").get<std::vector<std::string>>();
    if (model_names.empty()) {
        for (const auto &[rel, meta] : ctx.run.manifest()["artifacts"].items())
            if (rel.rfind("clp/", 0) == 0 && rel.size() > 9 && rel.substr(rel.size() - 5) == ".json")
                model_names.push_back(rel.substr(4, rel.size() - 9));
    }
    if (model_names.empty()) throw PreconditionError("missing upstream artifact 'clp/*.json' (produced by `fairpairs train-clp`)");

    std::vector<std::string> pool_names = e.at("pools").get<std::vector<std::string>>();
    if (pool_names.empty()) {
        for (const auto &[rel, meta] : ctx.run.manifest()["artifacts"].items()) {
            const std::string suffix = ".manifest.json";
            if (rel.rfind("pools/", 0) != 0 || rel.size() <= suffix.size() + 6 ||
                rel.compare(rel.size() - suffix.size(), suffix.size(), suffix) != 0)
                continue;
            const auto name = rel.substr(6, rel.size() - 6 - suffix.size());
            if (json::parse(text::read_file(ctx.run.path(rel))).value("split", "") == "test") pool_names.push_back(name);
        }
    }
    if (pool_names.empty()) throw PreconditionError("missing upstream artifact 'pools/*_test' (produced by `fairpairs pool assemble`)");

    const auto restrict = e.at("restrict_oracle").get<std::string>();
    std::vector<eval::NamedPool> pools;
    for (const auto &n : pool_names) {
        auto pool = load_pool(ctx, n);
        std::vector<PairCandidate> pairs = pool.members;
        if (restrict != "none") {
            const auto oracle = oracle_for(restrict);
            std::erase_if(pairs, [&](const PairCandidate &p) { return oracle.label(p) != 0; });
        }
        if (pairs.empty()) throw PreconditionError(fmt::format("pool '{}' is empty after restriction", n));
        pools.push_back({n, std::move(pairs)});
    }

    std::optional<Lexicon> lex;
    std::vector<std::shared_ptr<DifferentiableClassifier>> keep;
    std::vector<eval::NamedClassifier> classifiers;
    for (const auto &name : model_names) {
        const auto saved = json::parse(ctx.run.read(fmt::format("clp/{}.json", name), "train-clp"));
        std::shared_ptr<DifferentiableClassifier> clf = ctx.backend->load_differentiable(saved.at("classifier"));
        keep.push_back(clf);
        std::optional<std::set<std::string>> censor_groups;
        if (!saved.at("censor").is_null()) {
            censor_groups = saved.at("censor").get<std::set<std::string>>();
            if (!lex) lex = load_lex(ctx);
        }
        const Lexicon *lexp = lex ? &*lex : nullptr;
        eval::BatchClassifier predict = [clf, censor_groups, lexp](std::span<const std::string> texts) {
            std::vector<std::string> in(texts.begin(), texts.end());
            if (censor_groups)
                for (auto &t : in) t = censor(t, *lexp, *censor_groups);
            std::vector<int> out;
            for (const auto &p : clf->predict(in)) out.push_back(p.probs.at(0) > 0.5 ? 1 : 0);
            return out;
        };
        std::optional<std::string> trained_on;
        if (!saved.at("trained_on").is_null()) {
            const auto t = saved.at("trained_on").get<std::string>();
            for (const auto &candidate : {t, t + "_test"})
                if (std::find(pool_names.begin(), pool_names.end(), candidate) != pool_names.end()) trained_on = candidate;
        }
        classifiers.push_back({name, predict, trained_on});
    }

    const auto report = eval::cross_eval(classifiers, pools, test);
    json out = report.to_json();

    json gaps = json::object();
    if (ctx.run.has("groups/eligible.json")) {
        const auto eligible = load_eligible(ctx);
        for (const auto &clf : classifiers) {
            try {
                gaps[clf.name] = eval::eo_gaps(clf.predict, test, eligible).to_json();
            } catch (const PreconditionError &err) {
                spdlog::warn("equality-of-odds gaps for '{}' skipped: {}", clf.name, err.what());
                gaps[clf.name] = nullptr;
            }
        }
    }
    out["equality_of_odds"] = gaps;

    const auto table = report.render_table();
    ctx.run.write("evaluate", "reports/evaluate.json", out.dump(2) + "\n");
    ctx.run.write("evaluate", "reports/evaluate.csv", report.to_csv());
    ctx.run.write("evaluate", "reports/evaluate.txt", table);
    return {out, table};
}

StageResult serve(Context &ctx) {
    const auto &s = section(ctx, "serve");
    auto batteries = BatteryFile::load(configured_path(s.at("battery"), data_dir() / "battery.json"));
    auto qual = load_gold_pairs(configured_path(s.at("qualification"), data_dir() / "qualification_gold.jsonl"));
    auto checks = load_gold_pairs(configured_path(s.at("attention_checks"), data_dir() / "attention_checks.jsonl"));
    AnnotationService service(std::move(batteries), std::move(qual), std::move(checks), ctx.seed("serve"));

    const auto env = s.at("admin_token_env").get<std::string>();
    std::string token;
    if (const char *v = std::getenv(env.c_str()); v && *v) {
        token = v;
    } else {
        token = random_token();
        spdlog::warn("{} is not set; generated admin token {}", env, token);
    }
    AnnotationServer server(service, token);
    const auto host = s.at("host").get<std::string>();
    const int port = s.at("port").get<int>();
    spdlog::info("annotation service on http://{}:{}/api/v1", host, port);
    if (!server.listen(host, port)) throw IoError(fmt::format("cannot bind {}:{}", host, port));
    return {{{"host", host}, {"port", port}, {"stopped", true}}, "annotation service stopped\n"};
}

} // namespace fairpairs::pipeline
