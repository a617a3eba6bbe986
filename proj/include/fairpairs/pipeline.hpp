#pragma once
// Stage orchestration over a run directory. Each stage reads the artifacts of
// earlier stages, writes its own, and records their sha256 in artifacts.json.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/common.hpp"
#include "fairpairs/model_backend.hpp"

namespace fairpairs::pipeline {

json default_config();

// Recursive overlay of `user` onto `base`. Keys absent from `base` and
// mismatched value types throw FormatError naming the dotted key.
json merge_config(const json &base, const json &user, const std::string &prefix = "");

// "al.rounds=3": the value is parsed as JSON when it parses, else taken as a string.
void apply_override(json &config, std::string_view assignment);

// Directory with the shipped lexicons, battery and fixtures. FAIRPAIRS_DATA_DIR wins.
std::filesystem::path data_dir();

// Exclusive per-directory lock; a lock left by a dead process is taken over.
class RunLock {
  public:
    explicit RunLock(std::filesystem::path dir);
    ~RunLock();
    RunLock(const RunLock &) = delete;
    RunLock &operator=(const RunLock &) = delete;

  private:
    std::filesystem::path path_;
};

class RunDir {
  public:
    explicit RunDir(std::filesystem::path root);

    const std::filesystem::path &root() const { return root_; }
    std::filesystem::path path(const std::string &rel) const { return root_ / rel; }
    bool has(const std::string &rel) const;

    // Path of a recorded artifact after checking its hash. Throws
    // PreconditionError naming the artifact and the stage that makes it.
    std::filesystem::path require(const std::string &rel, std::string_view producer) const;
    std::string read(const std::string &rel, std::string_view producer) const;

    // Refuses to overwrite an artifact recorded by a different stage.
    void write(const std::string &stage, const std::string &rel, std::string_view contents);
    // For files produced by a library call at path(rel).
    void record(const std::string &stage, const std::string &rel);

    const json &manifest() const { return manifest_; }

  private:
    void check_owner(const std::string &stage, const std::string &rel) const;
    void save_manifest() const;

    std::filesystem::path root_;
    json manifest_;
};

struct Context {
    RunDir run;
    json config;
    std::unique_ptr<ModelBackend> backend;

    Context(std::filesystem::path root, json resolved);
    std::uint64_t seed(std::string_view stage) const;
};

// Config for a run: defaults, then <run>/config.json, then the file, then overrides.
json resolve_config(const std::filesystem::path &run, const std::optional<std::filesystem::path> &file,
                    const std::vector<std::string> &overrides);

struct StageResult {
    json report;
    std::string text;
};

StageResult ingest(Context &ctx);
StageResult train_groups(Context &ctx);
StageResult generate(Context &ctx, std::string_view method); // wr | wr50 | st | llm
StageResult pool_assemble(Context &ctx);
StageResult pool_adverse(Context &ctx);
StageResult pool_filter(Context &ctx);
StageResult al_run(Context &ctx);
StageResult train_clp(Context &ctx);
StageResult evaluate(Context &ctx);
// Blocks until the server stops.
StageResult serve(Context &ctx);

// Writes configs/<stage>.json and, on the first stage of a run, config.json.
void snapshot_config(Context &ctx, const std::string &stage);

} // namespace fairpairs::pipeline
