#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fairpairs/common.hpp"
#include "fairpairs/model_backend.hpp"

namespace fairpairs {

enum class Split { unassigned, train, test };

std::string to_string(Split split);
Split split_from_string(std::string_view s);

struct Comment {
    std::string id;
    std::string text;
    double toxicity_fraction = 0.0;
    // Absent for comments outside the identity-annotated subset.
    std::optional<std::map<std::string, double>> group_fractions;
    Split split = Split::unassigned;

    bool annotated() const { return group_fractions.has_value(); }
    json to_json() const;
    static Comment from_json(const json &j);
    bool operator==(const Comment &) const = default;
};

struct LabeledComment {
    Comment comment;
    int y = 0;
    std::set<std::string> groups;
};

// y = toxicity > 0.5, group j present iff its fraction > 0.5 (strict).
LabeledComment label(const Comment &comment);

// Maps CSV header names to comment fields and group names.
struct ColumnMapping {
    std::string id = "id";
    std::string text = "comment_text";
    std::string toxicity = "target";
    std::map<std::string, std::string> groups; // column -> group name

    static ColumnMapping civil_comments();
    static ColumnMapping from_json(const json &j);
    json to_json() const;
};

ColumnMapping load_column_mapping(const std::filesystem::path &path);

struct CorpusConfig {
    std::size_t max_tokens = 64;
    double train_ratio = 0.75;
    std::uint64_t seed = 0;
    std::shared_ptr<const Tokenizer> tokenizer = std::make_shared<WhitespaceTokenizer>();
    ColumnMapping columns = ColumnMapping::civil_comments();
};

struct LoadStats {
    std::size_t rows = 0;
    std::size_t kept = 0;
    std::size_t missing_values = 0;
    std::size_t too_long = 0;
    std::size_t unannotated = 0;
};

class CommentStore {
  public:
    CommentStore() = default;
    explicit CommentStore(std::vector<Comment> comments);

    std::size_t size() const { return comments_.size(); }
    bool empty() const { return comments_.empty(); }
    auto begin() const { return comments_.begin(); }
    auto end() const { return comments_.end(); }
    const Comment &operator[](std::size_t i) const { return comments_[i]; }
    const std::vector<Comment> &comments() const { return comments_; }

    const Comment *find(const std::string &id) const;
    std::vector<LabeledComment> labeled() const;
    // Comments carrying group annotations only.
    CommentStore annotated() const;

    std::string to_jsonl() const;
    void write_jsonl(const std::filesystem::path &path) const;
    static CommentStore read_jsonl(const std::filesystem::path &path);

    bool operator==(const CommentStore &other) const { return comments_ == other.comments_; }

  private:
    std::vector<Comment> comments_;
    std::map<std::string, std::size_t> index_;
};

// Rows with a missing required value, or with some but not all group
// fractions missing, are dropped. Rows with every group column empty are kept
// as unannotated. Malformed rows and out-of-range fractions throw
// FormatError naming the 1-based data row.
CommentStore load_corpus(const std::filesystem::path &path, const CorpusConfig &config,
                         LoadStats *stats = nullptr);

// Uniform random (unstratified) split; train size = round(ratio * N).
std::pair<CommentStore, CommentStore> split(const CommentStore &store, const CorpusConfig &config);

// RFC 4180 reader: quoted fields, doubled quotes, embedded newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view data);

} // namespace fairpairs
