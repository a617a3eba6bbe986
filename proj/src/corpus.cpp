#include "fairpairs/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

std::string to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: break;
    }
    return "unassigned";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    throw FormatError(fmt::format("unknown split '{}'", s));
}

json Comment::to_json() const {
    json j = {{"id", id}, {"text", text}, {"toxicity", toxicity_fraction}, {"split", to_string(split)}};
    j["groups"] = group_fractions ? json(*group_fractions) : json(nullptr);
    return j;
}

Comment Comment::from_json(const json &j) {
    Comment c;
    try {
        c.id = j.at("id").get<std::string>();
        c.text = j.at("text").get<std::string>();
        c.toxicity_fraction = j.at("toxicity").get<double>();
        c.split = split_from_string(j.value("split", "unassigned"));
        if (j.contains("groups") && !j.at("groups").is_null())
            c.group_fractions = j.at("groups").get<std::map<std::string, double>>();
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("comment record: {}", e.what()));
    }
    return c;
}

LabeledComment label(const Comment &comment) {
    LabeledComment out{comment, comment.toxicity_fraction > 0.5 ? 1 : 0, {}};
    if (comment.group_fractions)
        for (const auto &[group, fraction] : *comment.group_fractions)
            if (fraction > 0.5) out.groups.insert(group);
    return out;
}

ColumnMapping ColumnMapping::civil_comments() {
    ColumnMapping m;
    m.groups = {
        {"male", "Male"},
        {"female", "Female"},
        {"transgender", "Transgender"},
        {"other_gender", "Other gender"},
        {"heterosexual", "Heterosexual"},
        {"homosexual_gay_or_lesbian", "Homosexual"},
        {"bisexual", "Bisexual"},
        {"other_sexual_orientation", "Other sexuality"},
        {"christian", "Christian"},
        {"jewish", "Jewish"},
        {"muslim", "Muslim"},
        {"hindu", "Hindu"},
        {"buddhist", "Buddhist"},
        {"atheist", "Atheist"},
        {"other_religion", "Other religion"},
        {"black", "Black"},
        {"white", "White"},
        {"asian", "Asian"},
        {"latino", "Latino"},
        {"other_race_or_ethnicity", "Other race"},
        {"physical_disability", "Physical disability"},
        {"intellectual_or_learning_disability", "Intellectual disability"},
        {"psychiatric_or_mental_illness", "Mental illness"},
        {"other_disability", "Other disability"},
    };
    return m;
}

ColumnMapping ColumnMapping::from_json(const json &j) {
    ColumnMapping m = civil_comments();
    try {
        m.id = j.value("id", m.id);
        m.text = j.value("text", m.text);
        m.toxicity = j.value("toxicity", m.toxicity);
        if (j.contains("groups")) m.groups = j.at("groups").get<std::map<std::string, std::string>>();
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("column mapping: {}", e.what()));
    }
    return m;
}

json ColumnMapping::to_json() const {
    return {{"id", id}, {"text", text}, {"toxicity", toxicity}, {"groups", groups}};
}

ColumnMapping load_column_mapping(const std::filesystem::path &path) {
    try {
        return ColumnMapping::from_json(json::parse(text::read_file(path)));
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// ─── CommentStore ───────────────────────────────────────────────────────────

CommentStore::CommentStore(std::vector<Comment> comments) : comments_(std::move(comments)) {
    for (std::size_t i = 0; i < comments_.size(); ++i) {
        if (!index_.emplace(comments_[i].id, i).second)
            throw FormatError(fmt::format("duplicate comment id '{}'", comments_[i].id));
    }
}

const Comment *CommentStore::find(const std::string &id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &comments_[it->second];
}

std::vector<LabeledComment> CommentStore::labeled() const {
    std::vector<LabeledComment> out;
    out.reserve(comments_.size());
    for (const auto &c : comments_) out.push_back(label(c));
    return out;
}

CommentStore CommentStore::annotated() const {
    std::vector<Comment> out;
    std::copy_if(comments_.begin(), comments_.end(), std::back_inserter(out),
                 [](const Comment &c) { return c.annotated(); });
    return CommentStore(std::move(out));
}

std::string CommentStore::to_jsonl() const {
    std::vector<json> rows;
    rows.reserve(comments_.size());
    for (const auto &c : comments_) rows.push_back(c.to_json());
    return text::to_jsonl(rows);
}

void CommentStore::write_jsonl(const std::filesystem::path &path) const { text::write_file(path, to_jsonl()); }

CommentStore CommentStore::read_jsonl(const std::filesystem::path &path) {
    std::vector<Comment> comments;
    for (const auto &row : text::read_jsonl(path)) comments.push_back(Comment::from_json(row));
    return CommentStore(std::move(comments));
}

// ─── CSV ────────────────────────────────────────────────────────────────────

std::vector<std::vector<std::string>> parse_csv(std::string_view data) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };
    while (i < data.size()) {
        const char c = data[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < data.size() && data[i + 1] == '\n') ++i;
            end_row();
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) throw FormatError("unterminated quoted field");
    if (field_started || !row.empty()) end_row();
    return rows;
}

namespace {

bool is_missing(const std::string &raw) {
    const auto v = text::to_lower(text::trim(raw));
    return v.empty() || v == "nan" || v == "na" || v == "null";
}

double parse_fraction(const std::string &raw, std::size_t row, const std::string &column) {
    const auto v = text::trim(raw);
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x))
        throw FormatError(fmt::format("row {}: column '{}' is not a number: '{}'", row, column, raw));
    if (x < 0.0 || x > 1.0)
        throw FormatError(fmt::format("row {}: column '{}' fraction {} outside [0,1]", row, column, x));
    return x;
}

} // namespace

CommentStore load_corpus(const std::filesystem::path &path, const CorpusConfig &config, LoadStats *stats) {
    const auto rows = parse_csv(text::read_file(path));
    if (rows.empty()) throw FormatError(fmt::format("{}: empty file", path.string()));
    const auto &header = rows.front();
    auto column = [&](const std::string &name) -> std::optional<std::size_t> {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto id_col = column(config.columns.id);
    const auto text_col = column(config.columns.text);
    const auto tox_col = column(config.columns.toxicity);
    if (!id_col || !text_col || !tox_col)
        throw FormatError(fmt::format("{}: missing required column (need '{}', '{}', '{}')", path.string(),
                                      config.columns.id, config.columns.text, config.columns.toxicity));
    std::vector<std::pair<std::size_t, std::string>> group_cols;
    for (const auto &[col, group] : config.columns.groups)
        if (auto idx = column(col)) group_cols.emplace_back(*idx, group);

    LoadStats st;
    std::vector<Comment> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto &row = rows[r];
        ++st.rows;
        if (row.size() != header.size())
            throw FormatError(fmt::format("row {}: expected {} fields, found {}", r, header.size(), row.size()));
        if (is_missing(row[*id_col]) || is_missing(row[*tox_col]) || text::trim(row[*text_col]).empty()) {
            ++st.missing_values;
            continue;
        }
        Comment c;
        c.id = text::trim(row[*id_col]);
        c.text = row[*text_col];
        c.toxicity_fraction = parse_fraction(row[*tox_col], r, config.columns.toxicity);
        std::size_t missing_groups = 0;
        std::map<std::string, double> groups;
        for (const auto &[idx, group] : group_cols) {
            if (is_missing(row[idx])) {
                ++missing_groups;
                continue;
            }
            groups[group] = parse_fraction(row[idx], r, header[idx]);
        }
        if (missing_groups > 0 && missing_groups < group_cols.size()) {
            ++st.missing_values;
            continue;
        }
        if (!group_cols.empty() && missing_groups == 0) {
            c.group_fractions = std::move(groups);
        } else {
            ++st.unannotated;
        }
        if (config.tokenizer->tokenize(c.text).size() > config.max_tokens) {
            ++st.too_long;
            continue;
        }
        out.push_back(std::move(c));
    }
    st.kept = out.size();
    spdlog::info("loaded {}: {} rows, {} kept, {} with missing values, {} over {} tokens", path.string(), st.rows,
                 st.kept, st.missing_values, st.too_long, config.max_tokens);
    if (stats) *stats = st;
    return CommentStore(std::move(out));
}

std::pair<CommentStore, CommentStore> split(const CommentStore &store, const CorpusConfig &config) {
    if (store.empty()) throw PreconditionError("cannot split an empty store");
    if (!(config.train_ratio > 0.0 && config.train_ratio <= 1.0))
        throw PreconditionError(fmt::format("train ratio {} outside (0, 1]", config.train_ratio));
    std::vector<std::size_t> order(store.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_ratio * static_cast<double>(store.size())));
    std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    // Keep the source order inside each split.
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    auto take = [&](const std::vector<std::size_t> &idx, Split s) {
        std::vector<Comment> out;
        out.reserve(idx.size());
        for (auto i : idx) {
            out.push_back(store[i]);
            out.back().split = s;
        }
        return CommentStore(std::move(out));
    };
    return {take(train_idx, Split::train), take(test_idx, Split::test)};
}

} // namespace fairpairs
