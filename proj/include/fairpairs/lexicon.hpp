#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/common.hpp"
#include "fairpairs/corpus.hpp"
#include "fairpairs/pair.hpp"

namespace fairpairs {

enum class TermKind { noun, descriptor };

std::string to_string(TermKind kind);

struct GroupTerms {
    std::vector<std::string> descriptors;
    std::vector<std::string> nouns;

    const std::vector<std::string> &list(TermKind kind) const {
        return kind == TermKind::noun ? nouns : descriptors;
    }
    bool operator==(const GroupTerms &) const = default;
};

// Group word lists. Matching is case-insensitive on whole words, longest
// term first across every group, so "trans female" is one Transgender
// occurrence rather than a Female one.
class Lexicon {
  public:
    struct Owner {
        std::string group;
        TermKind kind;
    };
    struct Occurrence {
        std::size_t begin = 0;
        std::size_t end = 0;
        std::string text; // as written in the input
        std::vector<Owner> owners;

        const Owner *owner(std::string_view group) const;
    };

    Lexicon() = default;

    // Throws FormatError for a group with no terms.
    void add_group(const std::string &name, GroupTerms terms);
    void set_display_name(const std::string &group, std::string name);

    bool contains(std::string_view group) const;
    const GroupTerms &terms(std::string_view group) const;
    std::vector<std::string> groups() const;
    // Lowercased group name unless overridden; used in rewrite prompts.
    std::string display_name(std::string_view group) const;

    std::vector<Occurrence> find_terms(std::string_view text) const;
    bool is_term_of(std::string_view term, std::string_view group, std::optional<TermKind> kind = {}) const;

    static Lexicon from_json(const json &j);
    json to_json() const;

    bool operator==(const Lexicon &other) const {
        return groups_ == other.groups_ && display_names_ == other.display_names_;
    }

  private:
    struct Pattern {
        std::string lower;
        std::vector<Owner> owners;
    };
    void rebuild_index();

    std::map<std::string, GroupTerms, std::less<>> groups_;
    std::map<std::string, std::string, std::less<>> display_names_;
    std::vector<Pattern> patterns_; // longest first
};

Lexicon load_lexicon(const std::filesystem::path &path);
void save_lexicon(const Lexicon &lexicon, const std::filesystem::path &path);

struct Replacement {
    std::size_t begin = 0; // byte span in the original
    std::size_t end = 0;
    std::string source_term;
    std::string target_term;
    TermKind source_kind = TermKind::noun;
    TermKind kind = TermKind::noun; // kind of the emitted target term
};

struct ReplacementResult {
    std::string original;
    std::string modified;
    std::vector<Replacement> replacements;

    json to_json() const;
};

// Returns an index in [0, n).
using TermPicker = std::function<std::size_t(std::size_t n)>;
TermPicker uniform_picker(Rng &rng);

// Replaces every occurrence of a source-group term by a uniformly drawn
// target-group term of the same kind, falling back to the other kind when
// the target list for that kind is empty. Initial capitalization follows the
// matched source term. Returns nullopt when no source term occurs.
std::optional<ReplacementResult> replace(std::string_view s, std::string_view source_group,
                                         std::string_view target_group, const Lexicon &lexicon,
                                         const TermPicker &pick);
std::optional<ReplacementResult> replace(std::string_view s, std::string_view source_group,
                                         std::string_view target_group, const Lexicon &lexicon, Rng &rng);

struct EnumerationStats {
    std::size_t attempted = 0;
    std::size_t produced = 0;
    std::size_t no_marker = 0;
    std::size_t not_in_lexicon = 0;
};

// One candidate per (comment, source group in groups(s) ∩ eligible, target in
// eligible \ {source}) for which replace() finds a marker. Replacement pairs
// are not post-filtered, so they leave here with filter_passed set.
std::vector<PairCandidate> enumerate_wr_candidates(const CommentStore &store, const Lexicon &lexicon,
                                                   const std::set<std::string> &eligible, Rng &rng,
                                                   std::string_view method_tag = method::word_replacement,
                                                   EnumerationStats *stats = nullptr);

} // namespace fairpairs
