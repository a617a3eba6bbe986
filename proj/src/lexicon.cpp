#include "fairpairs/lexicon.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fairpairs/text.hpp"

namespace fairpairs {

std::string to_string(TermKind kind) { return kind == TermKind::noun ? "noun" : "descriptor"; }

const Lexicon::Owner *Lexicon::Occurrence::owner(std::string_view group) const {
    for (const auto &o : owners)
        if (o.group == group) return &o;
    return nullptr;
}

void Lexicon::add_group(const std::string &name, GroupTerms terms) {
    if (terms.nouns.empty() && terms.descriptors.empty())
        throw FormatError(fmt::format("lexicon group '{}' has no terms", name));
    for (const auto *list : {&terms.nouns, &terms.descriptors})
        for (const auto &t : *list)
            if (text::trim(t).empty()) throw FormatError(fmt::format("lexicon group '{}' has an empty term", name));
    groups_[name] = std::move(terms);
    rebuild_index();
}

void Lexicon::set_display_name(const std::string &group, std::string name) { display_names_[group] = std::move(name); }

bool Lexicon::contains(std::string_view group) const { return groups_.find(group) != groups_.end(); }

const GroupTerms &Lexicon::terms(std::string_view group) const {
    auto it = groups_.find(group);
    if (it == groups_.end()) throw PreconditionError(fmt::format("unknown group '{}'", group));
    return it->second;
}

std::vector<std::string> Lexicon::groups() const {
    std::vector<std::string> out;
    for (const auto &[name, _] : groups_) out.push_back(name);
    return out;
}

std::string Lexicon::display_name(std::string_view group) const {
    if (auto it = display_names_.find(group); it != display_names_.end()) return it->second;
    return text::to_lower(group);
}

void Lexicon::rebuild_index() {
    std::map<std::string, std::vector<Owner>> by_term;
    for (const auto &[group, terms] : groups_) {
        for (const auto &t : terms.nouns) by_term[text::to_lower(text::trim(t))].push_back({group, TermKind::noun});
        for (const auto &t : terms.descriptors)
            by_term[text::to_lower(text::trim(t))].push_back({group, TermKind::descriptor});
    }
    patterns_.clear();
    for (auto &[term, owners] : by_term) patterns_.push_back({term, std::move(owners)});
    std::stable_sort(patterns_.begin(), patterns_.end(),
                     [](const Pattern &a, const Pattern &b) { return a.lower.size() > b.lower.size(); });
}

std::vector<Lexicon::Occurrence> Lexicon::find_terms(std::string_view s) const {
    std::vector<Occurrence> out;
    auto iequal = [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    };
    std::size_t i = 0;
    while (i < s.size()) {
        const bool at_boundary = i == 0 || !text::is_word_char(s[i - 1]);
        bool matched = false;
        if (at_boundary && text::is_word_char(s[i])) {
            for (const auto &p : patterns_) {
                const auto len = p.lower.size();
                if (i + len > s.size()) continue;
                if (i + len < s.size() && text::is_word_char(s[i + len])) continue;
                if (!std::equal(p.lower.begin(), p.lower.end(), s.begin() + static_cast<std::ptrdiff_t>(i), iequal))
                    continue;
                out.push_back({i, i + len, std::string(s.substr(i, len)), p.owners});
                i += len;
                matched = true;
                break;
            }
        }
        if (!matched) ++i;
    }
    return out;
}

bool Lexicon::is_term_of(std::string_view term, std::string_view group, std::optional<TermKind> kind) const {
    const auto lower = text::to_lower(term);
    for (const auto &p : patterns_) {
        if (p.lower != lower) continue;
        for (const auto &o : p.owners)
            if (o.group == group && (!kind || o.kind == *kind)) return true;
    }
    return false;
}

Lexicon Lexicon::from_json(const json &j) {
    Lexicon lex;
    try {
        for (const auto &[group, entry] : j.at("groups").items()) {
            if (!entry.is_object()) throw FormatError(fmt::format("lexicon group '{}' must be an object", group));
            GroupTerms terms;
            for (const auto &[key, list] : entry.items()) {
                if (key == "nouns") {
                    terms.nouns = list.get<std::vector<std::string>>();
                } else if (key == "descriptors") {
                    terms.descriptors = list.get<std::vector<std::string>>();
                } else {
                    throw FormatError(fmt::format("lexicon group '{}': unknown kind key '{}'", group, key));
                }
            }
            lex.add_group(group, std::move(terms));
        }
        if (j.contains("display_names"))
            for (const auto &[group, name] : j.at("display_names").items()) lex.set_display_name(group, name.get<std::string>());
    } catch (const json::exception &e) {
        throw FormatError(fmt::format("lexicon: {}", e.what()));
    }
    return lex;
}

json Lexicon::to_json() const {
    json groups = json::object();
    for (const auto &[name, terms] : groups_)
        groups[name] = {{"descriptors", terms.descriptors}, {"nouns", terms.nouns}};
    json j = {{"groups", groups}};
    if (!display_names_.empty()) {
        json names = json::object();
        for (const auto &[g, n] : display_names_) names[g] = n;
        j["display_names"] = names;
    }
    return j;
}

Lexicon load_lexicon(const std::filesystem::path &path) {
    try {
        return Lexicon::from_json(json::parse(text::read_file(path)));
    } catch (const json::parse_error &e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void save_lexicon(const Lexicon &lexicon, const std::filesystem::path &path) {
    text::write_file(path, lexicon.to_json().dump(2) + "\n");
}

// ─── Replacement ────────────────────────────────────────────────────────────

json ReplacementResult::to_json() const {
    json reps = json::array();
    for (const auto &r : replacements)
        reps.push_back({{"begin", r.begin},
                        {"end", r.end},
                        {"source_term", r.source_term},
                        {"target_term", r.target_term},
                        {"kind", to_string(r.kind)}});
    return {{"original", original}, {"modified", modified}, {"replacements", reps}};
}

TermPicker uniform_picker(Rng &rng) {
    return [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
}

namespace {

bool is_acronym(std::string_view term) {
    int upper = 0;
    for (char c : term) {
        if (std::islower(static_cast<unsigned char>(c))) return false;
        if (std::isupper(static_cast<unsigned char>(c))) ++upper;
    }
    return upper > 1;
}

} // namespace

std::optional<ReplacementResult> replace(std::string_view s, std::string_view source_group,
                                         std::string_view target_group, const Lexicon &lexicon,
                                         const TermPicker &pick) {
    if (!lexicon.contains(source_group)) throw PreconditionError(fmt::format("unknown group '{}'", source_group));
    if (!lexicon.contains(target_group)) throw PreconditionError(fmt::format("unknown group '{}'", target_group));
    if (source_group == target_group) throw PreconditionError("source and target group must differ");
    const auto &target = lexicon.terms(target_group);

    ReplacementResult result;
    result.original = std::string(s);
    std::size_t cursor = 0;
    for (const auto &occ : lexicon.find_terms(s)) {
        const auto *owner = occ.owner(source_group);
        if (!owner) continue;
        TermKind kind = owner->kind;
        if (target.list(kind).empty()) kind = kind == TermKind::noun ? TermKind::descriptor : TermKind::noun;
        const auto &list = target.list(kind);
        const auto &chosen = list.at(pick(list.size()));
        std::string emitted = is_acronym(chosen) ? chosen : text::with_initial_case(chosen, text::starts_upper(occ.text));
        result.modified.append(s.substr(cursor, occ.begin - cursor));
        result.modified += emitted;
        cursor = occ.end;
        result.replacements.push_back({occ.begin, occ.end, occ.text, std::move(emitted), owner->kind, kind});
    }
    if (result.replacements.empty()) return std::nullopt;
    result.modified.append(s.substr(cursor));
    if (result.modified == result.original) return std::nullopt;
    return result;
}

std::optional<ReplacementResult> replace(std::string_view s, std::string_view source_group,
                                         std::string_view target_group, const Lexicon &lexicon, Rng &rng) {
    return replace(s, source_group, target_group, lexicon, uniform_picker(rng));
}

std::vector<PairCandidate> enumerate_wr_candidates(const CommentStore &store, const Lexicon &lexicon,
                                                   const std::set<std::string> &eligible, Rng &rng,
                                                   std::string_view method_tag, EnumerationStats *stats) {
    EnumerationStats st;
    std::vector<PairCandidate> out;
    auto pick = uniform_picker(rng);
    for (const auto &comment : store) {
        if (!comment.annotated()) continue;
        const auto labeled = label(comment);
        for (const auto &j : labeled.groups) {
            if (!eligible.count(j)) continue;
            for (const auto &jp : eligible) {
                if (jp == j) continue;
                ++st.attempted;
                if (!lexicon.contains(j) || !lexicon.contains(jp)) {
                    ++st.not_in_lexicon;
                    continue;
                }
                auto r = replace(comment.text, j, jp, lexicon, pick);
                if (!r) {
                    ++st.no_marker;
                    continue;
                }
                json prov = {{"comment_id", comment.id}, {"split", to_string(comment.split)}, {"replacement", r->to_json()}};
                out.push_back(PairCandidate::make(comment.text, r->modified, std::string(method_tag), j, jp, std::move(prov)));
                out.back().filter_passed = true; // replacement pairs skip the group-classifier filter
                ++st.produced;
            }
        }
    }
    spdlog::info("word replacement: {} attempts, {} candidates, {} without marker, {} outside lexicon", st.attempted,
                 st.produced, st.no_marker, st.not_in_lexicon);
    if (stats) *stats = st;
    return out;
}

} // namespace fairpairs
