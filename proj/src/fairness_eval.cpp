#include "fairpairs/fairness_eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace fairpairs::eval {

namespace {

struct Counts {
    double tp = 0, tn = 0, fp = 0, fn = 0;
};

Counts count(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) throw PreconditionError("prediction and label counts differ");
    Counts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = preds[i] != 0, y = labels[i] != 0;
        if (p && y) ++c.tp;
        else if (!p && !y) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

} // namespace

Rates confusion_rates(std::span<const int> preds, std::span<const int> labels) {
    const auto c = count(preds, labels);
    const double n = c.tp + c.tn + c.fp + c.fn;
    if (n == 0) throw PreconditionError("no predictions");
    Rates r;
    r.tpr = c.tp + c.fn > 0 ? 100.0 * c.tp / (c.tp + c.fn) : 0.0;
    r.tnr = c.tn + c.fp > 0 ? 100.0 * c.tn / (c.tn + c.fp) : 0.0;
    r.acc = 100.0 * (c.tp + c.tn) / n;
    return r;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels) {
    const auto c = count(preds, labels);
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
        throw PreconditionError("balanced accuracy needs both classes among the labels");
    const auto r = confusion_rates(preds, labels);
    return (r.tpr + r.tnr) / 2.0;
}

double individual_fairness(std::span<const int> preds_s, std::span<const int> preds_s_prime) {
    if (preds_s.size() != preds_s_prime.size()) throw PreconditionError("pair prediction counts differ");
    if (preds_s.empty()) throw PreconditionError("individual fairness of an empty pool");
    std::size_t same = 0;
    for (std::size_t i = 0; i < preds_s.size(); ++i) same += (preds_s[i] != 0) == (preds_s_prime[i] != 0);
    return 100.0 * static_cast<double>(same) / static_cast<double>(preds_s.size());
}

double individual_fairness(const BatchClassifier &f, const std::vector<PairCandidate> &pairs) {
    if (pairs.empty()) throw PreconditionError("individual fairness of an empty pool");
    std::vector<std::string> a, b;
    a.reserve(pairs.size());
    b.reserve(pairs.size());
    for (const auto &p : pairs) {
        a.push_back(p.s);
        b.push_back(p.s_prime);
    }
    const auto pa = f(a);
    const auto pb = f(b);
    return individual_fairness(pa, pb);
}

std::pair<double, double> pairwise_gaps(std::span<const double> values) {
    if (values.size() < 2) throw PreconditionError("gaps need at least two values");
    double sum = 0.0, mx = 0.0;
    std::size_t n = 0;
    for (std::size_t a = 0; a < values.size(); ++a)
        for (std::size_t b = a + 1; b < values.size(); ++b) {
            const double g = std::abs(values[a] - values[b]);
            sum += g;
            mx = std::max(mx, g);
            ++n;
        }
    return {sum / static_cast<double>(n), mx};
}

json GapReport::to_json() const {
    json groups = json::object();
    for (const auto &[g, r] : per_group) groups[g] = {{"tpr", r.tpr}, {"tnr", r.tnr}, {"acc", r.acc}};
    return {{"tpr_gap_mean", tpr_mean}, {"tpr_gap_max", tpr_max}, {"tnr_gap_mean", tnr_mean},
            {"tnr_gap_max", tnr_max},   {"groups", groups},      {"dropped", dropped}};
}

GapReport eo_gaps(const BatchClassifier &f, const CommentStore &test, const std::set<std::string> &groups) {
    std::vector<std::string> texts;
    std::vector<LabeledComment> labeled;
    for (const auto &c : test) {
        texts.push_back(c.text);
        labeled.push_back(label(c));
    }
    const auto preds = f(texts);
    GapReport report;
    std::vector<double> tprs, tnrs;
    for (const auto &g : groups) {
        std::vector<int> p, y;
        for (std::size_t i = 0; i < labeled.size(); ++i)
            if (labeled[i].groups.count(g)) {
                p.push_back(preds[i]);
                y.push_back(labeled[i].y);
            }
        const bool has_pos = std::count(y.begin(), y.end(), 1) > 0;
        const bool has_neg = std::count(y.begin(), y.end(), 0) > 0;
        if (!has_pos || !has_neg) {
            spdlog::warn("equality-of-odds: group '{}' has a single-class restriction ({} comments); dropped", g,
                         y.size());
            report.dropped.push_back(g);
            continue;
        }
        const auto r = confusion_rates(p, y);
        report.per_group[g] = r;
        tprs.push_back(r.tpr);
        tnrs.push_back(r.tnr);
    }
    if (tprs.size() < 2) throw PreconditionError("equality-of-odds gaps need two groups with both labels present");
    std::tie(report.tpr_mean, report.tpr_max) = pairwise_gaps(tprs);
    std::tie(report.tnr_mean, report.tnr_max) = pairwise_gaps(tnrs);
    return report;
}

// ─── Cross evaluation ───────────────────────────────────────────────────────

bool CrossEvalReport::diagonal_dominant() const {
    bool any = false;
    for (std::size_t c = 0; c < classifiers.size(); ++c) {
        if (!trained_on[c]) continue;
        auto it = std::find(pools.begin(), pools.end(), *trained_on[c]);
        if (it == pools.end()) continue;
        const auto own = static_cast<std::size_t>(it - pools.begin());
        any = true;
        for (std::size_t p = 0; p < pools.size(); ++p)
            if (fairness[c][p] > fairness[c][own]) return false;
    }
    return any;
}

std::string CrossEvalReport::render_table() const {
    std::size_t name_width = 20;
    for (const auto &c : classifiers) name_width = std::max(name_width, c.size() + 2);
    std::ostringstream out;
    out << fmt::format("{:<{}}{:>8}", "Training/Evaluation", name_width, "BA");
    for (const auto &p : pools) out << fmt::format("{:>{}}", p, std::max<std::size_t>(10, p.size() + 2));
    out << '\n';
    for (std::size_t c = 0; c < classifiers.size(); ++c) {
        out << fmt::format("{:<{}}{:>8}", classifiers[c], name_width, format_percent(balanced_accuracy[c]));
        for (std::size_t p = 0; p < pools.size(); ++p) {
            const bool own = trained_on[c] && *trained_on[c] == pools[p];
            auto cell = format_percent(fairness[c][p]) + (own ? "*" : "");
            out << fmt::format("{:>{}}", cell, std::max<std::size_t>(10, pools[p].size() + 2));
        }
        out << '\n';
    }
    return out.str();
}

std::string CrossEvalReport::to_csv() const {
    std::ostringstream out;
    out << "classifier,ba";
    for (const auto &p : pools) out << ',' << p;
    out << '\n';
    for (std::size_t c = 0; c < classifiers.size(); ++c) {
        out << classifiers[c] << ',' << format_percent(balanced_accuracy[c]);
        for (std::size_t p = 0; p < pools.size(); ++p) out << ',' << format_percent(fairness[c][p]);
        out << '\n';
    }
    return out.str();
}

json CrossEvalReport::to_json() const {
    json rows = json::array();
    for (std::size_t c = 0; c < classifiers.size(); ++c) {
        json f = json::object();
        for (std::size_t p = 0; p < pools.size(); ++p) f[pools[p]] = fairness[c][p];
        rows.push_back({{"classifier", classifiers[c]},
                        {"balanced_accuracy", balanced_accuracy[c]},
                        {"trained_on", trained_on[c] ? json(*trained_on[c]) : json(nullptr)},
                        {"individual_fairness", f}});
    }
    return {{"pools", pools}, {"rows", rows}, {"diagonal_dominant", diagonal_dominant()}};
}

CrossEvalReport cross_eval(const std::vector<NamedClassifier> &classifiers, const std::vector<NamedPool> &pools,
                           const CommentStore &test) {
    CrossEvalReport report;
    std::vector<std::string> texts;
    std::vector<int> labels;
    for (const auto &c : test) {
        texts.push_back(c.text);
        labels.push_back(label(c).y);
    }
    for (const auto &p : pools) report.pools.push_back(p.name);
    for (const auto &clf : classifiers) {
        report.classifiers.push_back(clf.name);
        report.trained_on.push_back(clf.trained_on);
        report.balanced_accuracy.push_back(balanced_accuracy(clf.predict(texts), labels));
        std::vector<double> row;
        for (const auto &p : pools) row.push_back(individual_fairness(clf.predict, p.pairs));
        report.fairness.push_back(std::move(row));
    }
    return report;
}

// ─── Lipschitz equivalence ─────────────────────────────────────────────────

void FiniteMetricSpace::validate() const {
    if (!(lipschitz_constant > 0)) throw PreconditionError("Lipschitz constant must be positive");
    for (std::size_t a = 0; a < d.size(); ++a) {
        if (d[a].size() != d.size()) throw PreconditionError("distance table is not square");
        if (d[a][a] != 0.0) throw PreconditionError("distance table has a non-zero diagonal");
        for (std::size_t b = 0; b < d.size(); ++b)
            if (d[a][b] < 0.0 || d[a][b] != d[b][a]) throw PreconditionError("distance table is not a symmetric non-negative table");
    }
}

int similarity_indicator(const FiniteMetricSpace &space, std::size_t a, std::size_t b) {
    return space.lipschitz_constant * space.d[a][b] >= 1.0 ? 1 : 0;
}

LipschitzCheck lipschitz_equivalence_check(const FiniteMetricSpace &space, std::span<const int> f) {
    space.validate();
    if (f.size() != space.size()) throw PreconditionError("function table size differs from the point count");
    LipschitzCheck out;
    for (std::size_t a = 0; a < space.size(); ++a)
        for (std::size_t b = 0; b < space.size(); ++b) {
            const int db = f[a] != f[b] ? 1 : 0;
            const bool lip = static_cast<double>(db) <= space.lipschitz_constant * space.d[a][b];
            const bool con = similarity_indicator(space, a, b) >= db;
            if (!lip) out.lipschitz = false;
            if (!con) out.constraint_satisfied = false;
            if ((!lip || !con) && !out.witness) out.witness = {{a, b}};
        }
    return out;
}

Interval mean_ci(std::span<const double> values) {
    if (values.empty()) throw PreconditionError("interval of an empty sample");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

std::string format_percent(double value) { return fmt::format("{:.1f}", value); }

} // namespace fairpairs::eval
