#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "permeval/errors.hpp"
#include "permeval/matching.hpp"

// Quantitative outputs: per-permutation accuracy summaries, the
// cross-permutation agreement score, variance ratios and geometric means,
// the paired Wilcoxon signed-rank test (exact for small n), Cohen's d, and
// Spearman/Kendall rank correlations with protocol difference matrices.

namespace permeval {

// ---------------------------------------------------------------------------
// Run matrices and accuracy summaries

struct RunMatrix {
    std::string dataset_id;
    std::string model_id;
    std::string protocol_fingerprint;
    std::vector<std::string> permutation_ids;             // exactly one "original"
    std::vector<std::string> question_ids;
    std::vector<std::vector<Prediction>> predictions;     // [question][permutation]

    void validate() const {
        if (question_ids.empty() || permutation_ids.empty())
            throw IncompleteGridError("run matrix is empty");
        if (std::count(permutation_ids.begin(), permutation_ids.end(), "original") != 1)
            throw IncompleteGridError("run matrix must contain exactly one original permutation");
        if (predictions.size() != question_ids.size())
            throw IncompleteGridError("run matrix: row count does not match question count");
        for (std::size_t q = 0; q < predictions.size(); ++q) {
            if (predictions[q].size() != permutation_ids.size())
                throw IncompleteGridError("run matrix: incomplete grid at question " + question_ids[q]);
            for (std::size_t p = 0; p < predictions[q].size(); ++p) {
                const Prediction& cell = predictions[q][p];
                if (cell.question_id != question_ids[q] || cell.permutation_id != permutation_ids[p])
                    throw IncompleteGridError("run matrix: misplaced cell (" + cell.question_id +
                                              ", " + cell.permutation_id + ")");
            }
        }
    }

    std::size_t original_column() const {
        for (std::size_t p = 0; p < permutation_ids.size(); ++p)
            if (permutation_ids[p] == "original") return p;
        throw IncompleteGridError("run matrix has no original permutation");
    }
};

inline double accuracy(const std::vector<const Prediction*>& column) {
    if (column.empty()) throw Error("accuracy of an empty prediction set");
    std::size_t correct = 0;
    for (const Prediction* p : column) correct += p->correct ? 1u : 0u;
    return static_cast<double>(correct) / static_cast<double>(column.size());
}

inline double accuracy(const RunMatrix& m, std::size_t permutation_column) {
    std::size_t correct = 0;
    for (const auto& row : m.predictions)
        correct += row.at(permutation_column).correct ? 1u : 0u;
    return static_cast<double>(correct) / static_cast<double>(m.predictions.size());
}

// Pairwise agreement between two predictions of the same question; the
// default is the identity indicator (same chosen option text -> 1).
using AgreementFn = std::function<double(const Prediction&, const Prediction&)>;

inline AgreementFn identity_agreement() {
    return [](const Prediction& a, const Prediction& b) {
        return a.predicted_identity == b.predicted_identity ? 1.0 : 0.0;
    };
}

// Embedding-based agreement: cosine between the chosen option texts.
inline AgreementFn embedding_agreement(EmbedFn embed_fn) {
    return [embed_fn](const Prediction& a, const Prediction& b) {
        std::vector<Vec> vecs = embed_fn({a.predicted_identity, b.predicted_identity});
        return similarity(vecs.at(0), vecs.at(1), SimilarityKind::cosine);
    };
}

// Mean agreement over all unordered pairs of each question's prediction
// multiset (no dedup), averaged over questions. 1.0 means every permutation
// produced the same answer everywhere.
inline double score(const RunMatrix& m, const AgreementFn& agreement = identity_agreement()) {
    m.validate();
    const std::size_t k = m.permutation_ids.size();
    if (k < 2) throw Error("agreement score needs at least 2 permutations");
    const double pairs = static_cast<double>(k) * static_cast<double>(k - 1) / 2.0;
    double total = 0;
    for (const auto& row : m.predictions) {
        double agree = 0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j) agree += agreement(row[i], row[j]);
        total += agree / pairs;
    }
    return total / static_cast<double>(m.predictions.size());
}

struct AccuracySummary {
    double acc_original = 0;
    double acc_mean_attack = 0;     // attacks only; the original is reported separately
    double abs_delta = 0;           // |acc_original - acc_mean_attack|
    double variance_all = 0;        // population variance over ALL permutations
    double acc_min = 0;
    double acc_max = 0;
    double range = 0;
    double score = 0;
    std::vector<double> attack_accuracies; // per attack permutation, plan order
};

inline AccuracySummary summarize(const RunMatrix& m, const AgreementFn& agreement = identity_agreement()) {
    m.validate();
    const std::size_t orig = m.original_column();
    AccuracySummary s;
    std::vector<double> all;
    for (std::size_t p = 0; p < m.permutation_ids.size(); ++p) {
        const double acc = accuracy(m, p);
        all.push_back(acc);
        if (p == orig) {
            s.acc_original = acc;
        } else {
            s.attack_accuracies.push_back(acc);
        }
    }
    if (s.attack_accuracies.empty()) throw IncompleteGridError("run matrix has no attack permutations");
    s.acc_mean_attack = std::accumulate(s.attack_accuracies.begin(), s.attack_accuracies.end(), 0.0) /
                        static_cast<double>(s.attack_accuracies.size());
    s.abs_delta = std::fabs(s.acc_original - s.acc_mean_attack);
    const double mean_all = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    double var = 0;
    for (double a : all) var += (a - mean_all) * (a - mean_all);
    s.variance_all = var / static_cast<double>(all.size());
    s.acc_min = *std::min_element(all.begin(), all.end());
    s.acc_max = *std::max_element(all.begin(), all.end());
    s.range = s.acc_max - s.acc_min;
    s.score = permeval::score(m, agreement);
    return s;
}

// ---------------------------------------------------------------------------
// Scalar statistics

// var_reduced / var_baseline; below 1 means the reduced protocol is steadier.
inline double variance_ratio(double var_md, double var_sl) {
    if (var_sl <= 0) throw Error("variance_ratio: baseline variance must be positive");
    return var_md / var_sl;
}

inline double geometric_mean(const std::vector<double>& values) {
    if (values.empty()) throw Error("geometric_mean of nothing");
    double log_sum = 0;
    for (double v : values) {
        if (v <= 0) throw Error("geometric_mean needs strictly positive values");
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(values.size()));
}

struct WilcoxonResult {
    double statistic = 0;   // W+ = sum of ranks of positive differences
    double p_two_sided = 1;
    double p_one_sided = 1; // P(W+ >= observed): small when diffs lean positive
    bool exact = false;
    int n = 0;              // nonzero differences used
};

namespace detail {

// Average ranks (1-based); ties share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return values[a] < values[b];
    });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace detail

// Paired signed-rank test. Zero differences are dropped, tied magnitudes get
// average ranks. For n <= 25 the null distribution of W+ is computed exactly
// by counting subsets of the doubled ranks (doubling makes every rank an
// integer, so the count is exact); larger n uses the normal approximation
// with tie correction and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& paired_diffs) {
    std::vector<double> diffs;
    for (double d : paired_diffs)
        if (d != 0.0) diffs.push_back(d);
    if (diffs.empty()) throw Error("wilcoxon: all differences are zero");

    const int n = static_cast<int>(diffs.size());
    std::vector<double> magnitudes;
    magnitudes.reserve(diffs.size());
    for (double d : diffs) magnitudes.push_back(std::fabs(d));
    const std::vector<double> ranks = detail::average_ranks(magnitudes);
    double w_plus = 0;
    for (int i = 0; i < n; ++i)
        if (diffs[static_cast<std::size_t>(i)] > 0) w_plus += ranks[static_cast<std::size_t>(i)];

    WilcoxonResult res;
    res.statistic = w_plus;
    res.n = n;

    if (n <= 25) {
        res.exact = true;
        std::vector<long long> ranks2;
        long long total2 = 0;
        for (double r : ranks) {
            const long long r2 = std::llround(2.0 * r);
            ranks2.push_back(r2);
            total2 += r2;
        }
        // ways[s] = number of sign assignments whose positive-rank sum is s/2.
        std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
        ways[0] = 1.0;
        for (const long long r2 : ranks2)
            for (long long s = total2; s >= r2; --s)
                ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - r2)];
        const long long w2 = std::llround(2.0 * w_plus);
        double count_ge = 0, count_le = 0;
        for (long long s = 0; s <= total2; ++s) {
            if (s >= w2) count_ge += ways[static_cast<std::size_t>(s)];
            if (s <= w2) count_le += ways[static_cast<std::size_t>(s)];
        }
        const double denom = std::ldexp(1.0, n); // 2^n
        res.p_one_sided = count_ge / denom;
        res.p_two_sided = std::min(1.0, 2.0 * std::min(count_ge, count_le) / denom);
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        double tie_term = 0;
        {
            std::vector<double> mags(magnitudes);
            std::sort(mags.begin(), mags.end());
            std::size_t i = 0;
            while (i < mags.size()) {
                std::size_t j = i;
                while (j + 1 < mags.size() && mags[j + 1] == mags[i]) ++j;
                const double t = static_cast<double>(j - i + 1);
                tie_term += t * t * t - t;
                i = j + 1;
            }
        }
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double sd = std::sqrt(var);
        const double z_one = (w_plus - mean - 0.5) / sd;
        res.p_one_sided = detail::normal_sf(z_one);
        const double shifted = std::max(0.0, std::fabs(w_plus - mean) - 0.5);
        res.p_two_sided = std::min(1.0, 2.0 * detail::normal_sf(shifted / sd));
    }
    return res;
}

// Paired-difference effect size: mean / sample standard deviation.
inline double cohens_d(const std::vector<double>& paired_diffs) {
    const std::size_t n = paired_diffs.size();
    if (n < 2) throw Error("cohens_d needs at least 2 differences");
    const double mean = std::accumulate(paired_diffs.begin(), paired_diffs.end(), 0.0) /
                        static_cast<double>(n);
    double ss = 0;
    for (double d : paired_diffs) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0) throw Error("cohens_d undefined: zero standard deviation");
    return mean / sd;
}

inline double median(std::vector<double> values) {
    if (values.empty()) throw Error("median of nothing");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Median-centered variant of the paired effect size. Reported alongside the
// mean-based one because median-summarized differences are a plausible
// alternative convention; the two can differ noticeably on skewed diffs.
inline double cohens_d_median(const std::vector<double>& paired_diffs) {
    const std::size_t n = paired_diffs.size();
    if (n < 2) throw Error("cohens_d_median needs at least 2 differences");
    const double mean = std::accumulate(paired_diffs.begin(), paired_diffs.end(), 0.0) /
                        static_cast<double>(n);
    double ss = 0;
    for (double d : paired_diffs) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0) throw Error("cohens_d_median undefined: zero standard deviation");
    return median(paired_diffs) / sd;
}

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) throw Error("correlation undefined for a constant vector");
    return sxy / std::sqrt(sxx * syy);
}

} // namespace detail

// Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length vectors");
    return detail::pearson(detail::average_ranks(x), detail::average_ranks(y));
}

// Tie-corrected tau-b.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw Error("kendall_tau: need two equal-length vectors");
    const std::size_t n = x.size();
    long long concordant = 0, discordant = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            const double prod = dx * dy;
            if (prod > 0) ++concordant;
            else if (prod < 0) ++discordant;
        }
    }
    auto tie_pairs = [](const std::vector<double>& v) {
        std::vector<double> s(v);
        std::sort(s.begin(), s.end());
        long long pairs = 0;
        std::size_t i = 0;
        while (i < s.size()) {
            std::size_t j = i;
            while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
            const long long t = static_cast<long long>(j - i + 1);
            pairs += t * (t - 1) / 2;
            i = j + 1;
        }
        return pairs;
    };
    const long long n0 = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
    const long long n1 = tie_pairs(x);
    const long long n2 = tie_pairs(y);
    const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    if (denom == 0) throw Error("kendall_tau undefined: one input is entirely tied");
    return static_cast<double>(concordant - discordant) / denom;
}

// ---------------------------------------------------------------------------
// Protocol comparisons

// Head-to-head comparison of one model's run under the baseline protocol
// (labels, "sl") and the reduced protocol ("md"). The per-permutation
// accuracy vectors are paired by permutation id for the significance tests.
struct RunComparison {
    AccuracySummary sl;
    AccuracySummary md;
    double variance_ratio = 1;              // var_md / var_sl
    double delta_score = 0;                 // score_md - score_sl
    std::vector<double> paired_diffs;       // per permutation, acc_sl - acc_md
    std::optional<WilcoxonResult> wilcoxon; // absent when every diff is zero
    std::optional<double> d_mean;           // absent when diffs have zero spread
    std::optional<double> d_median;
};

inline RunComparison compare_runs(const RunMatrix& sl, const RunMatrix& md,
                                  const AgreementFn& agreement = identity_agreement()) {
    if (sl.permutation_ids != md.permutation_ids)
        throw ConfigError("compare_runs: the two runs used different permutation plans");
    if (sl.question_ids.size() != md.question_ids.size())
        throw ConfigError("compare_runs: the two runs cover different question counts");
    RunComparison out;
    out.sl = summarize(sl, agreement);
    out.md = summarize(md, agreement);
    // Two flat runs (both variances zero) compare as equally stable.
    out.variance_ratio = (out.sl.variance_all == 0 && out.md.variance_all == 0)
                             ? 1.0
                             : variance_ratio(out.md.variance_all, out.sl.variance_all);
    out.delta_score = out.md.score - out.sl.score;
    for (std::size_t p = 0; p < sl.permutation_ids.size(); ++p)
        out.paired_diffs.push_back(accuracy(sl, p) - accuracy(md, p));
    const bool any_nonzero = std::any_of(out.paired_diffs.begin(), out.paired_diffs.end(),
                                         [](double d) { return d != 0.0; });
    if (any_nonzero) out.wilcoxon = wilcoxon_signed_rank(out.paired_diffs);
    const double first = out.paired_diffs.front();
    const bool constant = std::all_of(out.paired_diffs.begin(), out.paired_diffs.end(),
                                      [first](double d) { return d == first; });
    if (!constant) {
        out.d_mean = cohens_d(out.paired_diffs);
        out.d_median = cohens_d_median(out.paired_diffs);
    }
    return out;
}

// Published-table comparison: per-model, per-dataset accuracy variances under
// both protocols, fed in as a fixture. `published_ratio` carries the source
// table's own rounded quotient when available, so aggregates can be formed
// both from our recomputed cells and from the published ones (the published
// per-cell ratios come from unrounded variances, so aggregating them is the
// faithful way to reproduce the published geometric means).
struct VarianceCell {
    double var_sl = 0;
    double var_md = 0;
    std::optional<double> published_ratio;
};

struct VarianceTable {
    std::vector<std::string> models;
    std::vector<std::string> datasets;
    std::vector<std::vector<VarianceCell>> cells; // [model][dataset]
    // Optional per-model mean-accuracy columns (for the paired tests):
    std::vector<double> acc_mean_sl;
    std::vector<double> acc_mean_md;

    void validate() const {
        if (cells.size() != models.size())
            throw ConfigError("variance table: one cell row per model required");
        for (const auto& row : cells)
            if (row.size() != datasets.size())
                throw ConfigError("variance table: one cell per dataset required in every row");
        if (!acc_mean_sl.empty() && acc_mean_sl.size() != models.size())
            throw ConfigError("variance table: acc_mean_sl must cover every model");
        if (!acc_mean_md.empty() && acc_mean_md.size() != models.size())
            throw ConfigError("variance table: acc_mean_md must cover every model");
    }
};

struct VarianceComparison {
    std::vector<std::vector<double>> ratios;     // recomputed var_md / var_sl
    std::vector<double> row_geom;                // per model, over recomputed ratios
    std::vector<double> col_geom;                // per dataset
    double overall_geom = 1;
    // Same aggregates over the published per-cell ratios (when all present):
    std::optional<std::vector<double>> row_geom_published;
    std::optional<std::vector<double>> col_geom_published;
    std::optional<double> overall_geom_published;
    // Paired tests over the accuracy columns (when present), diffs = sl - md:
    std::optional<WilcoxonResult> wilcoxon;
    std::optional<double> d_mean;
    std::optional<double> d_median;
};

inline VarianceComparison compare_variance_table(const VarianceTable& table) {
    table.validate();
    const std::size_t m = table.models.size(), d = table.datasets.size();
    if (m == 0 || d == 0) throw ConfigError("variance table is empty");
    VarianceComparison out;
    out.ratios.assign(m, std::vector<double>(d, 0.0));
    bool all_published = true;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            out.ratios[i][j] = variance_ratio(table.cells[i][j].var_md, table.cells[i][j].var_sl);
            all_published = all_published && table.cells[i][j].published_ratio.has_value();
        }

    auto geoms = [&](auto cell_value) {
        std::vector<double> rows, cols;
        std::vector<double> everything;
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> row;
            for (std::size_t j = 0; j < d; ++j) row.push_back(cell_value(i, j));
            rows.push_back(geometric_mean(row));
        }
        for (std::size_t j = 0; j < d; ++j) {
            std::vector<double> col;
            for (std::size_t i = 0; i < m; ++i) col.push_back(cell_value(i, j));
            cols.push_back(geometric_mean(col));
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) everything.push_back(cell_value(i, j));
        return std::tuple(rows, cols, geometric_mean(everything));
    };

    std::tie(out.row_geom, out.col_geom, out.overall_geom) =
        geoms([&](std::size_t i, std::size_t j) { return out.ratios[i][j]; });
    if (all_published) {
        auto [rows, cols, overall] =
            geoms([&](std::size_t i, std::size_t j) { return *table.cells[i][j].published_ratio; });
        out.row_geom_published = std::move(rows);
        out.col_geom_published = std::move(cols);
        out.overall_geom_published = overall;
    }

    if (!table.acc_mean_sl.empty() && !table.acc_mean_md.empty()) {
        std::vector<double> diffs;
        for (std::size_t i = 0; i < m; ++i)
            diffs.push_back(table.acc_mean_sl[i] - table.acc_mean_md[i]);
        const bool any_nonzero = std::any_of(diffs.begin(), diffs.end(),
                                             [](double x) { return x != 0.0; });
        if (any_nonzero) out.wilcoxon = wilcoxon_signed_rank(diffs);
        const double first = diffs.front();
        const bool constant = std::all_of(diffs.begin(), diffs.end(),
                                          [first](double x) { return x == first; });
        if (!constant) {
            out.d_mean = cohens_d(diffs);
            out.d_median = cohens_d_median(diffs);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-benchmark correlation differences

// Per-protocol inputs: one mean-performance vector per benchmark (the mean is
// over the original permutation and all attacks), same model order everywhere.
struct BenchmarkTable {
    std::vector<std::string> benchmarks;
    std::vector<std::string> models;
    std::vector<std::vector<double>> means; // [benchmark][model]

    void validate() const {
        if (benchmarks.size() != means.size())
            throw ConfigError("benchmark table: name/vector count mismatch");
        for (const auto& v : means)
            if (v.size() != models.size())
                throw ConfigError("benchmark table: a vector does not cover every model");
    }
};

struct CorrelationDiff {
    std::vector<std::string> benchmarks;
    std::vector<std::vector<double>> rho_md, rho_sl, rho_diff;
    std::vector<std::vector<double>> tau_md, tau_sl, tau_diff;
};

// Pairwise benchmark-agreement matrices under each protocol and their
// difference (reduced-protocol minus baseline; positive = higher agreement
// under the reduced protocol). Diagonals are zero by construction.
inline CorrelationDiff correlation_diff(const BenchmarkTable& md, const BenchmarkTable& sl) {
    md.validate();
    sl.validate();
    if (md.benchmarks != sl.benchmarks)
        throw ConfigError("correlation_diff: benchmark sets differ between protocols");
    if (md.models != sl.models)
        throw ConfigError("correlation_diff: model sets differ between protocols");
    const std::size_t b = md.benchmarks.size();
    CorrelationDiff out;
    out.benchmarks = md.benchmarks;
    auto zeros = [b] { return std::vector<std::vector<double>>(b, std::vector<double>(b, 0.0)); };
    out.rho_md = zeros(); out.rho_sl = zeros(); out.rho_diff = zeros();
    out.tau_md = zeros(); out.tau_sl = zeros(); out.tau_diff = zeros();
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = i + 1; j < b; ++j) {
            const double rmd = spearman(md.means[i], md.means[j]);
            const double rsl = spearman(sl.means[i], sl.means[j]);
            const double tmd = kendall_tau(md.means[i], md.means[j]);
            const double tsl = kendall_tau(sl.means[i], sl.means[j]);
            out.rho_md[i][j] = out.rho_md[j][i] = rmd;
            out.rho_sl[i][j] = out.rho_sl[j][i] = rsl;
            out.tau_md[i][j] = out.tau_md[j][i] = tmd;
            out.tau_sl[i][j] = out.tau_sl[j][i] = tsl;
            out.rho_diff[i][j] = out.rho_diff[j][i] = rmd - rsl;
            out.tau_diff[i][j] = out.tau_diff[j][i] = tmd - tsl;
        }
    }
    return out;
}

} // namespace permeval
