#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "permeval/errors.hpp"
#include "permeval/metrics.hpp"

// Presentation layer: aligned text tables (accuracy columns in percent,
// variances in squared percentage points), machine-readable JSON mirrors of
// every table, and the box-plot data export. No numbers are computed here
// beyond unit scaling and quantiles for the box-plot file.

namespace permeval {

inline std::string fmt_fixed(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

inline std::string fmt_compact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// Monospace table with a header rule; text columns left-aligned, numbers
// right-aligned, two-space gutters.
struct TextTable {
    std::vector<std::string> headers;
    std::vector<bool> left_align; // per column; missing entries = right
    std::vector<std::vector<std::string>> rows;

    std::string render() const {
        std::vector<std::size_t> width(headers.size());
        for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
        for (const auto& row : rows) {
            if (row.size() != headers.size())
                throw Error("text table row width mismatch");
            for (std::size_t c = 0; c < row.size(); ++c)
                width[c] = std::max(width[c], row[c].size());
        }
        auto pad = [&](const std::string& cell, std::size_t c) {
            const bool left = c < left_align.size() && left_align[c];
            std::string out;
            if (!left) out.append(width[c] - cell.size(), ' ');
            out += cell;
            if (left) out.append(width[c] - cell.size(), ' ');
            return out;
        };
        std::string out;
        for (std::size_t c = 0; c < headers.size(); ++c) {
            if (c) out += "  ";
            out += pad(headers[c], c);
        }
        out += '\n';
        for (std::size_t c = 0; c < headers.size(); ++c) {
            if (c) out += "  ";
            out += std::string(width[c], '-');
        }
        out += '\n';
        for (const auto& row : rows) {
            for (std::size_t c = 0; c < row.size(); ++c) {
                if (c) out += "  ";
                out += pad(row[c], c);
            }
            out += '\n';
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Accuracy summaries

struct SummaryRow {
    std::string model;
    std::string dataset;
    std::string protocol; // e.g. "matched+dash"
    AccuracySummary summary;
};

// Accuracies are shown x100 (percent); variance in squared percentage points
// (fraction variance x 10^4) so values line up with published tables.
inline std::vector<std::string> summary_cells(const AccuracySummary& s) {
    return {fmt_fixed(100.0 * s.acc_mean_attack, 2), fmt_fixed(100.0 * s.acc_original, 2),
            fmt_fixed(100.0 * s.abs_delta, 2),       fmt_fixed(1e4 * s.variance_all, 2),
            fmt_fixed(100.0 * s.acc_min, 2),         fmt_fixed(100.0 * s.acc_max, 2),
            fmt_fixed(100.0 * s.range, 2),           fmt_fixed(s.score, 3)};
}

inline const std::vector<std::string>& summary_headers() {
    static const std::vector<std::string> h = {"ACC_Mean", "ACC_ORG", "|dACC|", "Var",
                                               "ACC_min", "ACC_max", "Range", "SCORE"};
    return h;
}

inline std::string render_summary_table(const std::vector<SummaryRow>& rows) {
    TextTable t;
    t.headers = {"MODEL", "DATASET", "PROTOCOL"};
    t.left_align = {true, true, true};
    for (const auto& h : summary_headers()) t.headers.push_back(h);
    for (const auto& row : rows) {
        std::vector<std::string> cells = {row.model, row.dataset, row.protocol};
        for (auto& c : summary_cells(row.summary)) cells.push_back(std::move(c));
        t.rows.push_back(std::move(cells));
    }
    return t.render();
}

inline nlohmann::ordered_json summary_to_json(const AccuracySummary& s) {
    nlohmann::ordered_json j;
    j["acc_original"] = s.acc_original;
    j["acc_mean_attack"] = s.acc_mean_attack;
    j["abs_delta"] = s.abs_delta;
    j["variance_all"] = s.variance_all;
    j["acc_min"] = s.acc_min;
    j["acc_max"] = s.acc_max;
    j["range"] = s.range;
    j["score"] = s.score;
    j["attack_accuracies"] = s.attack_accuracies;
    return j;
}

inline AccuracySummary summary_from_json(const nlohmann::json& j, const std::string& where) {
    AccuracySummary s;
    try {
        s.acc_original = j.at("acc_original").get<double>();
        s.acc_mean_attack = j.at("acc_mean_attack").get<double>();
        s.abs_delta = j.at("abs_delta").get<double>();
        s.variance_all = j.at("variance_all").get<double>();
        s.acc_min = j.at("acc_min").get<double>();
        s.acc_max = j.at("acc_max").get<double>();
        s.range = j.at("range").get<double>();
        s.score = j.at("score").get<double>();
        s.attack_accuracies = j.at("attack_accuracies").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": bad accuracy summary: " + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Comparison rendering

inline std::string render_significance(const std::optional<WilcoxonResult>& w,
                                       const std::optional<double>& d_mean,
                                       const std::optional<double>& d_median) {
    std::string out;
    if (w) {
        out += "Wilcoxon signed-rank (diffs = baseline - reduced): W+ = " + fmt_compact(w->statistic) +
               ", n = " + std::to_string(w->n) + ", one-sided p = " + fmt_compact(w->p_one_sided) +
               ", two-sided p = " + fmt_compact(w->p_two_sided) +
               (w->exact ? " (exact)" : " (normal approximation)") + "\n";
    } else {
        out += "Wilcoxon signed-rank: not applicable (no nonzero paired differences)\n";
    }
    if (d_mean) {
        out += "Cohen's d (paired): " + fmt_fixed(*d_mean, 3) +
               "  [median-centered variant: " + fmt_fixed(*d_median, 3) + "]\n";
    } else {
        out += "Cohen's d: not applicable (paired differences have zero spread)\n";
    }
    return out;
}

inline std::string render_run_comparison(const std::string& label_sl, const std::string& label_md,
                                         const RunComparison& c) {
    std::string out;
    out += "Variance ratio (reduced / baseline): " + fmt_compact(c.variance_ratio) + "\n";
    out += "Delta SCORE (reduced - baseline):    " + fmt_compact(c.delta_score) + "\n\n";
    out += render_significance(c.wilcoxon, c.d_mean, c.d_median);
    out += "\n";
    std::vector<SummaryRow> rows;
    rows.push_back({label_sl, "", "baseline", c.sl});
    rows.push_back({label_md, "", "reduced", c.md});
    TextTable t;
    t.headers = {"RUN", "ROLE"};
    t.left_align = {true, true};
    for (const auto& h : summary_headers()) t.headers.push_back(h);
    for (const auto& row : rows) {
        std::vector<std::string> cells = {row.model, row.protocol};
        for (auto& cell : summary_cells(row.summary)) cells.push_back(std::move(cell));
        t.rows.push_back(std::move(cells));
    }
    out += t.render();
    return out;
}

inline std::string render_variance_comparison(const VarianceTable& table, const VarianceComparison& c) {
    TextTable t;
    t.headers = {"MODEL"};
    t.left_align = {true};
    for (const auto& d : table.datasets) t.headers.push_back(d);
    t.headers.push_back("GEOM");
    for (std::size_t i = 0; i < table.models.size(); ++i) {
        std::vector<std::string> cells = {table.models[i]};
        for (std::size_t j = 0; j < table.datasets.size(); ++j)
            cells.push_back(fmt_fixed(c.ratios[i][j], 3));
        cells.push_back(fmt_fixed(c.row_geom[i], 2));
        t.rows.push_back(std::move(cells));
    }
    std::vector<std::string> footer = {"GEOM"};
    for (std::size_t j = 0; j < table.datasets.size(); ++j)
        footer.push_back(fmt_fixed(c.col_geom[j], 2));
    footer.push_back(fmt_fixed(c.overall_geom, 2));
    t.rows.push_back(std::move(footer));

    std::string out = "Variance ratios (reduced / baseline), recomputed from the variance columns:\n\n";
    out += t.render();
    if (c.overall_geom_published) {
        out += "\nAggregates over the table's own per-cell ratios: overall geometric mean " +
               fmt_fixed(*c.overall_geom_published, 2) + "\n";
    }
    if (c.wilcoxon || c.d_mean) {
        out += "\nPaired tests over the mean-accuracy columns:\n";
        out += render_significance(c.wilcoxon, c.d_mean, c.d_median);
    }
    return out;
}

inline nlohmann::ordered_json wilcoxon_to_json(const WilcoxonResult& w) {
    nlohmann::ordered_json j;
    j["statistic"] = w.statistic;
    j["p_one_sided"] = w.p_one_sided;
    j["p_two_sided"] = w.p_two_sided;
    j["exact"] = w.exact;
    j["n"] = w.n;
    return j;
}

inline nlohmann::ordered_json variance_comparison_to_json(const VarianceTable& table,
                                                          const VarianceComparison& c) {
    nlohmann::ordered_json j;
    j["models"] = table.models;
    j["datasets"] = table.datasets;
    j["ratios"] = c.ratios;
    j["row_geom"] = c.row_geom;
    j["col_geom"] = c.col_geom;
    j["overall_geom"] = c.overall_geom;
    if (c.overall_geom_published) {
        j["row_geom_published"] = *c.row_geom_published;
        j["col_geom_published"] = *c.col_geom_published;
        j["overall_geom_published"] = *c.overall_geom_published;
    }
    if (c.wilcoxon) j["wilcoxon"] = wilcoxon_to_json(*c.wilcoxon);
    if (c.d_mean) {
        j["cohens_d"] = *c.d_mean;
        j["cohens_d_median"] = *c.d_median;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Fixture parsing (compare/corr inputs)

// Variance fixture document:
//   {"models": [...], "datasets": [...],
//    "cells": {model: {dataset: {"var_sl": x, "var_md": y, "ratio": z?}}},
//    "acc_mean_sl": {model: x}?, "acc_mean_md": {model: x}?}
inline VarianceTable variance_table_from_json(const nlohmann::json& j, const std::string& where) {
    VarianceTable t;
    try {
        t.models = j.at("models").get<std::vector<std::string>>();
        t.datasets = j.at("datasets").get<std::vector<std::string>>();
        const auto& cells = j.at("cells");
        for (const auto& model : t.models) {
            std::vector<VarianceCell> row;
            for (const auto& dataset : t.datasets) {
                const auto& c = cells.at(model).at(dataset);
                VarianceCell cell;
                cell.var_sl = c.at("var_sl").get<double>();
                cell.var_md = c.at("var_md").get<double>();
                if (c.contains("ratio")) cell.published_ratio = c.at("ratio").get<double>();
                row.push_back(cell);
            }
            t.cells.push_back(std::move(row));
        }
        if (j.contains("acc_mean_sl"))
            for (const auto& model : t.models)
                t.acc_mean_sl.push_back(j.at("acc_mean_sl").at(model).get<double>());
        if (j.contains("acc_mean_md"))
            for (const auto& model : t.models)
                t.acc_mean_md.push_back(j.at("acc_mean_md").at(model).get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": bad variance fixture: " + e.what());
    }
    t.validate();
    return t;
}

// Correlation input document:
//   {"models": [...], "benchmarks": [...],
//    "md": {benchmark: [per-model means]}, "sl": {benchmark: [...]}}
// Means are per-model performance averaged over the original permutation and
// every attack permutation.
inline std::pair<BenchmarkTable, BenchmarkTable>
benchmark_tables_from_json(const nlohmann::json& j, const std::string& where) {
    BenchmarkTable md, sl;
    try {
        md.models = sl.models = j.at("models").get<std::vector<std::string>>();
        md.benchmarks = sl.benchmarks = j.at("benchmarks").get<std::vector<std::string>>();
        for (const auto& b : md.benchmarks) {
            md.means.push_back(j.at("md").at(b).get<std::vector<double>>());
            sl.means.push_back(j.at("sl").at(b).get<std::vector<double>>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": bad correlation input: " + e.what());
    }
    md.validate();
    sl.validate();
    return {md, sl};
}

// ---------------------------------------------------------------------------
// Correlation matrices

inline std::string render_matrix(const std::string& title, const std::vector<std::string>& names,
                                 const std::vector<std::vector<double>>& m) {
    TextTable t;
    t.headers = {title};
    t.left_align = {true};
    for (const auto& n : names) t.headers.push_back(n);
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::vector<std::string> cells = {names[i]};
        for (std::size_t j = 0; j < names.size(); ++j) cells.push_back(fmt_fixed(m[i][j], 3));
        t.rows.push_back(std::move(cells));
    }
    return t.render();
}

inline std::string render_correlation_diff(const CorrelationDiff& c) {
    std::string out;
    out += render_matrix("rho (reduced)", c.benchmarks, c.rho_md) + "\n";
    out += render_matrix("rho (baseline)", c.benchmarks, c.rho_sl) + "\n";
    out += render_matrix("rho diff", c.benchmarks, c.rho_diff) + "\n";
    out += render_matrix("tau (reduced)", c.benchmarks, c.tau_md) + "\n";
    out += render_matrix("tau (baseline)", c.benchmarks, c.tau_sl) + "\n";
    out += render_matrix("tau diff", c.benchmarks, c.tau_diff);
    return out;
}

inline nlohmann::ordered_json correlation_diff_to_json(const CorrelationDiff& c) {
    nlohmann::ordered_json j;
    j["benchmarks"] = c.benchmarks;
    j["rho_md"] = c.rho_md;
    j["rho_sl"] = c.rho_sl;
    j["rho_diff"] = c.rho_diff;
    j["tau_md"] = c.tau_md;
    j["tau_sl"] = c.tau_sl;
    j["tau_diff"] = c.tau_diff;
    return j;
}

// ---------------------------------------------------------------------------
// Box-plot data

namespace detail {

// Linear-interpolation quantile over a sorted copy (the common spreadsheet /
// numerical-library convention).
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error("quantile of nothing");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

} // namespace detail

// One box per model: quartile box and min/max whiskers over every
// permutation's accuracy, the original permutation as a separate dot, and the
// agreement score as a star marker.
inline nlohmann::ordered_json boxplot_entry(const std::string& model, const std::string& dataset,
                                            const std::string& protocol,
                                            const std::vector<double>& per_permutation_acc,
                                            double acc_original, double score) {
    if (per_permutation_acc.empty()) throw Error("boxplot entry needs accuracies");
    nlohmann::ordered_json j;
    j["model"] = model;
    j["dataset"] = dataset;
    j["protocol"] = protocol;
    j["q1"] = detail::quantile(per_permutation_acc, 0.25);
    j["median"] = detail::quantile(per_permutation_acc, 0.5);
    j["q3"] = detail::quantile(per_permutation_acc, 0.75);
    j["whisker_low"] = *std::min_element(per_permutation_acc.begin(), per_permutation_acc.end());
    j["whisker_high"] = *std::max_element(per_permutation_acc.begin(), per_permutation_acc.end());
    j["original_dot"] = acc_original;
    j["score_star"] = score;
    return j;
}

} // namespace permeval
