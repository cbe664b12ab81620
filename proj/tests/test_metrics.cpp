// Accuracy summaries, the cross-permutation agreement score, and the
// statistics toolkit. Oracle strategy: the signed-rank test is checked
// bit-for-bit against an in-test brute-force enumeration of all 2^n sign
// assignments (independent ranking code included), and the rank correlations
// against straight-from-the-definition reimplementations.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "permeval/metrics.hpp"
#include "permeval/backends.hpp"
#include "permeval/report.hpp"
#include "permeval/rng.hpp"
#include "helpers.hpp"

using namespace permeval;

namespace {

// Builds a complete run matrix from an identity grid. Row q, column p holds
// the option text predicted for question q under permutation p; a prediction
// is correct when it equals that question's golden text.
RunMatrix make_matrix(const std::vector<std::string>& permutation_ids,
                      const std::vector<std::vector<std::string>>& identity_grid,
                      const std::vector<std::string>& goldens) {
    RunMatrix m;
    m.dataset_id = "synthetic";
    m.model_id = "test";
    m.protocol_fingerprint = "0000000000000000";
    m.permutation_ids = permutation_ids;
    for (std::size_t q = 0; q < identity_grid.size(); ++q) {
        m.question_ids.push_back("q" + std::to_string(q));
        std::vector<Prediction> row;
        for (std::size_t p = 0; p < permutation_ids.size(); ++p) {
            Prediction pred;
            pred.question_id = m.question_ids.back();
            pred.permutation_id = permutation_ids[p];
            pred.predicted_identity = identity_grid[q][p];
            pred.predicted_index = 0;
            pred.correct = identity_grid[q][p] == goldens[q];
            row.push_back(std::move(pred));
        }
        m.predictions.push_back(std::move(row));
    }
    return m;
}

std::vector<std::string> plan_ids(int n_attacks) {
    std::vector<std::string> ids = {"original"};
    for (int p = 0; p < n_attacks; ++p) ids.push_back("attack-" + std::to_string(p));
    return ids;
}

// ---- independent signed-rank oracle ----------------------------------------

// Ranks by counting, not sorting: rank_i = (#smaller) + ((#equal) + 1) / 2.
std::vector<double> oracle_ranks(const std::vector<double>& magnitudes) {
    std::vector<double> ranks(magnitudes.size());
    for (std::size_t i = 0; i < magnitudes.size(); ++i) {
        int smaller = 0, equal = 0;
        for (std::size_t j = 0; j < magnitudes.size(); ++j) {
            if (magnitudes[j] < magnitudes[i]) ++smaller;
            else if (magnitudes[j] == magnitudes[i]) ++equal;
        }
        ranks[i] = static_cast<double>(smaller) + (static_cast<double>(equal) + 1.0) / 2.0;
    }
    return ranks;
}

struct OracleWilcoxon {
    double statistic;
    double p_one;
    double p_two;
};

OracleWilcoxon oracle_wilcoxon(const std::vector<double>& paired_diffs) {
    std::vector<double> diffs;
    for (double d : paired_diffs)
        if (d != 0.0) diffs.push_back(d);
    std::vector<double> magnitudes;
    for (double d : diffs) magnitudes.push_back(std::fabs(d));
    const auto ranks = oracle_ranks(magnitudes);
    double w_plus = 0;
    for (std::size_t i = 0; i < diffs.size(); ++i)
        if (diffs[i] > 0) w_plus += ranks[i];

    const int n = static_cast<int>(diffs.size());
    double count_ge = 0, count_le = 0;
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        double sum = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1ull << i)) sum += ranks[static_cast<std::size_t>(i)];
        if (sum >= w_plus) count_ge += 1.0;
        if (sum <= w_plus) count_le += 1.0;
    }
    const double denom = std::ldexp(1.0, n);
    return {w_plus, count_ge / denom,
            std::min(1.0, 2.0 * std::min(count_ge, count_le) / denom)};
}

// ---- independent rank-correlation oracles -----------------------------------

double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= n; my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

double oracle_kendall(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double conc = 0, disc = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0 && dy == 0) continue;
            if (dx == 0) { ties_x += 1; continue; }
            if (dy == 0) { ties_y += 1; continue; }
            if ((dx > 0) == (dy > 0)) conc += 1;
            else disc += 1;
        }
    }
    return (conc - disc) / std::sqrt((conc + disc + ties_x) * (conc + disc + ties_y));
}

} // namespace

TEST_CASE("run matrix validation catches structural defects") {
    auto m = make_matrix(plan_ids(2), {{"g", "g", "w"}, {"w", "g", "g"}}, {"g", "g"});
    CHECK_NOTHROW(m.validate());
    CHECK(m.original_column() == 0);

    SECTION("empty") {
        RunMatrix e;
        CHECK_THROWS_AS(e.validate(), IncompleteGridError);
    }
    SECTION("no original") {
        auto bad = m;
        bad.permutation_ids[0] = "attack-9";
        bad.predictions[0][0].permutation_id = "attack-9";
        bad.predictions[1][0].permutation_id = "attack-9";
        CHECK_THROWS_AS(bad.validate(), IncompleteGridError);
        CHECK_THROWS_AS(bad.original_column(), IncompleteGridError);
    }
    SECTION("ragged row") {
        auto bad = m;
        bad.predictions[1].pop_back();
        CHECK_THROWS_AS(bad.validate(), IncompleteGridError);
    }
    SECTION("misplaced cell") {
        auto bad = m;
        std::swap(bad.predictions[0][1], bad.predictions[0][2]);
        CHECK_THROWS_AS(bad.validate(), IncompleteGridError);
    }
    SECTION("row count mismatch") {
        auto bad = m;
        bad.question_ids.push_back("q9");
        CHECK_THROWS_AS(bad.validate(), IncompleteGridError);
    }
}

TEST_CASE("accuracy counts correct predictions") {
    const auto m = make_matrix(plan_ids(1),
                               {{"g", "g"}, {"g", "w"}, {"w", "w"}, {"w", "g"}},
                               {"g", "g", "g", "g"});
    CHECK(accuracy(m, 0) == 0.5);
    CHECK(accuracy(m, 1) == 0.5);

    std::vector<const Prediction*> column;
    for (const auto& row : m.predictions) column.push_back(&row[0]);
    CHECK(accuracy(column) == 0.5);
    CHECK_THROWS_AS(accuracy(std::vector<const Prediction*>{}), Error);
}

TEST_CASE("agreement score matches the unordered-pairs definition") {
    // 5 answers, 4 in agreement: C(4,2) / C(5,2) = 6/10.
    const auto m5 = make_matrix(plan_ids(4), {{"a", "a", "a", "a", "b"}}, {"a"});
    CHECK_THAT(score(m5), Catch::Matchers::WithinAbs(0.600, 1e-12));

    // 6 answers, 5 in agreement: C(5,2) / C(6,2) = 10/15.
    const auto m6 = make_matrix(plan_ids(5), {{"a", "a", "a", "a", "a", "b"}}, {"a"});
    CHECK_THAT(score(m6), Catch::Matchers::WithinAbs(10.0 / 15.0, 1e-12));
    CHECK_THAT(score(m6), Catch::Matchers::WithinAbs(0.667, 5e-4));

    // 11 answers, 10 in agreement: C(10,2) / C(11,2) = 45/55.
    std::vector<std::string> row(11, "a");
    row[10] = "b";
    const auto m11 = make_matrix(plan_ids(10), {row}, {"a"});
    CHECK_THAT(score(m11), Catch::Matchers::WithinAbs(45.0 / 55.0, 1e-12));
    CHECK_THAT(score(m11), Catch::Matchers::WithinAbs(0.818, 5e-4));
    CHECK_THAT(score(m11), Catch::Matchers::WithinAbs(0.82, 5e-3));

    SECTION("unanimity scores 1, total disagreement 0") {
        const auto unan = make_matrix(plan_ids(3), {{"a", "a", "a", "a"}}, {"a"});
        CHECK(score(unan) == 1.0);
        const auto split = make_matrix(plan_ids(3), {{"a", "b", "c", "d"}}, {"a"});
        CHECK(score(split) == 0.0);
    }
    SECTION("questions average") {
        const auto m = make_matrix(plan_ids(4),
                                   {{"a", "a", "a", "a", "a"},   // 1.0
                                    {"a", "a", "a", "a", "b"}},  // 0.6
                                   {"a", "a"});
        CHECK_THAT(score(m), Catch::Matchers::WithinAbs(0.8, 1e-12));
    }
    SECTION("agreement ignores correctness") {
        // Unanimously wrong answers still agree perfectly.
        const auto m = make_matrix(plan_ids(2), {{"w", "w", "w"}}, {"g"});
        CHECK(score(m) == 1.0);
    }
    SECTION("a single permutation cannot score") {
        const auto m = make_matrix(std::vector<std::string>{"original"}, {{"a"}}, {"a"});
        CHECK_THROWS_AS(score(m), Error);
    }
    SECTION("embedding agreement reduces to identity for exact/disjoint texts") {
        MockEmbeddingBackend backend;
        EmbedFn embed = [&backend](const std::vector<std::string>& b) { return backend.embed(b); };
        const auto m = make_matrix(plan_ids(1), {{"crimson harbor", "crimson harbor"},
                                                 {"crimson harbor", "amber canyon"}},
                                   {"crimson harbor", "crimson harbor"});
        CHECK(score(m, embedding_agreement(embed)) == 0.5);
        CHECK(score(m, identity_agreement()) == 0.5);
    }
}

TEST_CASE("summarize reports the full accuracy picture") {
    // Per-permutation accuracies by construction:
    //   original 0.25, attack-0 1.0, attack-1..3 0.0.
    std::vector<std::vector<std::string>> grid = {
        {"g", "g", "w", "w", "w"},
        {"w", "g", "w", "w", "w"},
        {"w", "g", "w", "w", "w"},
        {"w", "g", "w", "w", "w"},
    };
    const auto m = make_matrix(plan_ids(4), grid, {"g", "g", "g", "g"});
    const auto s = summarize(m);

    CHECK(s.acc_original == 0.25);
    CHECK(s.attack_accuracies == std::vector<double>{1.0, 0.0, 0.0, 0.0});
    CHECK(s.acc_mean_attack == 0.25);
    CHECK(s.abs_delta == 0.0);
    CHECK(s.acc_min == 0.0);
    CHECK(s.acc_max == 1.0);
    CHECK(s.range == 1.0);
    // Population variance of (0.25, 1, 0, 0, 0), mean 0.25:
    // (0 + 0.5625 + 3 * 0.0625) / 5 = 0.15.
    CHECK_THAT(s.variance_all, Catch::Matchers::WithinAbs(0.15, 1e-12));
    // Per-question agreement: q0 (g,g,w,w,w) -> 4/10; q1..3 (w,g,w,w,w) -> 6/10.
    CHECK_THAT(s.score, Catch::Matchers::WithinAbs(0.55, 1e-12));

    SECTION("flat runs have zero variance and full score") {
        const auto flat = make_matrix(plan_ids(3),
                                      {{"g", "g", "g", "g"}, {"w", "w", "w", "w"}},
                                      {"g", "g"});
        const auto fs = summarize(flat);
        CHECK(fs.variance_all == 0.0);
        CHECK(fs.range == 0.0);
        CHECK(fs.score == 1.0);
        CHECK(fs.acc_original == 0.5);
        CHECK(fs.acc_mean_attack == 0.5);
    }
    SECTION("a matrix of only the original cannot summarize") {
        const auto only = make_matrix(std::vector<std::string>{"original"}, {{"g"}}, {"g"});
        CHECK_THROWS_AS(summarize(only), IncompleteGridError);
    }
}

TEST_CASE("variance ratio and geometric mean") {
    CHECK(variance_ratio(0.48, 94.43) == 0.48 / 94.43);
    CHECK_THAT(variance_ratio(0.48, 94.43), Catch::Matchers::WithinAbs(0.005, 1e-4));
    CHECK_THAT(variance_ratio(201.01, 6.54), Catch::Matchers::WithinAbs(30.7355, 1e-3));
    CHECK(fmt_fixed(variance_ratio(201.01, 6.54), 2) == "30.74");
    CHECK(fmt_fixed(variance_ratio(0.48, 94.43), 3) == "0.005");

    SECTION("reciprocal pairs multiply to one") {
        SplitMix64 rng(4);
        for (int i = 0; i < 200; ++i) {
            const double a = 0.01 + rng.unit() * 100.0;
            const double b = 0.01 + rng.unit() * 100.0;
            CHECK_THAT(variance_ratio(a, b) * variance_ratio(b, a),
                       Catch::Matchers::WithinAbs(1.0, 1e-12));
        }
    }
    SECTION("baseline must be positive") {
        CHECK_THROWS_AS(variance_ratio(1.0, 0.0), Error);
        CHECK_THROWS_AS(variance_ratio(1.0, -2.0), Error);
        CHECK(variance_ratio(0.0, 2.0) == 0.0); // a zero numerator is fine
    }

    SECTION("geometric mean basics") {
        CHECK_THAT(geometric_mean({4.0, 9.0}), Catch::Matchers::WithinAbs(6.0, 1e-12));
        CHECK_THAT(geometric_mean({1.0, 1.0, 1.0}), Catch::Matchers::WithinAbs(1.0, 1e-12));
        CHECK_THAT(geometric_mean({7.5}), Catch::Matchers::WithinAbs(7.5, 1e-12));
        CHECK_THAT(geometric_mean({0.005, 0.089, 0.226, 0.033, 0.945}),
                   Catch::Matchers::WithinAbs(0.0793, 5e-5));
    }
    SECTION("geometric mean is scale-equivariant") {
        SplitMix64 rng(5);
        for (int i = 0; i < 100; ++i) {
            std::vector<double> v;
            for (int k = 0; k < 6; ++k) v.push_back(0.01 + rng.unit() * 10.0);
            const double c = 0.1 + rng.unit() * 10.0;
            std::vector<double> scaled;
            for (double x : v) scaled.push_back(c * x);
            CHECK_THAT(geometric_mean(scaled),
                       Catch::Matchers::WithinRel(c * geometric_mean(v), 1e-12));
        }
    }
    SECTION("geometric mean rejects non-positive input") {
        CHECK_THROWS_AS(geometric_mean({}), Error);
        CHECK_THROWS_AS(geometric_mean({1.0, 0.0}), Error);
        CHECK_THROWS_AS(geometric_mean({1.0, -3.0}), Error);
    }
}

TEST_CASE("signed-rank test agrees bit-for-bit with exhaustive enumeration") {
    SplitMix64 rng(2718);
    // Discretized magnitudes produce plenty of rank ties; zeros exercise the
    // drop rule. n stays small enough to enumerate all 2^n sign patterns.
    const std::vector<double> levels = {-3, -2.5, -2, -1.5, -1, -0.5,
                                        0.5, 1, 1.5, 2, 2.5, 3, 0};
    int nontrivial = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int len = 2 + static_cast<int>(rng.below(11)); // 2..12
        std::vector<double> diffs;
        for (int i = 0; i < len; ++i)
            diffs.push_back(levels[rng.below(levels.size())]);
        const bool all_zero = std::all_of(diffs.begin(), diffs.end(),
                                          [](double d) { return d == 0.0; });
        if (all_zero) {
            CHECK_THROWS_AS(wilcoxon_signed_rank(diffs), Error);
            continue;
        }
        INFO("trial " << trial);
        const auto res = wilcoxon_signed_rank(diffs);
        const auto oracle = oracle_wilcoxon(diffs);
        CHECK(res.exact);
        CHECK(res.statistic == oracle.statistic);
        CHECK(res.p_one_sided == oracle.p_one);
        CHECK(res.p_two_sided == oracle.p_two);
        ++nontrivial;
    }
    CHECK(nontrivial >= 90);
}

TEST_CASE("signed-rank reference cases") {
    SECTION("thirteen positive differences") {
        std::vector<double> diffs;
        for (int i = 1; i <= 13; ++i) diffs.push_back(static_cast<double>(i));
        const auto res = wilcoxon_signed_rank(diffs);
        CHECK(res.exact);
        CHECK(res.n == 13);
        CHECK(res.statistic == 91.0); // 1 + 2 + ... + 13
        CHECK(res.p_one_sided == std::ldexp(1.0, -13)); // exactly 1/8192
        CHECK(res.p_two_sided == std::ldexp(2.0, -13));
    }
    SECTION("one positive, one negative of equal magnitude") {
        const auto res = wilcoxon_signed_rank({1.0, -1.0});
        CHECK(res.statistic == 1.5); // tied ranks average to 1.5
        CHECK(res.p_two_sided == 1.0);
        CHECK(res.p_one_sided == 0.75);
    }
    SECTION("zeros are dropped before ranking") {
        const auto with_zeros = wilcoxon_signed_rank({0.0, 2.0, 0.0, -1.0});
        const auto without = wilcoxon_signed_rank({2.0, -1.0});
        CHECK(with_zeros.statistic == without.statistic);
        CHECK(with_zeros.p_two_sided == without.p_two_sided);
        CHECK(with_zeros.n == 2);
    }
    SECTION("all zeros throw") {
        CHECK_THROWS_AS(wilcoxon_signed_rank({0.0, 0.0}), Error);
        CHECK_THROWS_AS(wilcoxon_signed_rank({}), Error);
    }
    SECTION("large n switches to the normal approximation") {
        std::vector<double> diffs;
        SplitMix64 rng(31);
        for (int i = 0; i < 26; ++i) diffs.push_back(rng.unit() + 0.1); // all positive
        const auto res = wilcoxon_signed_rank(diffs);
        CHECK(!res.exact);
        CHECK(res.n == 26);
        CHECK(res.statistic == 351.0); // every rank positive: 26 * 27 / 2
        CHECK(res.p_one_sided > 0.0);
        CHECK(res.p_one_sided < 1e-4);
        CHECK(res.p_two_sided <= 2 * res.p_one_sided + 1e-12);
    }
}

TEST_CASE("effect sizes") {
    CHECK_THAT(cohens_d({1.0, 3.0}), Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-12));
    CHECK_THAT(cohens_d({-1.0, -3.0}), Catch::Matchers::WithinAbs(-std::sqrt(2.0), 1e-12));
    CHECK_THROWS_AS(cohens_d({2.0, 2.0}), Error);   // zero spread
    CHECK_THROWS_AS(cohens_d({1.0}), Error);        // too short

    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    CHECK_THROWS_AS(median({}), Error);

    SECTION("median-centered variant differs on skewed differences") {
        const std::vector<double> skew = {0.0, 0.0, 9.0};
        CHECK_THAT(cohens_d(skew), Catch::Matchers::WithinAbs(3.0 / std::sqrt(27.0), 1e-12));
        CHECK(cohens_d_median(skew) == 0.0); // median is 0
        CHECK_THAT(cohens_d_median({1.0, 3.0}), Catch::Matchers::WithinAbs(std::sqrt(2.0), 1e-12));
    }
}

TEST_CASE("rank correlations match their definitions") {
    const std::vector<double> x = {1, 2, 3};
    const std::vector<double> y = {2, 1, 3};
    CHECK_THAT(spearman(x, y), Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THAT(kendall_tau(x, y), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(spearman(x, x), Catch::Matchers::WithinAbs(1.0, 1e-12));
    const std::vector<double> rev = {3, 2, 1};
    CHECK_THAT(spearman(x, rev), Catch::Matchers::WithinAbs(-1.0, 1e-12));
    CHECK_THAT(kendall_tau(x, rev), Catch::Matchers::WithinAbs(-1.0, 1e-12));

    SECTION("definitional oracle over random vectors with ties") {
        SplitMix64 rng(1414);
        for (int trial = 0; trial < 200; ++trial) {
            const int len = 3 + static_cast<int>(rng.below(10));
            std::vector<double> a, b;
            for (int i = 0; i < len; ++i) {
                a.push_back(static_cast<double>(rng.below(6)));  // coarse -> ties
                b.push_back(static_cast<double>(rng.below(6)));
            }
            auto constant = [](const std::vector<double>& v) {
                return std::all_of(v.begin(), v.end(), [&](double t) { return t == v.front(); });
            };
            if (constant(a) || constant(b)) {
                CHECK_THROWS_AS(spearman(a, b), Error);
                CHECK_THROWS_AS(kendall_tau(a, b), Error);
                continue;
            }
            INFO("trial " << trial);
            CHECK_THAT(spearman(a, b), Catch::Matchers::WithinAbs(oracle_spearman(a, b), 1e-12));
            CHECK_THAT(kendall_tau(a, b), Catch::Matchers::WithinAbs(oracle_kendall(a, b), 1e-12));
        }
    }
    SECTION("invariant under strictly monotone transforms") {
        const std::vector<double> a = {1, 4, 2, 8, 5, 7};
        const std::vector<double> b = {2, 2, 5, 9, 1, 6};
        std::vector<double> ea, eb;
        for (double v : a) ea.push_back(std::exp(v * 0.3));
        for (double v : b) eb.push_back(v * 100.0 + 7.0);
        CHECK(spearman(a, b) == spearman(ea, eb));
        CHECK(kendall_tau(a, b) == kendall_tau(ea, eb));
    }
    SECTION("input validation") {
        CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), Error);
        CHECK_THROWS_AS(spearman({1}, {1}), Error);
        CHECK_THROWS_AS(kendall_tau({1, 2}, {1}), Error);
        CHECK_THROWS_AS(spearman({2, 2, 2}, {1, 2, 3}), Error);
        CHECK_THROWS_AS(kendall_tau({2, 2, 2}, {1, 2, 3}), Error);
    }
}

TEST_CASE("compare_runs pairs accuracies by permutation") {
    // Baseline run: original 1.0, every attack 0.5. Reduced run: flat 1.0.
    std::vector<std::vector<std::string>> sl_grid = {
        {"g", "g", "g", "g", "g"},
        {"g", "w", "w", "w", "w"},
    };
    std::vector<std::vector<std::string>> md_grid = {
        {"g", "g", "g", "g", "g"},
        {"g", "g", "g", "g", "g"},
    };
    const auto sl = make_matrix(plan_ids(4), sl_grid, {"g", "g"});
    const auto md = make_matrix(plan_ids(4), md_grid, {"g", "g"});
    const auto cmp = compare_runs(sl, md);

    CHECK(cmp.sl.acc_original == 1.0);
    CHECK(cmp.sl.acc_mean_attack == 0.5);
    CHECK(cmp.md.variance_all == 0.0);
    // sl accuracies (1, .5, .5, .5, .5): mean .6, population variance .04.
    CHECK_THAT(cmp.sl.variance_all, Catch::Matchers::WithinAbs(0.04, 1e-12));
    CHECK(cmp.variance_ratio == 0.0); // 0 / 0.04
    CHECK(cmp.paired_diffs == std::vector<double>{0.0, -0.5, -0.5, -0.5, -0.5});
    CHECK(cmp.md.score == 1.0);
    CHECK_THAT(cmp.delta_score, Catch::Matchers::WithinAbs(1.0 - cmp.sl.score, 1e-12));
    REQUIRE(cmp.wilcoxon.has_value());
    CHECK(cmp.wilcoxon->n == 4); // the zero diff is dropped
    REQUIRE(cmp.d_mean.has_value());
    REQUIRE(cmp.d_median.has_value());

    SECTION("different permutation plans are rejected") {
        const auto other = make_matrix(plan_ids(3),
                                       {{"g", "g", "g", "g"}, {"g", "g", "g", "g"}},
                                       {"g", "g"});
        CHECK_THROWS_AS(compare_runs(sl, other), ConfigError);
    }
    SECTION("different question counts are rejected") {
        const auto other = make_matrix(plan_ids(4), {{"g", "g", "g", "g", "g"}}, {"g"});
        CHECK_THROWS_AS(compare_runs(sl, other), ConfigError);
    }
    SECTION("two flat runs compare as equally stable") {
        const auto flat = compare_runs(md, md);
        CHECK(flat.variance_ratio == 1.0);
        CHECK(!flat.wilcoxon.has_value()); // all diffs zero
        CHECK(!flat.d_mean.has_value());   // constant diffs
        CHECK(flat.delta_score == 0.0);
    }
    SECTION("constant nonzero diffs get a test but no effect size") {
        // sl: every permutation 0.5; md: every permutation 1.0.
        std::vector<std::vector<std::string>> half = {
            {"g", "g", "g", "g", "g"},
            {"w", "w", "w", "w", "w"},
        };
        const auto cmp2 = compare_runs(make_matrix(plan_ids(4), half, {"g", "g"}), md);
        CHECK(cmp2.paired_diffs == std::vector<double>(5, -0.5));
        CHECK(cmp2.wilcoxon.has_value());
        CHECK(!cmp2.d_mean.has_value());
        CHECK(!cmp2.d_median.has_value());
    }
}

TEST_CASE("compare_variance_table aggregates recomputed and published ratios") {
    VarianceTable t;
    t.models = {"m1", "m2"};
    t.datasets = {"d1", "d2"};
    // ratios: m1 -> (2, 0.5), m2 -> (8, 0.125)
    t.cells = {
        {{1.0, 2.0, 2.0}, {4.0, 2.0, 0.5}},
        {{0.5, 4.0, 8.0}, {8.0, 1.0, 0.125}},
    };
    t.acc_mean_sl = {10.0, 20.0};
    t.acc_mean_md = {5.0, 25.0};

    const auto cmp = compare_variance_table(t);
    CHECK(cmp.ratios == std::vector<std::vector<double>>{{2.0, 0.5}, {8.0, 0.125}});
    REQUIRE(cmp.row_geom.size() == 2);
    CHECK_THAT(cmp.row_geom[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(cmp.row_geom[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(cmp.col_geom[0], Catch::Matchers::WithinAbs(4.0, 1e-12));
    CHECK_THAT(cmp.col_geom[1], Catch::Matchers::WithinAbs(0.25, 1e-12));
    CHECK_THAT(cmp.overall_geom, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(cmp.overall_geom_published.has_value());
    CHECK_THAT(*cmp.overall_geom_published, Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(cmp.wilcoxon.has_value());
    REQUIRE(cmp.d_mean.has_value());
    CHECK(*cmp.d_mean == 0.0); // diffs (5, -5): mean 0

    SECTION("published aggregates need every cell's published ratio") {
        auto partial = t;
        partial.cells[0][1].published_ratio.reset();
        const auto c2 = compare_variance_table(partial);
        CHECK(!c2.row_geom_published.has_value());
        CHECK(!c2.overall_geom_published.has_value());
        CHECK(c2.overall_geom == cmp.overall_geom); // recomputed side unaffected
    }
    SECTION("missing accuracy columns skip the paired tests") {
        auto bare = t;
        bare.acc_mean_sl.clear();
        bare.acc_mean_md.clear();
        const auto c2 = compare_variance_table(bare);
        CHECK(!c2.wilcoxon.has_value());
        CHECK(!c2.d_mean.has_value());
    }
    SECTION("shape validation") {
        auto bad = t;
        bad.cells[1].pop_back();
        CHECK_THROWS_AS(compare_variance_table(bad), ConfigError);
        bad = t;
        bad.acc_mean_sl.pop_back();
        CHECK_THROWS_AS(compare_variance_table(bad), ConfigError);
    }
}

TEST_CASE("reference variance fixture reproduces the published aggregates") {
    std::ifstream in(testutil::fixtures_dir() / "reference_variances.json");
    REQUIRE(in.good());
    const auto j = nlohmann::json::parse(in);
    const auto table = variance_table_from_json(j, "reference_variances.json");
    REQUIRE(table.models.size() == 13);
    REQUIRE(table.datasets.size() == 5);

    const auto cmp = compare_variance_table(table);

    // Overall geometric mean over the published per-cell ratios lands on the
    // published overall value.
    REQUIRE(cmp.overall_geom_published.has_value());
    CHECK_THAT(*cmp.overall_geom_published, Catch::Matchers::WithinAbs(0.3343, 5e-4));
    CHECK(std::fabs(*cmp.overall_geom_published - j.at("published_overall_geom").get<double>()) <= 0.01);
    // The ratios recomputed from the rounded variance columns stay close too.
    CHECK(std::fabs(cmp.overall_geom - j.at("published_overall_geom").get<double>()) <= 0.01);

    // Row/column geometric means from published cells vs published aggregates.
    for (std::size_t i = 0; i < table.models.size(); ++i) {
        const double published = j.at("published_row_geom").at(table.models[i]).get<double>();
        INFO("model " << table.models[i]);
        CHECK(std::fabs((*cmp.row_geom_published)[i] - published) <= 0.01);
    }
    for (std::size_t k = 0; k < table.datasets.size(); ++k) {
        const double published = j.at("published_col_geom").at(table.datasets[k]).get<double>();
        INFO("dataset " << table.datasets[k]);
        CHECK(std::fabs((*cmp.col_geom_published)[k] - published) <= 0.01);
    }

    // Paired protocol comparison over the synthetic-dataset accuracy columns:
    // every model degrades under the reduced protocol, so the one-sided exact
    // p-value bottoms out at 2^-13, and the effect size is very large.
    REQUIRE(cmp.wilcoxon.has_value());
    CHECK(cmp.wilcoxon->exact);
    CHECK(cmp.wilcoxon->n == 13);
    CHECK(cmp.wilcoxon->statistic == 91.0);
    CHECK(cmp.wilcoxon->p_one_sided == std::ldexp(1.0, -13));
    REQUIRE(cmp.d_mean.has_value());
    CHECK_THAT(*cmp.d_mean, Catch::Matchers::WithinAbs(2.316, 1e-3));
    CHECK(*cmp.d_mean >= 2.0);
    CHECK(*cmp.d_mean <= 2.4);
    REQUIRE(cmp.d_median.has_value());
    CHECK_THAT(*cmp.d_median, Catch::Matchers::WithinAbs(2.3985, 1e-3));
}

TEST_CASE("correlation_diff compares benchmark agreement across protocols") {
    BenchmarkTable md, sl;
    md.benchmarks = sl.benchmarks = {"bench-a", "bench-b"};
    md.models = sl.models = {"m1", "m2", "m3"};

    SECTION("identical inputs give zero difference matrices") {
        md.means = {{1, 2, 3}, {2, 3, 4}};
        sl.means = md.means;
        const auto diff = correlation_diff(md, sl);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(diff.rho_diff[i][j] == 0.0);
                CHECK(diff.tau_diff[i][j] == 0.0);
            }
        CHECK(diff.rho_md[0][1] == 1.0);
        CHECK(diff.rho_md[0][0] == 0.0); // diagonal zero by construction
    }
    SECTION("perfect agreement versus perfect disagreement spans the full range") {
        md.means = {{1, 2, 3}, {2, 3, 4}};   // rho = +1
        sl.means = {{1, 2, 3}, {3, 2, 1}};   // rho = -1
        const auto diff = correlation_diff(md, sl);
        CHECK_THAT(diff.rho_diff[0][1], Catch::Matchers::WithinAbs(2.0, 1e-12));
        CHECK_THAT(diff.tau_diff[0][1], Catch::Matchers::WithinAbs(2.0, 1e-12));
        CHECK(diff.rho_diff[1][0] == diff.rho_diff[0][1]); // symmetric
    }
    SECTION("entries match direct correlation calls") {
        BenchmarkTable m3, s3;
        m3.benchmarks = s3.benchmarks = {"x", "y", "z"};
        m3.models = s3.models = {"a", "b", "c", "d", "e"};
        SplitMix64 rng(8);
        auto rand_row = [&rng] {
            std::vector<double> v;
            for (int i = 0; i < 5; ++i) v.push_back(rng.unit());
            return v;
        };
        m3.means = {rand_row(), rand_row(), rand_row()};
        s3.means = {rand_row(), rand_row(), rand_row()};
        const auto diff = correlation_diff(m3, s3);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = i + 1; j < 3; ++j) {
                CHECK(diff.rho_md[i][j] == spearman(m3.means[i], m3.means[j]));
                CHECK(diff.rho_sl[i][j] == spearman(s3.means[i], s3.means[j]));
                CHECK(diff.tau_md[i][j] == kendall_tau(m3.means[i], m3.means[j]));
                CHECK(diff.rho_diff[i][j] == diff.rho_md[i][j] - diff.rho_sl[i][j]);
                CHECK(diff.tau_diff[i][j] == diff.tau_md[i][j] - diff.tau_sl[i][j]);
            }
        }
    }
    SECTION("mismatched benchmark or model sets are rejected") {
        md.means = {{1, 2, 3}, {2, 3, 4}};
        sl.means = md.means;
        auto other = sl;
        other.benchmarks = {"bench-a", "bench-zzz"};
        CHECK_THROWS_AS(correlation_diff(md, other), ConfigError);
        other = sl;
        other.models = {"m1", "m2", "mX"};
        CHECK_THROWS_AS(correlation_diff(md, other), ConfigError);
        auto ragged = sl;
        ragged.means[1].pop_back();
        CHECK_THROWS_AS(correlation_diff(md, ragged), ConfigError);
    }
}
