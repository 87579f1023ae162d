#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nodulefuse/metrics.hpp"
#include "oracles.hpp"

using namespace nf;

namespace {

bool mentions(const std::exception& e, const std::string& needle) {
    return std::string(e.what()).find(needle) != std::string::npos;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// ROC / AUC
// ---------------------------------------------------------------------------

TEST_CASE("roc_auc fixed rankings") {
    const auto scores = vec({0.9, 0.8, 0.2, 0.1});
    SUBCASE("perfect ranking scores 1") {
        CHECK(roc_auc(scores, vec({1, 1, 0, 0})).auc == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("inverted ranking scores 0") {
        CHECK(roc_auc(scores, vec({0, 0, 1, 1})).auc == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("one swapped pair scores 0.75") {
        // Positives 0.9, 0.5 against negatives 0.6, 0.4: three of the four
        // positive/negative pairs are ordered correctly.
        CHECK(roc_auc(vec({0.9, 0.5, 0.6, 0.4}), vec({1, 1, 0, 0})).auc ==
              doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("all-tied scores give 0.5") {
        CHECK(roc_auc(vec({0.7, 0.7, 0.7, 0.7}), vec({1, 1, 0, 0})).auc ==
              doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("roc_auc equals the Mann-Whitney pairwise statistic on random sets") {
    std::mt19937_64 rng(6060);
    std::uniform_int_distribution<int> size_dist(4, 100);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = size_dist(rng);
        Eigen::VectorXd scores(n), labels(n);
        for (int i = 0; i < n; ++i) {
            // Snap to a coarse lattice so ties are common.
            scores[i] = std::round(unit(rng) * 10.0) / 10.0;
            labels[i] = unit(rng) < 0.4 ? 1.0 : 0.0;
        }
        labels[0] = 1.0; // force both classes
        labels[1] = 0.0;
        CAPTURE(trial);
        const double trapezoid = roc_auc(scores, labels).auc;
        const double pairwise = oracle::pairwise_auc(scores, labels);
        CHECK(std::abs(trapezoid - pairwise) <= 1e-9);
    }
}

TEST_CASE("roc_auc is invariant under strictly monotone score transforms") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd scores(40), labels(40);
    for (int i = 0; i < 40; ++i) {
        scores[i] = std::round(unit(rng) * 20.0) / 20.0;
        labels[i] = i % 3 == 0 ? 1.0 : 0.0;
    }
    const double base = roc_auc(scores, labels).auc;
    const Eigen::VectorXd affine = scores.array() * 2.0 + 3.0;
    const Eigen::VectorXd expe = scores.array().exp();
    CHECK(roc_auc(affine, labels).auc == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_auc(expe, labels).auc == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("roc curves are monotone polylines from (0,0) to (1,1)") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd scores(30), labels(30);
    for (int i = 0; i < 30; ++i) {
        scores[i] = std::round(unit(rng) * 8.0) / 8.0;
        labels[i] = i % 2 == 0 ? 1.0 : 0.0;
    }
    const RocCurve curve = roc_auc(scores, labels);
    REQUIRE(curve.points.size() >= 2);
    CHECK(curve.points.front()[0] == 0.0);
    CHECK(curve.points.front()[1] == 0.0);
    CHECK(curve.points.back()[0] == 1.0);
    CHECK(curve.points.back()[1] == 1.0);
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        CHECK(curve.points[i][0] >= curve.points[i - 1][0]);
        CHECK(curve.points[i][1] >= curve.points[i - 1][1]);
    }
}

TEST_CASE("roc_auc rejects degenerate input") {
    SUBCASE("single-class labels") {
        try {
            roc_auc(vec({0.1, 0.2, 0.3}), vec({1, 1, 1}));
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(mentions(e, "AUC undefined"));
        }
    }
    SUBCASE("non-finite scores") {
        CHECK_THROWS_AS(
            roc_auc(vec({0.1, std::numeric_limits<double>::quiet_NaN()}), vec({1, 0})),
            std::invalid_argument);
    }
    SUBCASE("length mismatch") {
        CHECK_THROWS_AS(roc_auc(vec({0.1, 0.2, 0.3}), vec({1, 0})), std::invalid_argument);
    }
}

// ---------------------------------------------------------------------------
// Student's t-test
// ---------------------------------------------------------------------------

TEST_CASE("t-test on equal means is exactly insignificant") {
    const auto res = students_t_test({1, 2, 3}, {3, 2, 1});
    CHECK(res.t_statistic == 0.0);
    CHECK(res.p_value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.degrees_of_freedom == 4);
    CHECK_FALSE(res.significant);
}

TEST_CASE("t-test hand-computed case: shifted quartets") {
    // means 2.5 vs 3.5, pooled s^2 = 5/3, se = sqrt(5/6),
    // t = -1 / sqrt(5/6), df = 6.
    const auto res = students_t_test({1, 2, 3, 4}, {2, 3, 4, 5});
    CHECK(res.degrees_of_freedom == 6);
    CHECK(res.t_statistic == doctest::Approx(-1.0954451150103321).epsilon(1e-12));
    CHECK(res.p_value == doctest::Approx(0.3153335962012298).epsilon(1e-9));
    CHECK_FALSE(res.significant); // p > 0.05

    SUBCASE("p matches an independent t-density integration to 1e-6") {
        const double oracle_p =
            oracle::t_p_value_by_integration(res.t_statistic, res.degrees_of_freedom);
        CHECK(std::abs(res.p_value - oracle_p) < 1e-6);
    }
    SUBCASE("swapping the samples flips t and keeps p") {
        const auto swapped = students_t_test({2, 3, 4, 5}, {1, 2, 3, 4});
        CHECK(swapped.t_statistic == doctest::Approx(-res.t_statistic).epsilon(1e-12));
        CHECK(swapped.p_value == doctest::Approx(res.p_value).epsilon(1e-12));
    }
    SUBCASE("alpha is echoed and drives significance") {
        const auto loose = students_t_test({1, 2, 3, 4}, {2, 3, 4, 5}, 0.5);
        CHECK(loose.alpha == 0.5);
        CHECK(loose.significant); // 0.315 < 0.5
    }
}

TEST_CASE("t-test p-values agree with the integration oracle across regimes") {
    const std::vector<std::vector<double>> as = {
        {0.93, 0.931, 0.929, 0.9305}, {1, 5, 2, 8, 3}, {0.1, 0.2, 0.15}};
    const std::vector<std::vector<double>> bs = {
        {0.80, 0.801, 0.799, 0.8005}, {2, 6, 3, 9, 4}, {0.9, 0.8, 0.85}};
    for (std::size_t i = 0; i < as.size(); ++i) {
        const auto res = students_t_test(as[i], bs[i]);
        const double oracle_p =
            oracle::t_p_value_by_integration(res.t_statistic, res.degrees_of_freedom);
        CAPTURE(i);
        CHECK(std::abs(res.p_value - oracle_p) < 1e-6);
    }
}

TEST_CASE("t-test rejects degenerate samples") {
    SUBCASE("zero pooled variance") {
        try {
            students_t_test({1, 1, 1}, {1, 1});
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(mentions(e, "degenerate samples"));
        }
    }
    SUBCASE("samples of size <2") {
        CHECK_THROWS_AS(students_t_test({1.0}, {1, 2}), std::invalid_argument);
        CHECK_THROWS_AS(students_t_test({1, 2}, {}), std::invalid_argument);
    }
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta
// ---------------------------------------------------------------------------

TEST_CASE("incomplete beta matches numerical integration away from singularities") {
    for (double a : {1.0, 2.0, 3.5, 7.0}) {
        for (double b : {0.5, 1.0, 2.5, 6.0}) {
            for (double x : {0.05, 0.3, 0.7, 0.95}) {
                CAPTURE(a);
                CAPTURE(b);
                CAPTURE(x);
                const double expected = oracle::incomplete_beta_by_integration(a, b, x);
                CHECK(std::abs(regularized_incomplete_beta(a, b, x) - expected) < 1e-6);
            }
        }
    }
}

TEST_CASE("incomplete beta analytic identities") {
    for (double x : {0.0, 0.1, 0.4, 0.8, 1.0}) {
        CAPTURE(x);
        CHECK(regularized_incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-10));
        CHECK(regularized_incomplete_beta(2.0, 1.0, x) == doctest::Approx(x * x).epsilon(1e-10));
        CHECK(regularized_incomplete_beta(1.0, 3.0, x) ==
              doctest::Approx(1.0 - std::pow(1.0 - x, 3.0)).epsilon(1e-10));
    }
    // Complement symmetry, including a half-integer shape as used by the
    // t-distribution CDF.
    for (double x : {0.2, 0.5, 0.9}) {
        const double lhs = regularized_incomplete_beta(0.5, 3.0, x);
        const double rhs = 1.0 - regularized_incomplete_beta(3.0, 0.5, 1.0 - x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

// ---------------------------------------------------------------------------
// Curve interpolation and vertical averaging
// ---------------------------------------------------------------------------

TEST_CASE("roc_tpr_at takes the upper envelope of vertical segments") {
    RocCurve curve;
    curve.points = {{0.0, 0.0}, {0.0, 0.6}, {0.5, 0.8}, {1.0, 1.0}};
    CHECK(roc_tpr_at(curve, 0.0) == doctest::Approx(0.6));
    CHECK(roc_tpr_at(curve, 0.25) == doctest::Approx(0.7));
    CHECK(roc_tpr_at(curve, 0.5) == doctest::Approx(0.8));
    CHECK(roc_tpr_at(curve, 0.75) == doctest::Approx(0.9));
    CHECK(roc_tpr_at(curve, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("mean_roc_on_grid vertically averages curves") {
    RocCurve diagonal;
    diagonal.points = {{0.0, 0.0}, {1.0, 1.0}};
    RocCurve perfect;
    perfect.points = {{0.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};

    const auto grid = mean_roc_on_grid({diagonal, perfect}, 5);
    REQUIRE(grid.size() == 5);
    const double expected[5] = {0.5, 0.625, 0.75, 0.875, 1.0};
    for (int i = 0; i < 5; ++i) CHECK(grid[static_cast<std::size_t>(i)] == doctest::Approx(expected[i]));

    SUBCASE("a single curve averages to itself") {
        const auto solo = mean_roc_on_grid({diagonal}, 11);
        for (int i = 0; i < 11; ++i)
            CHECK(solo[static_cast<std::size_t>(i)] == doctest::Approx(i / 10.0));
    }
    SUBCASE("empty input is rejected") {
        CHECK_THROWS_AS(mean_roc_on_grid({}, 5), std::invalid_argument);
    }
}
