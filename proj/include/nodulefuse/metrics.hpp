#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

namespace nf {

/// ROC curve from a threshold sweep over the unique scores, plus its
/// trapezoidal AUC. Points start at (0,0), end at (1,1), and are monotone
/// nondecreasing in both coordinates; the trapezoidal AUC equals the
/// Mann-Whitney pairwise statistic (ties counted 1/2).
struct RocCurve {
    std::vector<std::array<double, 2>> points; // (fpr, tpr)
    double auc = 0.0;
};

/// Throws std::invalid_argument when only one class is present ("AUC
/// undefined") or scores are non-finite.
RocCurve roc_auc(const Eigen::Ref<const Eigen::VectorXd>& scores,
                 const Eigen::Ref<const Eigen::VectorXd>& labels);

struct TTestResult {
    double t_statistic = 0.0;
    int degrees_of_freedom = 0;
    double p_value = 1.0;
    double alpha = 0.05;
    bool significant = false; // p_value < alpha
};

/// Pooled-variance two-sample Student's t-test, two-tailed p-value via the
/// regularized incomplete beta function. Throws std::invalid_argument on
/// samples smaller than 2 or zero pooled variance ("degenerate samples").
TTestResult students_t_test(const std::vector<double>& sample_a, const std::vector<double>& sample_b,
                            double alpha = 0.05);

/// I_x(a, b), evaluated with Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Height of a ROC curve at a given false-positive rate: linear
/// interpolation along the polyline, taking the upper envelope across
/// vertical segments.
double roc_tpr_at(const RocCurve& curve, double fpr);

/// Vertical averaging of TPR over curves on a uniform FPR grid of
/// `grid_points` values in [0, 1].
std::vector<double> mean_roc_on_grid(const std::vector<RocCurve>& curves, int grid_points = 101);

} // namespace nf
