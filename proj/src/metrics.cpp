#include "nodulefuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nf {

RocCurve roc_auc(const Eigen::Ref<const Eigen::VectorXd>& scores,
                 const Eigen::Ref<const Eigen::VectorXd>& labels) {
    const Eigen::Index n = scores.size();
    if (labels.size() != n) throw std::invalid_argument("scores and labels disagree on length");
    if (!scores.allFinite()) throw std::invalid_argument("non-finite score");

    double n_pos = 0.0, n_neg = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[i] == 1.0)
            n_pos += 1.0;
        else if (labels[i] == 0.0)
            n_neg += 1.0;
        else
            throw std::invalid_argument("labels must be 0 or 1");
    }
    if (n_pos == 0.0 || n_neg == 0.0)
        throw std::invalid_argument("AUC undefined: single-class labels");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});
    double tp = 0.0, fp = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        // Sweep the threshold through each distinct score: everything with
        // score >= threshold is predicted positive, so tied scores move the
        // operating point diagonally in one step.
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            if (labels[order[i]] == 1.0)
                tp += 1.0;
            else
                fp += 1.0;
            ++i;
        }
        curve.points.push_back({fp / n_neg, tp / n_pos});
    }

    double auc = 0.0;
    for (std::size_t p = 0; p + 1 < curve.points.size(); ++p) {
        const auto& [x0, y0] = curve.points[p];
        const auto& [x1, y1] = curve.points[p + 1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    curve.auc = auc;
    return curve;
}

TTestResult students_t_test(const std::vector<double>& sample_a, const std::vector<double>& sample_b,
                            double alpha) {
    const auto na = static_cast<double>(sample_a.size());
    const auto nb = static_cast<double>(sample_b.size());
    if (sample_a.size() < 2 || sample_b.size() < 2)
        throw std::invalid_argument("each sample needs at least 2 values");

    const double mean_a = std::accumulate(sample_a.begin(), sample_a.end(), 0.0) / na;
    const double mean_b = std::accumulate(sample_b.begin(), sample_b.end(), 0.0) / nb;
    double ss = 0.0;
    for (double v : sample_a) ss += (v - mean_a) * (v - mean_a);
    for (double v : sample_b) ss += (v - mean_b) * (v - mean_b);

    TTestResult result;
    result.degrees_of_freedom = static_cast<int>(na + nb) - 2;
    result.alpha = alpha;
    const double pooled_var = ss / result.degrees_of_freedom;
    if (!(pooled_var > 0.0)) throw std::invalid_argument("degenerate samples: zero pooled variance");

    result.t_statistic = (mean_a - mean_b) / std::sqrt(pooled_var * (1.0 / na + 1.0 / nb));

    // Two-tailed p for Student's t: p = I_x(df/2, 1/2) with x = df/(df+t²).
    const double t2 = result.t_statistic * result.t_statistic;
    const double df = result.degrees_of_freedom;
    if (t2 == 0.0) {
        result.p_value = 1.0;
    } else {
        result.p_value = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t2));
    }
    result.significant = result.p_value < alpha;
    return result;
}

namespace {

// Continued fraction for I_x(a,b) (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return h;
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("beta parameters must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_prefix = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::exp(ln_prefix) * beta_continued_fraction(a, b, x) / a;
    return 1.0 - std::exp(ln_prefix) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double roc_tpr_at(const RocCurve& curve, double fpr) {
    double best = 0.0;
    for (std::size_t i = 0; i + 1 < curve.points.size(); ++i) {
        const auto& [x0, y0] = curve.points[i];
        const auto& [x1, y1] = curve.points[i + 1];
        if (fpr < x0 || fpr > x1) continue;
        if (x1 == x0)
            best = std::max(best, std::max(y0, y1));
        else
            best = std::max(best, y0 + (y1 - y0) * (fpr - x0) / (x1 - x0));
    }
    return best;
}

std::vector<double> mean_roc_on_grid(const std::vector<RocCurve>& curves, int grid_points) {
    if (grid_points < 2) throw std::invalid_argument("grid needs at least 2 points");
    if (curves.empty()) throw std::invalid_argument("no curves to average");
    std::vector<double> mean(static_cast<std::size_t>(grid_points), 0.0);
    for (int g = 0; g < grid_points; ++g) {
        const double fpr = static_cast<double>(g) / (grid_points - 1);
        double sum = 0.0;
        for (const auto& curve : curves) sum += roc_tpr_at(curve, fpr);
        mean[static_cast<std::size_t>(g)] = sum / static_cast<double>(curves.size());
    }
    return mean;
}

} // namespace nf
