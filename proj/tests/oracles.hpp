#pragma once

// Independent reference implementations used only by the test suite.
// Everything here is deliberately written with a different algorithm than
// the library (pairwise counting instead of threshold sweeps, numerical
// integration instead of continued fractions, brute-force scans instead of
// partial sorts) so agreement is evidence, not tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nodulefuse/types.hpp"

namespace oracle {

/// Mann-Whitney statistic by explicit pairwise counting, ties worth 1/2.
inline double pairwise_auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1.0) continue;
        for (Eigen::Index j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    if (pairs == 0) throw std::invalid_argument("pairwise AUC needs both classes");
    return wins / static_cast<double>(pairs);
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double eps, int depth = 40) {
    const auto simpson = [&](double lo, double hi) {
        return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
    };
    std::function<double(double, double, double, int)> recurse = [&](double lo, double hi,
                                                                     double whole, int d) {
        const double mid = 0.5 * (lo + hi);
        const double left = simpson(lo, mid);
        const double right = simpson(mid, hi);
        if (d <= 0 || std::abs(left + right - whole) < 15.0 * eps) return left + right;
        return recurse(lo, mid, left, d - 1) + recurse(mid, hi, right, d - 1);
    };
    return recurse(a, b, simpson(a, b), depth);
}

/// Two-tailed Student's t p-value by integrating the t density.
inline double t_p_value_by_integration(double t, int df) {
    const double nu = df;
    const double log_norm = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                            0.5 * std::log(nu * M_PI);
    const auto pdf = [&](double x) {
        return std::exp(log_norm - 0.5 * (nu + 1.0) * std::log1p(x * x / nu));
    };
    const double upper = std::abs(t) + 60.0; // density is negligible past this
    const double tail = adaptive_simpson(pdf, std::abs(t), upper, 1e-12);
    return std::min(1.0, 2.0 * tail);
}

/// Regularized incomplete beta by integrating t^(a-1)(1-t)^(b-1).
/// Valid away from an endpoint singularity, i.e. x < 1 when b < 1.
inline double incomplete_beta_by_integration(double a, double b, double x) {
    const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const auto integrand = [&](double t) {
        if (t <= 0.0 || t >= 1.0) return 0.0;
        return std::exp((a - 1.0) * std::log(t) + (b - 1.0) * std::log1p(-t) - log_beta);
    };
    return adaptive_simpson(integrand, 0.0, x, 1e-12);
}

/// Crossing-number point-in-polygon with the query y nudged off the
/// lattice, for points that are not near the polygon boundary.
inline bool point_in_polygon_perturbed(double px, double py,
                                       const std::vector<std::pair<int, int>>& poly) {
    const double y = py + 1e-7;
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const double xi = poly[i].first, yi = poly[i].second;
        const double xj = poly[j].first, yj = poly[j].second;
        if ((yi > y) != (yj > y)) {
            const double x_cross = xi + (y - yi) / (yj - yi) * (xj - xi);
            if (px < x_cross) inside = !inside;
        }
    }
    return inside;
}

/// Exact integer-arithmetic test for a lattice point lying on the closed
/// polyline of an integer-vertex polygon.
inline bool point_on_polygon_boundary(long long px, long long py,
                                      const std::vector<std::pair<int, int>>& poly) {
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const long long ax = poly[j].first, ay = poly[j].second;
        const long long bx = poly[i].first, by = poly[i].second;
        const long long cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if (cross != 0) continue;
        if (px >= std::min(ax, bx) && px <= std::max(ax, bx) &&
            py >= std::min(ay, by) && py <= std::max(ay, by))
            return true;
    }
    return false;
}

/// Reference classification for mask rasterisation: a lattice point counts
/// only when strictly interior -- anything on the drawn outline is out.
inline bool strictly_inside_polygon(long long px, long long py,
                                    const std::vector<std::pair<int, int>>& poly) {
    if (poly.size() < 3) return false;
    if (point_on_polygon_boundary(px, py, poly)) return false;
    return point_in_polygon_perturbed(static_cast<double>(px), static_cast<double>(py), poly);
}

/// Central finite difference of a scalar function of one packed parameter.
inline double central_difference(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

/// Exposed-face count by scanning all six neighbours of every set voxel.
inline double surface_area_by_neighbour_scan(const nf::VoxelGrid& mask) {
    static constexpr int kOffsets[6][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                                           {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
    const double face_area[3] = {static_cast<double>(mask.spacing[1]) * mask.spacing[2],
                                 static_cast<double>(mask.spacing[0]) * mask.spacing[2],
                                 static_cast<double>(mask.spacing[0]) * mask.spacing[1]};
    double area = 0.0;
    for (int z = 0; z < mask.dims[2]; ++z)
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x) {
                if (mask.at(x, y, z) == 0.0f) continue;
                for (int n = 0; n < 6; ++n) {
                    const int nx = x + kOffsets[n][0];
                    const int ny = y + kOffsets[n][1];
                    const int nz = z + kOffsets[n][2];
                    const bool open =
                        !mask.in_bounds(nx, ny, nz) || mask.at(nx, ny, nz) == 0.0f;
                    if (open) area += face_area[n / 2];
                }
            }
    return area;
}

inline long set_voxel_count(const nf::VoxelGrid& mask) {
    long count = 0;
    for (float v : mask.data) count += v != 0.0f ? 1 : 0;
    return count;
}

/// Max pairwise in-slice distance by cubic brute force.
inline double max_axial_diameter_brute(const nf::VoxelGrid& mask) {
    double best = 0.0;
    for (int z = 0; z < mask.dims[2]; ++z) {
        std::vector<std::pair<int, int>> pts;
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x)
                if (mask.at(x, y, z) != 0.0f) pts.emplace_back(x, y);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j) {
                const double dx = (pts[i].first - pts[j].first) * double(mask.spacing[0]);
                const double dy = (pts[i].second - pts[j].second) * double(mask.spacing[1]);
                best = std::max(best, std::hypot(dx, dy));
            }
    }
    return best;
}

/// Brute-force KNN with the library's documented tie rule: sort by
/// (squared distance, training index), majority over the first k.
inline int knn_brute(const Eigen::MatrixXd& train, const Eigen::VectorXd& labels,
                     const Eigen::RowVectorXd& query, int k) {
    std::vector<std::pair<double, Eigen::Index>> order;
    for (Eigen::Index i = 0; i < train.rows(); ++i)
        order.emplace_back((train.row(i) - query).squaredNorm(), i);
    std::sort(order.begin(), order.end());
    int votes = 0;
    for (int i = 0; i < k; ++i) votes += labels[order[static_cast<std::size_t>(i)].second] > 0.5;
    return 2 * votes > k ? 1 : 0;
}

/// Uniformly random mask with exactly `count` set voxels.
inline nf::VoxelGrid random_mask(std::array<int, 3> dims, std::array<float, 3> spacing,
                                 long count, std::uint64_t seed) {
    nf::VoxelGrid g = nf::VoxelGrid::zeros(dims, spacing, nf::GridKind::BinaryMask);
    std::vector<std::size_t> order(g.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (long i = 0; i < count; ++i) g.data[order[static_cast<std::size_t>(i)]] = 1.0f;
    return g;
}

} // namespace oracle
