#include "nodulefuse/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "nodulefuse/errors.hpp"

namespace nf {

bool point_strictly_inside(double px, double py, const std::vector<std::pair<int, int>>& polygon) {
    const std::size_t n = polygon.size();
    if (n < 3) return false;

    constexpr double eps = 1e-9;
    for (std::size_t i = 0; i < n; ++i) {
        const double ax = polygon[i].first, ay = polygon[i].second;
        const double bx = polygon[(i + 1) % n].first, by = polygon[(i + 1) % n].second;
        const double cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if (std::abs(cross) > eps) continue;
        if (px >= std::min(ax, bx) - eps && px <= std::max(ax, bx) + eps &&
            py >= std::min(ay, by) - eps && py <= std::max(ay, by) + eps)
            return false; // exactly on the drawn outline
    }

    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double ax = polygon[i].first, ay = polygon[i].second;
        const double bx = polygon[j].first, by = polygon[j].second;
        if ((ay > py) != (by > py)) {
            const double x_cross = ax + (py - ay) / (by - ay) * (bx - ax);
            if (px < x_cross) inside = !inside;
        }
    }
    return inside;
}

VoxelGrid rasterize_mask(const std::vector<AnnotationContour>& contours,
                         const std::array<int, 3>& dims,
                         const std::array<float, 3>& spacing,
                         const std::array<double, 3>& center_mm,
                         std::vector<std::string>* warnings) {
    const bool any_inclusion = std::any_of(contours.begin(), contours.end(),
                                           [](const AnnotationContour& c) { return c.inclusion; });
    if (!any_inclusion) throw DataError("no inclusion contours");

    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const double sx = spacing[0], sy = spacing[1], sz = spacing[2];

    // Snap the box's voxel lattice onto the source pixel grid: voxel (i, j)
    // sits at pixel (x0 + i, y0 + j), within half a pixel of the requested
    // center.
    const long long x0 = std::llround(center_mm[0] / sx - (nx - 1) / 2.0);
    const long long y0 = std::llround(center_mm[1] / sy - (ny - 1) / 2.0);

    const auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };

    std::map<int, std::vector<const AnnotationContour*>> per_slice;
    for (const auto& contour : contours) {
        const double k_real = (contour.z_position - center_mm[2]) / sz + (nz - 1) / 2.0;
        const int k = static_cast<int>(std::llround(k_real));
        char buf[160];
        if (k < 0 || k >= nz) {
            std::snprintf(buf, sizeof(buf), "contour at z=%.3f mm maps outside the box; dropped",
                          contour.z_position);
            warn(buf);
            continue;
        }
        if (contour.edge_points.size() < 3) {
            std::snprintf(buf, sizeof(buf),
                          "contour at z=%.3f mm has fewer than 3 points; dropped", contour.z_position);
            warn(buf);
            continue;
        }
        per_slice[k].push_back(&contour);
    }

    VoxelGrid mask = VoxelGrid::zeros(dims, spacing, GridKind::BinaryMask);

    std::size_t set_count = 0;
    for (const auto& [k, slice_contours] : per_slice) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                const double px = static_cast<double>(x0 + i);
                const double py = static_cast<double>(y0 + j);
                bool included = false;
                for (const AnnotationContour* c : slice_contours) {
                    if (c->inclusion && point_strictly_inside(px, py, c->edge_points)) {
                        included = true;
                        break;
                    }
                }
                if (!included) continue;
                bool excluded = false;
                for (const AnnotationContour* c : slice_contours) {
                    if (!c->inclusion && point_strictly_inside(px, py, c->edge_points)) {
                        excluded = true;
                        break;
                    }
                }
                if (!excluded) {
                    mask.data[mask.index(i, j, k)] = 1.0f;
                    ++set_count;
                }
            }
        }
    }

    if (set_count == 0) throw DataError("degenerate mask");
    return mask;
}

std::array<double, 3> annotation_centroid(const std::vector<AnnotationContour>& contours,
                                          const std::array<float, 3>& spacing) {
    double sum_x = 0.0, sum_y = 0.0, sum_z = 0.0;
    std::size_t n_points = 0, n_contours = 0;
    for (const auto& contour : contours) {
        if (!contour.inclusion) continue;
        for (const auto& [x, y] : contour.edge_points) {
            sum_x += x;
            sum_y += y;
            ++n_points;
        }
        sum_z += contour.z_position;
        ++n_contours;
    }
    if (n_points == 0) throw DataError("no inclusion contours");
    return {sum_x / static_cast<double>(n_points) * spacing[0],
            sum_y / static_cast<double>(n_points) * spacing[1],
            sum_z / static_cast<double>(n_contours)};
}

double infer_z_spacing(const std::vector<AnnotationContour>& contours) {
    std::vector<double> zs;
    zs.reserve(contours.size());
    for (const auto& c : contours) zs.push_back(c.z_position);
    std::sort(zs.begin(), zs.end());
    std::vector<double> gaps;
    for (std::size_t i = 1; i < zs.size(); ++i) {
        const double gap = zs[i] - zs[i - 1];
        if (gap > 1e-6) gaps.push_back(gap);
    }
    if (gaps.empty()) return 1.0;
    std::sort(gaps.begin(), gaps.end());
    return gaps[gaps.size() / 2];
}

NoduleRecord build_record(const Annotation& annotation,
                          const std::array<int, 3>& dims,
                          double spacing_xy,
                          std::vector<std::string>* warnings) {
    const std::array<float, 3> spacing{static_cast<float>(spacing_xy),
                                       static_cast<float>(spacing_xy),
                                       static_cast<float>(infer_z_spacing(annotation.contours))};
    const auto center = annotation_centroid(annotation.contours, spacing);

    NoduleRecord rec;
    rec.patient_id = annotation.patient_id;
    rec.biomarkers = annotation.biomarkers;
    rec.malignancy = annotation.malignancy;
    rec.mask = rasterize_mask(annotation.contours, dims, spacing, center, warnings);
    rec.volume = rec.mask;
    rec.volume.kind = GridKind::Intensity;
    return rec;
}

} // namespace nf
