#pragma once

#include <array>
#include <string>
#include <vector>

#include "nodulefuse/types.hpp"
#include "nodulefuse/xml.hpp"

namespace nf {

/// Strict point-in-polygon test (even-odd rule). Points exactly on a
/// polygon edge or vertex count as outside: the drawn outline lies on the
/// first pixel outside the nodule, so outline pixels must stay clear.
bool point_strictly_inside(double px, double py, const std::vector<std::pair<int, int>>& polygon);

/// Rasterize radiologist contours into a binary mask of the given box,
/// centered at `center_mm`. The box's x/y voxel lattice is snapped onto
/// the source pixel grid (within half a pixel of the requested center) so
/// voxel centers coincide with pixel centers; contours map to the nearest
/// z slice. A voxel is set when it lies strictly inside at least one
/// inclusion polygon on its slice and strictly inside no exclusion
/// polygon. Contours whose z maps outside the box are dropped, appending
/// to `warnings` when provided. Throws DataError when no inclusion
/// contour exists or the result has zero set voxels ("degenerate mask").
VoxelGrid rasterize_mask(const std::vector<AnnotationContour>& contours,
                         const std::array<int, 3>& dims,
                         const std::array<float, 3>& spacing,
                         const std::array<double, 3>& center_mm,
                         std::vector<std::string>* warnings = nullptr);

/// Centroid of all inclusion-contour edge points, in mm (x/y scaled by
/// pixel spacing; z is the mean inclusion-contour z position).
std::array<double, 3> annotation_centroid(const std::vector<AnnotationContour>& contours,
                                          const std::array<float, 3>& spacing);

/// Median gap between consecutive distinct contour z positions; 1.0 when
/// fewer than two distinct slices exist.
double infer_z_spacing(const std::vector<AnnotationContour>& contours);

/// Assemble a full record from a parsed annotation: rasterize the mask
/// centered at the contour centroid and use the mask itself as the
/// intensity volume (annotation XML carries no pixel data; shape-only
/// images keep downstream code exercised on real geometry).
/// `spacing_xy` is the in-plane pixel spacing in mm; z spacing is inferred
/// from the contours.
NoduleRecord build_record(const Annotation& annotation,
                          const std::array<int, 3>& dims = {32, 32, 16},
                          double spacing_xy = 1.0,
                          std::vector<std::string>* warnings = nullptr);

} // namespace nf
