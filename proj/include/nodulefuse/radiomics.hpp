#pragma once

#include <Eigen/Core>

#include "nodulefuse/types.hpp"

namespace nf {

/// The three volumetric shape features, in this fixed order (a fusion
/// contract): maximum axial diameter (mm), surface area (mm^2), volume (mm^3).
struct RadiomicVector {
    double max_axial_diameter = 0.0;
    double surface_area = 0.0;
    double volume = 0.0;

    Eigen::Vector3d to_eigen() const {
        return Eigen::Vector3d(max_axial_diameter, surface_area, volume);
    }
};

/// Count of set voxels times the voxel volume sx*sy*sz.
double mask_volume(const VoxelGrid& mask);

/// Exposed-face counting: every face of a set voxel adjacent to an unset or
/// out-of-bounds voxel contributes its physical area. Exact and deterministic;
/// a known over-estimator relative to mesh methods on smooth shapes.
double mask_surface_area(const VoxelGrid& mask);

/// Max over axial (fixed-z) slices of the max Euclidean distance in mm
/// between centers of set voxels in that slice. A single-voxel slice
/// contributes 0.
double mask_max_axial_diameter(const VoxelGrid& mask);

RadiomicVector extract_radiomics(const NoduleRecord& record);

} // namespace nf
