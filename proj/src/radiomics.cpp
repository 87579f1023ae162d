#include "nodulefuse/radiomics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nf {

namespace {

void require_binary_nonempty(const VoxelGrid& mask) {
    if (mask.kind != GridKind::BinaryMask)
        throw std::invalid_argument("radiomics: grid is not a binary mask");
    bool any = false;
    for (float v : mask.data) {
        if (v != 0.0f && v != 1.0f)
            throw std::invalid_argument("radiomics: mask contains values outside {0,1}");
        if (v == 1.0f) any = true;
    }
    if (!any) throw std::invalid_argument("radiomics: empty mask");
}

bool set_at(const VoxelGrid& m, int x, int y, int z) {
    return m.in_bounds(x, y, z) && m.at(x, y, z) == 1.0f;
}

} // namespace

double mask_volume(const VoxelGrid& mask) {
    require_binary_nonempty(mask);
    std::size_t count = 0;
    for (float v : mask.data)
        if (v == 1.0f) ++count;
    const double voxel = static_cast<double>(mask.spacing[0]) * mask.spacing[1] * mask.spacing[2];
    return static_cast<double>(count) * voxel;
}

double mask_surface_area(const VoxelGrid& mask) {
    require_binary_nonempty(mask);
    const double sx = mask.spacing[0], sy = mask.spacing[1], sz = mask.spacing[2];
    const double face_x = sy * sz; // face normal to x
    const double face_y = sx * sz;
    const double face_z = sx * sy;
    double area = 0.0;
    for (int z = 0; z < mask.dims[2]; ++z)
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x) {
                if (mask.at(x, y, z) != 1.0f) continue;
                if (!set_at(mask, x - 1, y, z)) area += face_x;
                if (!set_at(mask, x + 1, y, z)) area += face_x;
                if (!set_at(mask, x, y - 1, z)) area += face_y;
                if (!set_at(mask, x, y + 1, z)) area += face_y;
                if (!set_at(mask, x, y, z - 1)) area += face_z;
                if (!set_at(mask, x, y, z + 1)) area += face_z;
            }
    return area;
}

double mask_max_axial_diameter(const VoxelGrid& mask) {
    require_binary_nonempty(mask);
    const double sx = mask.spacing[0], sy = mask.spacing[1];
    double best_sq = 0.0;
    std::vector<std::array<int, 2>> boundary;
    for (int z = 0; z < mask.dims[2]; ++z) {
        // The slice diameter is attained between extreme points, which are
        // always in-slice boundary voxels, so interior voxels can be skipped.
        boundary.clear();
        for (int y = 0; y < mask.dims[1]; ++y)
            for (int x = 0; x < mask.dims[0]; ++x) {
                if (mask.at(x, y, z) != 1.0f) continue;
                const bool interior = set_at(mask, x - 1, y, z) && set_at(mask, x + 1, y, z) &&
                                      set_at(mask, x, y - 1, z) && set_at(mask, x, y + 1, z);
                if (!interior) boundary.push_back({x, y});
            }
        for (std::size_t i = 0; i < boundary.size(); ++i)
            for (std::size_t j = i + 1; j < boundary.size(); ++j) {
                const double dx = (boundary[i][0] - boundary[j][0]) * sx;
                const double dy = (boundary[i][1] - boundary[j][1]) * sy;
                const double d = dx * dx + dy * dy;
                if (d > best_sq) best_sq = d;
            }
    }
    return std::sqrt(best_sq);
}

RadiomicVector extract_radiomics(const NoduleRecord& record) {
    RadiomicVector r;
    r.max_axial_diameter = mask_max_axial_diameter(record.mask);
    r.surface_area = mask_surface_area(record.mask);
    r.volume = mask_volume(record.mask);
    return r;
}

} // namespace nf
