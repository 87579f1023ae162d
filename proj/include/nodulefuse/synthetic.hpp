#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodulefuse/types.hpp"

namespace nf {

/// Deterministic desk-scale data source. Each record draws a malignancy
/// class, class-conditional biomarkers, and a soft-edged spherical blob
/// whose radius grows with the class; the mask is the noiseless blob
/// thresholded at half max, i.e. voxel centers strictly inside the radius.
struct SyntheticConfig {
    int n_records = 200;
    std::uint64_t seed = 1;
    std::array<int, 3> dims{32, 32, 16};
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};

    /// Proportions over malignancy classes 1..5; must sum to 1.
    std::array<double, 5> class_mix{0.13, 0.18, 0.375, 0.21, 0.105};

    /// Per-biomarker mean at class 1 and class 5; classes in between
    /// interpolate linearly. Values are clamped to the LIDC default ranges.
    std::array<double, kBiomarkerCount> biomarker_mean_class1{2.0, 1.2, 4.5, 4.2, 4.0, 1.5, 1.2, 4.5};
    std::array<double, kBiomarkerCount> biomarker_mean_class5{4.5, 1.8, 6.0, 2.8, 2.0, 3.5, 4.2, 3.0};
    double biomarker_sigma = 0.7;

    /// Malignancy-3 records lean toward the class-2 or class-4 biomarker
    /// profile (50/50), pulled toward the class-3 midpoint by this factor.
    /// 0 = pure cluster profiles, 1 = exact midpoint.
    double r3_center_pull = 0.35;

    /// Blob radius range [lo, hi] in mm per malignancy class.
    std::array<std::array<double, 2>, 5> radius_range{{{2.5, 3.5}, {3.0, 4.0}, {3.5, 4.5}, {4.0, 5.5}, {4.5, 6.5}}};

    /// Half-width of the linear intensity ramp at the blob edge, mm.
    double edge_softness = 1.25;
    double noise_sigma = 0.03;
    double background = 0.08;
    double contrast = 0.85;

    /// Round biomarkers to integer ratings (radiologist-style) when true.
    bool integer_biomarkers = true;
};

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
nlohmann::json synthetic_config_to_json(const SyntheticConfig& cfg);

/// Deterministic given the seed; per-record substreams keep records
/// independent of one another. Throws DataError on infeasible configs
/// (bad class mix, blob that cannot fit the box).
std::vector<NoduleRecord> generate_synthetic(const SyntheticConfig& cfg);

} // namespace nf
