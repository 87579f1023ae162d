#pragma once

#include <optional>

#include <Eigen/Core>

#include "nodulefuse/radiomics.hpp"
#include "nodulefuse/types.hpp"

namespace nf {

inline constexpr int kDeepFeatureLength = 64;

enum class FusionComposition { ImageOnly, ImageBio, ImageRad, ImageBioRad };

/// Realized length for each composition: 64, 64+8·8=128, 64+3·21=127,
/// 64+11·6=130.
int fused_length(FusionComposition composition);

const char* fusion_composition_name(FusionComposition composition);

struct FusedVector {
    Eigen::VectorXd values;
    FusionComposition composition = FusionComposition::ImageOnly;
};

/// Whole-block repetition: the output is `features` concatenated `repeats`
/// times. Throws std::invalid_argument on an empty input or repeats < 1.
Eigen::VectorXd tile(const Eigen::Ref<const Eigen::VectorXd>& features, int repeats);

/// Image features (length 64) optionally fused with tiled biomarkers
/// (x8), tiled radiomics (x21), or the tiled 11-value biomarker++radiomic
/// block (x6, biomarkers first). Throws std::invalid_argument when the
/// image vector is not length 64.
FusedVector fuse(const Eigen::Ref<const Eigen::VectorXd>& image,
                 const std::optional<BiomarkerVector>& bio,
                 const std::optional<RadiomicVector>& rad);

} // namespace nf
