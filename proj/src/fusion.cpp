#include "nodulefuse/fusion.hpp"

#include <stdexcept>

namespace nf {

int fused_length(FusionComposition composition) {
    switch (composition) {
        case FusionComposition::ImageOnly: return kDeepFeatureLength;
        case FusionComposition::ImageBio: return kDeepFeatureLength + 8 * 8;
        case FusionComposition::ImageRad: return kDeepFeatureLength + 3 * 21;
        case FusionComposition::ImageBioRad: return kDeepFeatureLength + 11 * 6;
    }
    throw std::invalid_argument("unknown fusion composition");
}

const char* fusion_composition_name(FusionComposition composition) {
    switch (composition) {
        case FusionComposition::ImageOnly: return "image";
        case FusionComposition::ImageBio: return "image+bio";
        case FusionComposition::ImageRad: return "image+rad";
        case FusionComposition::ImageBioRad: return "image+bio+rad";
    }
    throw std::invalid_argument("unknown fusion composition");
}

Eigen::VectorXd tile(const Eigen::Ref<const Eigen::VectorXd>& features, int repeats) {
    if (features.size() == 0) throw std::invalid_argument("cannot tile an empty vector");
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    Eigen::VectorXd out(features.size() * repeats);
    for (int r = 0; r < repeats; ++r) out.segment(r * features.size(), features.size()) = features;
    return out;
}

FusedVector fuse(const Eigen::Ref<const Eigen::VectorXd>& image,
                 const std::optional<BiomarkerVector>& bio,
                 const std::optional<RadiomicVector>& rad) {
    if (image.size() != kDeepFeatureLength)
        throw std::invalid_argument("image feature vector must have length 64");

    FusedVector fused;
    if (bio && rad) {
        fused.composition = FusionComposition::ImageBioRad;
        Eigen::VectorXd block(11);
        block << bio->to_eigen(), rad->to_eigen(); // biomarkers precede radiomics
        const Eigen::VectorXd tiled = tile(block, 6);
        fused.values.resize(image.size() + tiled.size());
        fused.values << image, tiled;
    } else if (bio) {
        fused.composition = FusionComposition::ImageBio;
        const Eigen::VectorXd tiled = tile(bio->to_eigen(), 8);
        fused.values.resize(image.size() + tiled.size());
        fused.values << image, tiled;
    } else if (rad) {
        fused.composition = FusionComposition::ImageRad;
        const Eigen::VectorXd tiled = tile(rad->to_eigen(), 21);
        fused.values.resize(image.size() + tiled.size());
        fused.values << image, tiled;
    } else {
        fused.composition = FusionComposition::ImageOnly;
        fused.values = image;
    }

    if (fused.values.size() != fused_length(fused.composition))
        throw std::logic_error("fused length does not match composition");
    return fused;
}

} // namespace nf
