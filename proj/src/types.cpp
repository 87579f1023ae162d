#include "nodulefuse/types.hpp"

#include <cmath>
#include <sstream>

namespace nf {

namespace {

bool is_binary_value(float v) { return v == 0.0f || v == 1.0f; }

void check_grid(const VoxelGrid& g, const char* name, std::vector<std::string>& out) {
    if (g.dims[0] < 1 || g.dims[1] < 1 || g.dims[2] < 1) {
        out.push_back(std::string(name) + " has non-positive dims");
        return;
    }
    if (g.data.size() != g.size()) {
        std::ostringstream ss;
        ss << name << " data length " << g.data.size() << " != nx*ny*nz " << g.size();
        out.push_back(ss.str());
    }
    for (int a = 0; a < 3; ++a) {
        if (!(g.spacing[static_cast<std::size_t>(a)] > 0.0f)) {
            out.push_back(std::string(name) + " spacing must be > 0");
            break;
        }
    }
    for (float v : g.data) {
        if (!std::isfinite(v)) {
            out.push_back(std::string(name) + " contains non-finite voxel");
            break;
        }
    }
}

} // namespace

ValidationReport validate_record(const NoduleRecord& record, const BiomarkerRanges& ranges) {
    ValidationReport report;
    auto& v = report.violations;

    for (int i = 0; i < kBiomarkerCount; ++i) {
        const double x = record.biomarkers[i];
        const auto& r = ranges.ranges[static_cast<std::size_t>(i)];
        if (!std::isfinite(x)) {
            v.push_back(std::string(kBiomarkerNames[static_cast<std::size_t>(i)]) + " not finite");
        } else if (x < r.lo || x > r.hi) {
            std::ostringstream ss;
            ss << kBiomarkerNames[static_cast<std::size_t>(i)] << " out of range [" << r.lo << ", "
               << r.hi << "]: " << x;
            v.push_back(ss.str());
        }
    }

    if (record.malignancy.value < 1 || record.malignancy.value > 5)
        v.push_back("malignancy outside 1..5");

    check_grid(record.volume, "volume", v);
    check_grid(record.mask, "mask", v);

    if (record.volume.kind != GridKind::Intensity) v.push_back("volume is not an intensity grid");
    if (record.mask.kind != GridKind::BinaryMask) v.push_back("mask is not a binary grid");

    if (record.volume.dims != record.mask.dims) v.push_back("volume/mask dims differ");
    if (record.volume.spacing != record.mask.spacing) v.push_back("volume/mask spacing differ");

    bool any_set = false;
    bool binary = true;
    for (float m : record.mask.data) {
        if (!is_binary_value(m)) binary = false;
        if (m == 1.0f) any_set = true;
    }
    if (!binary) v.push_back("mask contains values outside {0,1}");
    if (binary && !any_set) v.push_back("empty mask");

    return report;
}

ValidationReport validate_dataset(const LabeledDataset& dataset,
                                  const std::vector<NoduleRecord>& records) {
    ValidationReport report;
    auto& v = report.violations;
    const int n = static_cast<int>(records.size());

    for (const auto& e : dataset.entries) {
        if (e.record_index < 0 || e.record_index >= n) {
            v.push_back("entry index out of range");
            continue;
        }
        if (e.label != 0 && e.label != 1) v.push_back("non-binary label");
        const int m = records[static_cast<std::size_t>(e.record_index)].malignancy.value;
        if (dataset.distribution == Distribution::A && m == 3)
            v.push_back("distribution A contains a malignancy-3 record");
        if (dataset.role == SplitRole::Test && e.provenance == Provenance::Pseudo)
            v.push_back("test split contains a pseudo-labeled record");
        if (dataset.role == SplitRole::Test && m == 3)
            v.push_back("test split contains a malignancy-3 record");
    }
    return report;
}

} // namespace nf
