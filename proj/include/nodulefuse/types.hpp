#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nf {

inline constexpr int kBiomarkerCount = 8;

/// Canonical biomarker order. This order is a contract: fusion tiling and
/// KNN distances address components positionally.
inline constexpr std::array<const char*, kBiomarkerCount> kBiomarkerNames = {
    "subtlety",  "internal_structure", "calcification", "sphericity",
    "margin",    "lobulation",         "spiculation",   "texture"};

/// Radiologist ratings, stored as floating point because downstream
/// distance and tiling math is real-valued.
struct BiomarkerVector {
    std::array<double, kBiomarkerCount> values{};

    double& operator[](int i) { return values[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return values[static_cast<std::size_t>(i)]; }

    Eigen::Matrix<double, kBiomarkerCount, 1> to_eigen() const {
        Eigen::Matrix<double, kBiomarkerCount, 1> v;
        for (int i = 0; i < kBiomarkerCount; ++i) v(i) = values[static_cast<std::size_t>(i)];
        return v;
    }

    bool operator==(const BiomarkerVector&) const = default;
};

struct BiomarkerRange {
    double lo = 1.0;
    double hi = 5.0;
};

/// Valid range per biomarker, configurable. Defaults follow the LIDC
/// convention; the encoding of each level is treated as an opaque ordinal.
struct BiomarkerRanges {
    std::array<BiomarkerRange, kBiomarkerCount> ranges;

    static BiomarkerRanges lidc_default() {
        BiomarkerRanges r;
        r.ranges = {{{1, 5},   // subtlety
                     {1, 4},   // internal structure
                     {1, 6},   // calcification
                     {1, 5},   // sphericity
                     {1, 5},   // margin
                     {1, 5},   // lobulation
                     {1, 5},   // spiculation
                     {1, 5}}}; // texture
        return r;
    }
};

/// Radiologist suspicion rating, 1 (highly unlikely malignant) to 5
/// (highly suspicious).
struct MalignancyScore {
    int value = 3;
    bool operator==(const MalignancyScore&) const = default;
};

enum class GridKind { Intensity, BinaryMask };

/// Dense voxel block with physical spacing. Data is x-fastest, then y,
/// then z: index = (z*ny + y)*nx + x. Pipeline default dims are (32,32,16).
struct VoxelGrid {
    std::array<int, 3> dims{32, 32, 16};
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    GridKind kind = GridKind::Intensity;
    std::vector<float> data;

    static VoxelGrid zeros(std::array<int, 3> dims, std::array<float, 3> spacing,
                           GridKind kind) {
        VoxelGrid g;
        g.dims = dims;
        g.spacing = spacing;
        g.kind = kind;
        g.data.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], 0.0f);
        return g;
    }

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }

    float at(int x, int y, int z) const { return data[index(x, y, z)]; }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
    }

    bool operator==(const VoxelGrid&) const = default;
};

/// One radiologist annotation of one nodule. Each annotation is a sample:
/// the same physical nodule read by four radiologists yields four records.
struct NoduleRecord {
    std::string patient_id;
    BiomarkerVector biomarkers;
    MalignancyScore malignancy;
    VoxelGrid volume; // intensity
    VoxelGrid mask;   // binary

    bool operator==(const NoduleRecord&) const = default;
};

enum class Distribution { A, B };
enum class SplitRole { Train, Test };
enum class Provenance { Annotated, Pseudo };

/// Reference to a record plus its binary label. Datasets index into an
/// external record vector instead of copying voxel payloads.
struct LabeledEntry {
    int record_index = 0;
    int label = 0; // 0 benign-leaning, 1 malignant-leaning
    Provenance provenance = Provenance::Annotated;
};

struct LabeledDataset {
    std::vector<LabeledEntry> entries;
    Distribution distribution = Distribution::A;
    SplitRole role = SplitRole::Train;
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

/// Report-only check of every type invariant of a record. Never mutates or
/// throws; violations come back as human-readable strings.
ValidationReport validate_record(const NoduleRecord& record,
                                 const BiomarkerRanges& ranges = BiomarkerRanges::lidc_default());

/// Enforces the LabeledDataset invariants against the backing records:
/// distribution A contains no malignancy-3 record, test splits contain no
/// pseudo-labeled entry, labels are binary, indices are in range.
ValidationReport validate_dataset(const LabeledDataset& dataset,
                                  const std::vector<NoduleRecord>& records);

} // namespace nf
