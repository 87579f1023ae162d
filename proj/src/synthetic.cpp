#include "nodulefuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>

#include "nodulefuse/errors.hpp"
#include "nodulefuse/rng.hpp"

namespace nf {

namespace {

double lerp(double a, double b, double t) { return a + (b - a) * t; }

void check_config(const SyntheticConfig& cfg) {
    if (cfg.n_records < 0) throw DataError("n_records must be >= 0");
    for (int a = 0; a < 3; ++a) {
        if (cfg.dims[a] <= 0) throw DataError("dims must be positive");
        if (!(cfg.spacing[a] > 0.0f)) throw DataError("spacing must be positive");
    }
    double mix_sum = 0.0;
    for (double p : cfg.class_mix) {
        if (p < 0.0) throw DataError("class mix proportions must be >= 0");
        mix_sum += p;
    }
    if (std::abs(mix_sum - 1.0) > 1e-6) throw DataError("class mix must sum to 1");
    if (!(cfg.biomarker_sigma >= 0.0)) throw DataError("biomarker_sigma must be >= 0");
    if (!(cfg.noise_sigma >= 0.0)) throw DataError("noise_sigma must be >= 0");
    if (!(cfg.edge_softness > 0.0)) throw DataError("edge_softness must be > 0");
    if (cfg.r3_center_pull < 0.0 || cfg.r3_center_pull > 1.0)
        throw DataError("r3_center_pull must be in [0, 1]");

    // The mask is voxel centers strictly inside the radius (voxel units);
    // with half-voxel center jitter the blob fits iff r + 1/2 <= (n-1)/2
    // on every axis.
    double max_fit = 1e300;
    for (int a = 0; a < 3; ++a) max_fit = std::min(max_fit, (cfg.dims[a] - 1) / 2.0 - 0.5);
    for (const auto& range : cfg.radius_range) {
        if (!(range[0] > 0.0) || range[1] < range[0])
            throw DataError("radius range must satisfy 0 < lo <= hi");
        if (range[1] > max_fit) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "blob radius %.3g voxels does not fit inside a %dx%dx%d box",
                          range[1], cfg.dims[0], cfg.dims[1], cfg.dims[2]);
            throw DataError(buf);
        }
    }
}

BiomarkerVector draw_biomarkers(const SyntheticConfig& cfg, int malignancy, Rng& rng) {
    // Class-conditional profile: linear interpolation between the class-1
    // and class-5 means. Malignancy-3 records instead lean toward the
    // class-2 or class-4 profile so the intermediate group is bimodal.
    double t;
    if (malignancy == 3) {
        const bool lean_high = std::bernoulli_distribution(0.5)(rng);
        const double cluster_t = lean_high ? 0.75 : 0.25; // class-4 / class-2 profile
        t = lerp(cluster_t, 0.5, cfg.r3_center_pull);
    } else {
        t = (malignancy - 1) / 4.0;
    }

    const auto ranges = BiomarkerRanges::lidc_default();
    std::normal_distribution<double> noise(0.0, cfg.biomarker_sigma);
    BiomarkerVector b;
    for (std::size_t i = 0; i < kBiomarkerCount; ++i) {
        double v = lerp(cfg.biomarker_mean_class1[i], cfg.biomarker_mean_class5[i], t) + noise(rng);
        if (cfg.integer_biomarkers) v = std::round(v);
        b[i] = std::clamp(v, ranges.ranges[i].lo, ranges.ranges[i].hi);
    }
    return b;
}

} // namespace

std::vector<NoduleRecord> generate_synthetic(const SyntheticConfig& cfg) {
    check_config(cfg);

    std::array<double, 5> cum{};
    double acc = 0.0;
    for (int c = 0; c < 5; ++c) {
        acc += cfg.class_mix[static_cast<std::size_t>(c)];
        cum[static_cast<std::size_t>(c)] = acc;
    }
    cum[4] = 1.0; // guard against round-off at the top end

    std::vector<NoduleRecord> out;
    out.reserve(static_cast<std::size_t>(cfg.n_records));
    for (int i = 0; i < cfg.n_records; ++i) {
        Rng rng(derive_seed(cfg.seed, "record", static_cast<std::uint64_t>(i)));

        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        int malignancy = 5;
        for (int c = 0; c < 5; ++c) {
            if (u <= cum[static_cast<std::size_t>(c)]) {
                malignancy = c + 1;
                break;
            }
        }

        NoduleRecord rec;
        char name[32];
        std::snprintf(name, sizeof(name), "synth-%06d", i);
        rec.patient_id = name;
        rec.malignancy = MalignancyScore{malignancy};
        rec.biomarkers = draw_biomarkers(cfg, malignancy, rng);

        const auto& rr = cfg.radius_range[static_cast<std::size_t>(malignancy - 1)];
        const double radius = std::uniform_real_distribution<double>(rr[0], rr[1])(rng);

        std::array<double, 3> center;
        for (int a = 0; a < 3; ++a)
            center[static_cast<std::size_t>(a)] =
                (cfg.dims[static_cast<std::size_t>(a)] - 1) / 2.0 +
                std::uniform_real_distribution<double>(-0.5, 0.5)(rng);

        rec.volume = VoxelGrid::zeros(cfg.dims, cfg.spacing, GridKind::Intensity);
        rec.mask = VoxelGrid::zeros(cfg.dims, cfg.spacing, GridKind::BinaryMask);

        std::normal_distribution<double> vox_noise(0.0, cfg.noise_sigma);
        const double w = cfg.edge_softness;
        for (int z = 0; z < cfg.dims[2]; ++z) {
            for (int y = 0; y < cfg.dims[1]; ++y) {
                for (int x = 0; x < cfg.dims[0]; ++x) {
                    const double dx = x - center[0];
                    const double dy = y - center[1];
                    const double dz = z - center[2];
                    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                    // Linear edge ramp: 1 inside r-w, 0 outside r+w, 1/2 at d=r,
                    // so thresholding the noiseless blob at half max is exactly d < r.
                    const double ramp = std::clamp((radius + w - d) / (2.0 * w), 0.0, 1.0);
                    double v = cfg.background + cfg.contrast * ramp;
                    if (cfg.noise_sigma > 0.0) v += vox_noise(rng);
                    const std::size_t idx = rec.volume.index(x, y, z);
                    rec.volume.data[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                    if (d < radius) rec.mask.data[idx] = 1.0f;
                }
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "n_records",        "seed",
        "dims",             "spacing",
        "class_mix",        "biomarker_mean_class1",
        "biomarker_mean_class5", "biomarker_sigma",
        "r3_center_pull",   "radius_range",
        "edge_softness",    "noise_sigma",
        "background",       "contrast",
        "integer_biomarkers"};
    return keys;
}

template <typename T, std::size_t N>
void read_array(const nlohmann::json& j, const char* key, std::array<T, N>& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != N)
        throw std::invalid_argument(std::string(key) + " must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) out[i] = a[i].get<T>();
}

} // namespace

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("synthetic config must be a JSON object");
    for (const auto& item : j.items()) {
        if (known_keys().count(item.key()) == 0)
            throw std::invalid_argument("unknown synthetic config key: " + item.key());
    }
    SyntheticConfig cfg;
    cfg.n_records = j.value("n_records", cfg.n_records);
    cfg.seed = j.value("seed", cfg.seed);
    read_array(j, "dims", cfg.dims);
    read_array(j, "spacing", cfg.spacing);
    read_array(j, "class_mix", cfg.class_mix);
    read_array(j, "biomarker_mean_class1", cfg.biomarker_mean_class1);
    read_array(j, "biomarker_mean_class5", cfg.biomarker_mean_class5);
    cfg.biomarker_sigma = j.value("biomarker_sigma", cfg.biomarker_sigma);
    cfg.r3_center_pull = j.value("r3_center_pull", cfg.r3_center_pull);
    if (j.contains("radius_range")) {
        const auto& rr = j.at("radius_range");
        if (!rr.is_array() || rr.size() != 5)
            throw std::invalid_argument("radius_range must be an array of 5 [lo, hi] pairs");
        for (std::size_t c = 0; c < 5; ++c) {
            if (!rr[c].is_array() || rr[c].size() != 2)
                throw std::invalid_argument("radius_range entries must be [lo, hi] pairs");
            cfg.radius_range[c] = {rr[c][0].get<double>(), rr[c][1].get<double>()};
        }
    }
    cfg.edge_softness = j.value("edge_softness", cfg.edge_softness);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.background = j.value("background", cfg.background);
    cfg.contrast = j.value("contrast", cfg.contrast);
    cfg.integer_biomarkers = j.value("integer_biomarkers", cfg.integer_biomarkers);
    return cfg;
}

nlohmann::json synthetic_config_to_json(const SyntheticConfig& cfg) {
    nlohmann::json j;
    j["n_records"] = cfg.n_records;
    j["seed"] = cfg.seed;
    j["dims"] = cfg.dims;
    j["spacing"] = cfg.spacing;
    j["class_mix"] = cfg.class_mix;
    j["biomarker_mean_class1"] = cfg.biomarker_mean_class1;
    j["biomarker_mean_class5"] = cfg.biomarker_mean_class5;
    j["biomarker_sigma"] = cfg.biomarker_sigma;
    j["r3_center_pull"] = cfg.r3_center_pull;
    j["radius_range"] = cfg.radius_range;
    j["edge_softness"] = cfg.edge_softness;
    j["noise_sigma"] = cfg.noise_sigma;
    j["background"] = cfg.background;
    j["contrast"] = cfg.contrast;
    j["integer_biomarkers"] = cfg.integer_biomarkers;
    return j;
}

} // namespace nf
