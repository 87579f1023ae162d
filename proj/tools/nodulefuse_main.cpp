// nodulefuse — command-line front end for the nodule-classification pipeline.
//
// Subcommands: synth, ingest, experiment, tune, bestk. Every command writes
// a run_manifest.json recording the full configuration; `--from-manifest`
// replays a previous run (flags still win). Exit codes: 0 success, 2 usage
// error, 3 data error, 4 missing prerequisite.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nodulefuse/container.hpp"
#include "nodulefuse/errors.hpp"
#include "nodulefuse/experiments.hpp"
#include "nodulefuse/raster.hpp"
#include "nodulefuse/semisup.hpp"
#include "nodulefuse/synthetic.hpp"
#include "nodulefuse/xml.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

class Timer {
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();

public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }
};

json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw nf::DataError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw nf::DataError("cannot parse " + path.string() + ": " + e.what());
    }
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw nf::DataError("failed writing " + path.string());
}

void write_json_file(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// Pull the config object back out of a run_manifest.json, refusing
/// manifests from a different subcommand.
json config_from_manifest(const fs::path& path, const std::string& command) {
    const json m = load_json_file(path);
    if (!m.contains("command") || !m.contains("config"))
        throw nf::DataError(path.string() + " is not a run manifest (missing command/config)");
    if (m.at("command").get<std::string>() != command)
        throw std::invalid_argument("manifest " + path.string() + " records a '" +
                                    m.at("command").get<std::string>() + "' run, not '" + command + "'");
    return m.at("config");
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    std::optional<std::uint64_t> seed, const std::vector<fs::path>& outputs,
                    double seconds) {
    json m;
    m["tool"] = "nodulefuse";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["config"] = config;
    if (seed) m["seed"] = *seed;
    json arr = json::array();
    for (const auto& p : outputs) arr.push_back(fs::absolute(p).lexically_normal().string());
    m["outputs"] = std::move(arr);
    m["timings"] = {{"total_seconds", seconds}};
    write_json_file(out_dir / "run_manifest.json", m);
}

void print_warnings(const std::vector<std::string>& warnings) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    fs::path out;
    fs::path config_path;
    fs::path manifest_path;
    int count = -1;
    std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthOptions& opts) {
    Timer timer;
    nf::SyntheticConfig cfg;
    fs::path out = opts.out;
    if (!opts.manifest_path.empty()) {
        const json mc = config_from_manifest(opts.manifest_path, "synth");
        cfg = nf::synthetic_config_from_json(mc.at("generator"));
        if (out.empty()) out = mc.at("out").get<std::string>();
    } else if (!opts.config_path.empty()) {
        cfg = nf::synthetic_config_from_json(load_json_file(opts.config_path));
    }
    if (opts.count >= 0) cfg.n_records = opts.count;
    if (opts.seed) cfg.seed = *opts.seed;
    if (out.empty()) throw std::invalid_argument("--out is required");

    const std::vector<nf::NoduleRecord> records = nf::generate_synthetic(cfg);
    nf::save_container(records, out);

    json config;
    config["out"] = abs_string(out);
    config["generator"] = nf::synthetic_config_to_json(cfg);
    write_manifest(out, "synth", config, cfg.seed, {out}, timer.seconds());
    std::cout << "synth: wrote " << records.size() << " records to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestOptions {
    fs::path xml_dir;
    fs::path container_in;
    fs::path out;
    fs::path exclude_file;
    fs::path manifest_path;
    std::vector<std::string> exclude_ids;
    std::vector<int> dims{32, 32, 16};
    double spacing_xy = 1.0;
};

std::set<std::string> load_exclusions(const IngestOptions& opts) {
    std::set<std::string> ids(opts.exclude_ids.begin(), opts.exclude_ids.end());
    if (opts.exclude_file.empty()) return ids;
    std::ifstream in(opts.exclude_file);
    if (!in) throw nf::DataError("cannot open exclusion list " + opts.exclude_file.string());
    std::string line;
    while (std::getline(in, line)) {
        const auto begin = line.find_first_not_of(" \t\r\n");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r\n");
        line = line.substr(begin, end - begin + 1);
        if (line.empty() || line[0] == '#') continue;
        ids.insert(line);
    }
    return ids;
}

int cmd_ingest(IngestOptions opts) {
    Timer timer;
    if (!opts.manifest_path.empty()) {
        const json mc = config_from_manifest(opts.manifest_path, "ingest");
        if (opts.xml_dir.empty() && !mc.at("xml_dir").is_null())
            opts.xml_dir = mc.at("xml_dir").get<std::string>();
        if (opts.container_in.empty() && !mc.at("container_in").is_null())
            opts.container_in = mc.at("container_in").get<std::string>();
        if (opts.out.empty()) opts.out = mc.at("out").get<std::string>();
        if (opts.exclude_ids.empty() && opts.exclude_file.empty())
            opts.exclude_ids = mc.at("exclude").get<std::vector<std::string>>();
        opts.dims = mc.value("dims", opts.dims);
        opts.spacing_xy = mc.value("spacing_xy", opts.spacing_xy);
    }
    if (opts.out.empty()) throw std::invalid_argument("--out is required");
    if (opts.xml_dir.empty() == opts.container_in.empty())
        throw std::invalid_argument("pass exactly one of --xml-dir and --in");
    if (opts.dims.size() != 3 || opts.dims[0] < 1 || opts.dims[1] < 1 || opts.dims[2] < 1)
        throw std::invalid_argument("--dims takes three positive integers");
    const std::set<std::string> exclusions = load_exclusions(opts);

    std::vector<nf::NoduleRecord> records;
    std::vector<std::string> warnings;
    int parsed = 0, skipped = 0, excluded = 0;

    if (!opts.xml_dir.empty()) {
        if (!fs::is_directory(opts.xml_dir))
            throw nf::DataError(opts.xml_dir.string() + " is not a directory");
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(opts.xml_dir))
            if (entry.is_regular_file() && entry.path().extension() == ".xml")
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw nf::DataError("no .xml files under " + opts.xml_dir.string());
        const std::array<int, 3> dims{opts.dims[0], opts.dims[1], opts.dims[2]};
        for (const auto& file : files) {
            std::ifstream in(file, std::ios::binary);
            if (!in) throw nf::DataError("cannot open " + file.string());
            std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            const nf::ParseResult result = nf::parse_annotation_xml(text);
            skipped += result.skipped;
            for (const auto& annotation : result.annotations) {
                if (exclusions.count(annotation.patient_id)) {
                    ++excluded;
                    continue;
                }
                try {
                    records.push_back(nf::build_record(annotation, dims, opts.spacing_xy, &warnings));
                    ++parsed;
                } catch (const nf::DataError& e) {
                    // Inconsistent geometry (e.g. a degenerate mask) skips
                    // the one annotation rather than aborting the batch.
                    ++skipped;
                    warnings.push_back(file.string() + ": " + e.what());
                }
            }
        }
    } else {
        for (auto& record : nf::load_container(opts.container_in)) {
            if (exclusions.count(record.patient_id)) {
                ++excluded;
                continue;
            }
            records.push_back(std::move(record));
            ++parsed;
        }
    }
    if (records.empty()) throw nf::DataError("no records left to write");
    nf::save_container(records, opts.out);
    print_warnings(warnings);

    json config;
    config["xml_dir"] = opts.xml_dir.empty() ? json() : json(abs_string(opts.xml_dir));
    config["container_in"] = opts.container_in.empty() ? json() : json(abs_string(opts.container_in));
    config["out"] = abs_string(opts.out);
    config["exclude"] = std::vector<std::string>(exclusions.begin(), exclusions.end());
    config["dims"] = opts.dims;
    config["spacing_xy"] = opts.spacing_xy;
    write_manifest(opts.out, "ingest", config, std::nullopt, {opts.out}, timer.seconds());
    std::cout << "ingest: wrote " << records.size() << " records to " << opts.out.string()
              << " (parsed " << parsed << ", skipped " << skipped << ", excluded " << excluded
              << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentOptions {
    fs::path data;
    int id = 1;
    std::string mode = "fully"; // fully | semi | both
    int iterations = 0;
    double train_fraction = 0.8;
    bool stratified = false;
    int knn_k = nf::kDefaultPseudoLabelK;
    std::optional<std::uint64_t> seed;
    double alpha = 0.05;
    int roc_grid_points = 101;
    fs::path artifact_dir; // flag > NODULEFUSE_CACHE_DIR > out_dir/artifacts
    int jobs = 1;
    bool normalize = true;
    std::string arch = "default"; // default | small
    std::optional<json> arch_custom;
    nf::LogisticRegressionParams lr{0.0, 0.05, 2000, 1e-9, 0};
    double cnn_learning_rate = 1e-3;
    int cnn_batch = 16;
    int cnn_epochs = 10;
    std::optional<nf::RandomForestParams> rf_override;
};

void apply_experiment_json(ExperimentOptions& opts, const json& j) {
    if (j.contains("data")) opts.data = j.at("data").get<std::string>();
    opts.id = j.value("id", opts.id);
    opts.mode = j.value("mode", opts.mode);
    opts.iterations = j.value("iterations", opts.iterations);
    opts.train_fraction = j.value("train_fraction", opts.train_fraction);
    opts.stratified = j.value("stratified", opts.stratified);
    opts.knn_k = j.value("knn_k", opts.knn_k);
    if (j.contains("master_seed")) opts.seed = j.at("master_seed").get<std::uint64_t>();
    opts.alpha = j.value("alpha", opts.alpha);
    opts.roc_grid_points = j.value("roc_grid_points", opts.roc_grid_points);
    if (j.contains("artifact_dir")) opts.artifact_dir = j.at("artifact_dir").get<std::string>();
    opts.jobs = j.value("jobs", opts.jobs);
    opts.normalize = j.value("normalize", opts.normalize);
    if (j.contains("cnn")) {
        const json& c = j.at("cnn");
        if (c.contains("architecture")) {
            if (c.at("architecture").is_string()) {
                opts.arch = c.at("architecture").get<std::string>();
                opts.arch_custom.reset();
            } else {
                opts.arch_custom = c.at("architecture");
            }
        }
        opts.cnn_learning_rate = c.value("learning_rate", opts.cnn_learning_rate);
        opts.cnn_batch = c.value("batch_size", opts.cnn_batch);
        opts.cnn_epochs = c.value("epochs", opts.cnn_epochs);
    }
    if (j.contains("lr")) {
        const json& c = j.at("lr");
        opts.lr.l2_strength = c.value("l2_strength", opts.lr.l2_strength);
        opts.lr.learning_rate = c.value("learning_rate", opts.lr.learning_rate);
        opts.lr.max_epochs = c.value("max_epochs", opts.lr.max_epochs);
        opts.lr.tolerance = c.value("tolerance", opts.lr.tolerance);
    }
    if (j.contains("rf_override") && !j.at("rf_override").is_null())
        opts.rf_override = nf::rf_params_from_json(j.at("rf_override"));
}

json experiment_options_to_json(const ExperimentOptions& opts, int resolved_iterations) {
    json j;
    j["data"] = abs_string(opts.data);
    j["id"] = opts.id;
    j["mode"] = opts.mode;
    j["iterations"] = resolved_iterations;
    j["train_fraction"] = opts.train_fraction;
    j["stratified"] = opts.stratified;
    j["knn_k"] = opts.knn_k;
    j["master_seed"] = *opts.seed;
    j["alpha"] = opts.alpha;
    j["roc_grid_points"] = opts.roc_grid_points;
    j["artifact_dir"] = abs_string(opts.artifact_dir);
    j["jobs"] = opts.jobs;
    j["normalize"] = opts.normalize;
    j["cnn"] = {{"architecture", opts.arch_custom ? *opts.arch_custom : json(opts.arch)},
                {"learning_rate", opts.cnn_learning_rate},
                {"batch_size", opts.cnn_batch},
                {"epochs", opts.cnn_epochs}};
    j["lr"] = {{"l2_strength", opts.lr.l2_strength},
               {"learning_rate", opts.lr.learning_rate},
               {"max_epochs", opts.lr.max_epochs},
               {"tolerance", opts.lr.tolerance}};
    j["rf_override"] = opts.rf_override ? nf::rf_params_to_json(*opts.rf_override) : json();
    return j;
}

nf::CnnArchitecture resolve_architecture(const ExperimentOptions& opts) {
    if (opts.arch_custom) return nf::architecture_from_json(*opts.arch_custom);
    if (opts.arch == "default") return nf::default_architecture();
    if (opts.arch == "small") return nf::small_architecture();
    throw std::invalid_argument("unknown architecture '" + opts.arch + "' (use default or small)");
}

nf::ExperimentConfig build_experiment_config(const ExperimentOptions& opts, nf::ExperimentMode mode) {
    nf::ExperimentConfig cfg;
    cfg.id = opts.id;
    cfg.mode = mode;
    cfg.iterations = opts.iterations;
    cfg.train_fraction = opts.train_fraction;
    cfg.stratified = opts.stratified;
    cfg.knn_k = opts.knn_k;
    cfg.master_seed = *opts.seed;
    cfg.lr_params = opts.lr;
    cfg.cnn_arch = resolve_architecture(opts);
    cfg.cnn_train = {opts.cnn_learning_rate, opts.cnn_batch, opts.cnn_epochs, 0};
    cfg.rf_override = opts.rf_override;
    cfg.artifact_dir = opts.artifact_dir;
    cfg.roc_grid_points = opts.roc_grid_points;
    cfg.jobs = opts.jobs;
    return cfg;
}

std::vector<nf::ExperimentMode> parse_modes(const std::string& mode) {
    if (mode == "fully") return {nf::ExperimentMode::Fully};
    if (mode == "semi") return {nf::ExperimentMode::Semi};
    if (mode == "both") return {nf::ExperimentMode::Fully, nf::ExperimentMode::Semi};
    throw std::invalid_argument("mode must be fully, semi, or both");
}

fs::path resolve_artifact_dir(const fs::path& flag_value, const fs::path& out_dir) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("NODULEFUSE_CACHE_DIR"); env && *env) return env;
    return out_dir / "artifacts";
}

int cmd_experiment(ExperimentOptions opts, const fs::path& out_dir) {
    Timer timer;
    if (!opts.seed) throw std::invalid_argument("a master seed is required: pass --seed");
    opts.artifact_dir = resolve_artifact_dir(opts.artifact_dir, out_dir);
    const std::vector<nf::ExperimentMode> modes = parse_modes(opts.mode);

    std::vector<nf::NoduleRecord> records = nf::load_container(opts.data);
    if (opts.normalize) nf::min_max_normalize(records);

    std::vector<nf::ExperimentResult> results;
    std::vector<fs::path> outputs;
    for (const nf::ExperimentMode mode : modes)
        results.push_back(nf::run_experiment(records, build_experiment_config(opts, mode)));

    for (const auto& result : results) {
        const fs::path path = out_dir / ("result_exp" + std::to_string(result.id) + "_" +
                                         nf::experiment_mode_name(result.mode) + ".json");
        write_json_file(path, nf::experiment_result_to_json(result));
        outputs.push_back(path);
    }
    write_text_file(out_dir / "auc.csv", nf::auc_csv(results));
    outputs.push_back(out_dir / "auc.csv");
    write_text_file(out_dir / "roc.csv", nf::roc_csv(results));
    outputs.push_back(out_dir / "roc.csv");

    std::size_t series_total = 0;
    for (const auto& result : results) series_total += result.models.size();
    if (series_total >= 2) {
        const nf::ComparisonTable table = nf::compare(results, opts.alpha);
        write_json_file(out_dir / "comparison.json", nf::comparison_to_json(table));
        outputs.push_back(out_dir / "comparison.json");
        print_warnings(table.warnings);
    }

    for (const auto& result : results)
        for (const auto& ms : result.models)
            std::cout << "exp" << result.id << " " << nf::experiment_mode_name(result.mode) << " "
                      << ms.model << ": mean AUC " << nf::format_double(ms.mean_auc) << " over "
                      << result.iterations << " iterations\n";
    for (const auto& path : outputs) std::cout << "wrote " << path.string() << "\n";

    write_manifest(out_dir, "experiment",
                   experiment_options_to_json(opts, results.front().iterations), opts.seed, outputs,
                   timer.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

struct TuneOptions {
    fs::path data;
    int id = 1;
    std::string mode = "fully";
    int folds = 3;
    int iterations = 100;
    std::optional<std::uint64_t> seed;
    fs::path artifact_dir;
    nf::SearchSpace space;
};

json search_space_to_json(const nf::SearchSpace& space) {
    json j;
    j["n_estimators"] = space.n_estimators;
    j["max_depth"] = space.max_depth;
    j["min_samples_leaf"] = space.min_samples_leaf;
    j["min_samples_split"] = space.min_samples_split;
    j["bootstrap"] = space.bootstrap;
    j["max_features"] = space.max_features;
    return j;
}

nf::SearchSpace search_space_from_json(const json& j) {
    nf::SearchSpace space;
    const auto range = [&](const char* key, std::array<int, 2>& target) {
        if (!j.contains(key)) return;
        target[0] = j.at(key).at(0).get<int>();
        target[1] = j.at(key).at(1).get<int>();
    };
    range("n_estimators", space.n_estimators);
    range("max_depth", space.max_depth);
    range("min_samples_leaf", space.min_samples_leaf);
    range("min_samples_split", space.min_samples_split);
    if (j.contains("bootstrap")) space.bootstrap = j.at("bootstrap").get<std::vector<bool>>();
    space.max_features = j.value("max_features", space.max_features);
    return space;
}

void apply_tune_json(TuneOptions& opts, const json& j) {
    if (j.contains("data")) opts.data = j.at("data").get<std::string>();
    opts.id = j.value("id", opts.id);
    opts.mode = j.value("mode", opts.mode);
    opts.folds = j.value("folds", opts.folds);
    opts.iterations = j.value("iterations", opts.iterations);
    if (j.contains("seed")) opts.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("artifact_dir")) opts.artifact_dir = j.at("artifact_dir").get<std::string>();
    if (j.contains("space")) opts.space = search_space_from_json(j.at("space"));
}

int cmd_tune(TuneOptions opts, const fs::path& out_dir) {
    Timer timer;
    if (!opts.seed) throw std::invalid_argument("a master seed is required: pass --seed");
    if (opts.mode != "fully" && opts.mode != "semi")
        throw std::invalid_argument("mode must be fully or semi");
    if (opts.id < 1 || opts.id > 6) throw std::invalid_argument("experiment id must be in 1..6");
    opts.artifact_dir = resolve_artifact_dir(opts.artifact_dir, out_dir);

    std::vector<nf::NoduleRecord> records = nf::load_container(opts.data);
    nf::min_max_normalize(records);

    Eigen::MatrixXd features;
    Eigen::VectorXd labels;
    if (opts.id == 1 || opts.id == 6) {
        nf::LabeledDataset ds;
        if (opts.mode == "fully") {
            ds = nf::make_distribution_a(records);
        } else {
            std::vector<int> all(records.size());
            std::iota(all.begin(), all.end(), 0);
            ds = nf::pseudo_label_r3(records, all, nf::kDefaultPseudoLabelK);
        }
        features = opts.id == 1 ? nf::biomarker_matrix(records, ds)
                                : nf::biomarker_radiomic_matrix(records, ds);
        labels = nf::label_vector(ds);
    } else {
        const fs::path dir = opts.artifact_dir / "exp2" / opts.mode / "iter_0000";
        if (!fs::exists(dir / "model.nfc") || !fs::exists(dir / "split.json"))
            throw nf::PrereqError("tuning experiment " + std::to_string(opts.id) + " (" + opts.mode +
                                  ") needs experiment-2 artifacts under " + dir.string() +
                                  "; run experiment 2 first");
        nf::Network<float> net = nf::load_checkpoint(dir / "model.nfc");
        const json split = load_json_file(dir / "split.json");
        const nf::Distribution dist =
            opts.mode == "fully" ? nf::Distribution::A : nf::Distribution::B;
        const nf::LabeledDataset train = nf::labeled_dataset_from_json(
            split.at("train"), dist, nf::SplitRole::Train, records.size());
        features = nf::experiment_feature_matrix(net, records, train, opts.id);
        labels = nf::label_vector(train);
    }

    const nf::TuneReport report =
        nf::random_search_tune(features, labels, opts.space, opts.folds, opts.iterations, *opts.seed);

    json out = nf::tune_report_to_json(report);
    out["experiment"] = opts.id;
    out["mode"] = opts.mode;
    out["folds"] = opts.folds;
    out["iterations"] = opts.iterations;
    const fs::path path =
        out_dir / ("tune_exp" + std::to_string(opts.id) + "_" + opts.mode + ".json");
    write_json_file(path, out);

    json config;
    config["data"] = abs_string(opts.data);
    config["id"] = opts.id;
    config["mode"] = opts.mode;
    config["folds"] = opts.folds;
    config["iterations"] = opts.iterations;
    config["seed"] = *opts.seed;
    config["artifact_dir"] = abs_string(opts.artifact_dir);
    config["space"] = search_space_to_json(opts.space);
    write_manifest(out_dir, "tune", config, opts.seed, {path}, timer.seconds());

    std::cout << "tune exp" << opts.id << " " << opts.mode << ": best CV AUC "
              << nf::format_double(report.best_cv_auc) << " with n_estimators="
              << report.best.n_estimators << " max_depth=" << report.best.max_depth
              << " min_samples_leaf=" << report.best.min_samples_leaf
              << " min_samples_split=" << report.best.min_samples_split << "\n";
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bestk
// ---------------------------------------------------------------------------

struct BestKOptions {
    fs::path data;
    int runs = 10;
    double train_fraction = 0.8;
    std::optional<std::uint64_t> seed;
};

void apply_bestk_json(BestKOptions& opts, const json& j) {
    if (j.contains("data")) opts.data = j.at("data").get<std::string>();
    opts.runs = j.value("runs", opts.runs);
    opts.train_fraction = j.value("train_fraction", opts.train_fraction);
    if (j.contains("seed")) opts.seed = j.at("seed").get<std::uint64_t>();
}

int cmd_bestk(const BestKOptions& opts, const fs::path& out_dir) {
    Timer timer;
    if (!opts.seed) throw std::invalid_argument("a master seed is required: pass --seed");
    const std::vector<nf::NoduleRecord> records = nf::load_container(opts.data);
    const nf::BestKReport report =
        nf::select_best_k(records, opts.runs, *opts.seed, opts.train_fraction);
    const fs::path path = out_dir / "bestk.json";
    write_json_file(path, nf::best_k_report_to_json(report));

    json config;
    config["data"] = abs_string(opts.data);
    config["runs"] = opts.runs;
    config["train_fraction"] = opts.train_fraction;
    config["seed"] = *opts.seed;
    write_manifest(out_dir, "bestk", config, opts.seed, {path}, timer.seconds());

    const std::size_t chosen = static_cast<std::size_t>(
        std::find(report.k_grid.begin(), report.k_grid.end(), report.chosen_k) -
        report.k_grid.begin());
    std::cout << "bestk: chose k=" << report.chosen_k << " (mean validation accuracy "
              << nf::format_double(report.mean_accuracy[chosen]) << " over " << opts.runs
              << " runs)\n";
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nodulefuse: lung-nodule malignancy-suspicion pipeline"};
    app.require_subcommand(1);

    // --- synth ---
    SynthOptions synth_opts;
    std::uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic nodule container");
    synth->add_option("--out", synth_opts.out, "Output container directory");
    synth->add_option("--config", synth_opts.config_path, "Generator config JSON")
        ->check(CLI::ExistingFile);
    synth->add_option("--from-manifest", synth_opts.manifest_path,
                      "Replay the run recorded in a run_manifest.json")
        ->check(CLI::ExistingFile);
    synth->add_option("--count", synth_opts.count, "Number of records (overrides config)");
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Generator seed (overrides config)");

    // --- ingest ---
    IngestOptions ingest_opts;
    auto* ingest = app.add_subcommand("ingest", "Build a container from annotation XML");
    auto* xml_opt = ingest->add_option("--xml-dir", ingest_opts.xml_dir,
                                       "Directory scanned recursively for .xml files");
    ingest->add_option("--in", ingest_opts.container_in, "Existing container to filter")
        ->excludes(xml_opt);
    ingest->add_option("--out", ingest_opts.out, "Output container directory");
    ingest->add_option("--exclude", ingest_opts.exclude_file,
                       "File with one patient id per line to drop")
        ->check(CLI::ExistingFile);
    ingest->add_option("--exclude-id", ingest_opts.exclude_ids, "Patient id to drop (repeatable)");
    ingest->add_option("--dims", ingest_opts.dims, "Volume box nx ny nz")->expected(3);
    ingest->add_option("--spacing-xy", ingest_opts.spacing_xy, "In-plane pixel spacing in mm");
    ingest->add_option("--from-manifest", ingest_opts.manifest_path,
                       "Replay the run recorded in a run_manifest.json")
        ->check(CLI::ExistingFile);

    // --- experiment ---
    ExperimentOptions exp_opts;
    struct {
        fs::path data, config_path, manifest_path, out_dir, artifact_dir, rf_params_path;
        int id = 1, iterations = 0, knn_k = nf::kDefaultPseudoLabelK, jobs = 1;
        int roc_grid_points = 101, cnn_batch = 16, cnn_epochs = 10;
        std::string mode = "fully", arch = "default";
        double train_fraction = 0.8, alpha = 0.05, cnn_lr = 1e-3;
        bool stratified = false, normalize = true;
        std::uint64_t seed = 0;
    } ef; // raw experiment flag values; applied only when the flag was passed
    auto* experiment = app.add_subcommand("experiment", "Run one of the six experiments");
    auto* e_data = experiment->add_option("--data", ef.data, "Input container directory");
    auto* e_id = experiment->add_option("--id", ef.id, "Experiment id 1..6")->check(CLI::Range(1, 6));
    auto* e_mode = experiment->add_option("--mode", ef.mode, "fully | semi | both")
                       ->check(CLI::IsMember({"fully", "semi", "both"}));
    auto* e_iters =
        experiment->add_option("--iterations", ef.iterations, "Shuffle-split iterations (0 = default)");
    auto* e_frac = experiment->add_option("--train-fraction", ef.train_fraction, "Train fraction");
    auto* e_strat = experiment->add_flag("--stratified,!--no-stratified", ef.stratified,
                                         "Stratify splits by malignancy group");
    auto* e_knn = experiment->add_option("--knn-k", ef.knn_k, "Pseudo-label neighbour count");
    auto* e_seed = experiment->add_option("--seed", ef.seed, "Master seed (required)");
    auto* e_alpha = experiment->add_option("--alpha", ef.alpha, "Significance level");
    auto* e_grid = experiment->add_option("--roc-grid-points", ef.roc_grid_points,
                                          "Mean-ROC FPR grid size");
    auto* e_artifacts = experiment->add_option("--artifact-dir", ef.artifact_dir,
                                               "Checkpoint/split cache (env NODULEFUSE_CACHE_DIR)");
    auto* e_jobs = experiment->add_option("--jobs", ef.jobs, "Worker threads over iterations")
                       ->check(CLI::PositiveNumber);
    auto* e_norm = experiment->add_flag("--normalize,!--no-normalize", ef.normalize,
                                        "Min-max normalize intensities (default on)");
    auto* e_arch = experiment->add_option("--arch", ef.arch, "CNN architecture: default | small")
                       ->check(CLI::IsMember({"default", "small"}));
    auto* e_clr = experiment->add_option("--cnn-lr", ef.cnn_lr, "CNN learning rate");
    auto* e_cbatch = experiment->add_option("--cnn-batch", ef.cnn_batch, "CNN batch size");
    auto* e_cepochs = experiment->add_option("--cnn-epochs", ef.cnn_epochs, "CNN epochs");
    auto* e_rf = experiment->add_option("--rf-params", ef.rf_params_path,
                                        "JSON file overriding the forest hyperparameters")
                     ->check(CLI::ExistingFile);
    experiment->add_option("--config", ef.config_path, "Config JSON (flags win)")
        ->check(CLI::ExistingFile);
    experiment->add_option("--from-manifest", ef.manifest_path,
                           "Replay the run recorded in a run_manifest.json")
        ->check(CLI::ExistingFile);
    experiment->add_option("--out-dir", ef.out_dir, "Report directory")->required();

    // --- tune ---
    TuneOptions tune_opts;
    struct {
        fs::path data, config_path, manifest_path, out_dir, artifact_dir, space_path;
        int id = 1, folds = 3, iterations = 100;
        std::string mode = "fully";
        std::uint64_t seed = 0;
    } tf;
    auto* tune = app.add_subcommand("tune", "Random-search forest hyperparameters with k-fold CV");
    auto* t_data = tune->add_option("--data", tf.data, "Input container directory");
    auto* t_id = tune->add_option("--id", tf.id, "Experiment id 1..6")->check(CLI::Range(1, 6));
    auto* t_mode = tune->add_option("--mode", tf.mode, "fully | semi")
                       ->check(CLI::IsMember({"fully", "semi"}));
    auto* t_folds = tune->add_option("--folds", tf.folds, "Cross-validation folds");
    auto* t_iters = tune->add_option("--iterations", tf.iterations, "Random-search samples");
    auto* t_seed = tune->add_option("--seed", tf.seed, "Master seed (required)");
    auto* t_artifacts = tune->add_option("--artifact-dir", tf.artifact_dir,
                                         "Checkpoint/split cache (env NODULEFUSE_CACHE_DIR)");
    auto* t_space = tune->add_option("--space", tf.space_path, "Search-space JSON")
                        ->check(CLI::ExistingFile);
    tune->add_option("--config", tf.config_path, "Config JSON (flags win)")->check(CLI::ExistingFile);
    tune->add_option("--from-manifest", tf.manifest_path,
                     "Replay the run recorded in a run_manifest.json")
        ->check(CLI::ExistingFile);
    tune->add_option("--out-dir", tf.out_dir, "Report directory")->required();

    // --- bestk ---
    BestKOptions bestk_opts;
    struct {
        fs::path data, config_path, manifest_path, out_dir;
        int runs = 10;
        double train_fraction = 0.8;
        std::uint64_t seed = 0;
    } bf;
    auto* bestk = app.add_subcommand("bestk", "Select the pseudo-labeling neighbour count");
    auto* b_data = bestk->add_option("--data", bf.data, "Input container directory");
    auto* b_runs = bestk->add_option("--runs", bf.runs, "Validation runs")->check(CLI::PositiveNumber);
    auto* b_frac = bestk->add_option("--train-fraction", bf.train_fraction, "Train fraction");
    auto* b_seed = bestk->add_option("--seed", bf.seed, "Master seed (required)");
    bestk->add_option("--config", bf.config_path, "Config JSON (flags win)")->check(CLI::ExistingFile);
    bestk->add_option("--from-manifest", bf.manifest_path,
                      "Replay the run recorded in a run_manifest.json")
        ->check(CLI::ExistingFile);
    bestk->add_option("--out-dir", bf.out_dir, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            if (synth_seed_opt->count() > 0) synth_opts.seed = synth_seed;
            return cmd_synth(synth_opts);
        }
        if (ingest->parsed()) return cmd_ingest(ingest_opts);
        if (experiment->parsed()) {
            if (!ef.manifest_path.empty())
                apply_experiment_json(exp_opts, config_from_manifest(ef.manifest_path, "experiment"));
            if (!ef.config_path.empty())
                apply_experiment_json(exp_opts, load_json_file(ef.config_path));
            if (e_data->count()) exp_opts.data = ef.data;
            if (e_id->count()) exp_opts.id = ef.id;
            if (e_mode->count()) exp_opts.mode = ef.mode;
            if (e_iters->count()) exp_opts.iterations = ef.iterations;
            if (e_frac->count()) exp_opts.train_fraction = ef.train_fraction;
            if (e_strat->count()) exp_opts.stratified = ef.stratified;
            if (e_knn->count()) exp_opts.knn_k = ef.knn_k;
            if (e_seed->count()) exp_opts.seed = ef.seed;
            if (e_alpha->count()) exp_opts.alpha = ef.alpha;
            if (e_grid->count()) exp_opts.roc_grid_points = ef.roc_grid_points;
            if (e_artifacts->count()) exp_opts.artifact_dir = ef.artifact_dir;
            if (e_jobs->count()) exp_opts.jobs = ef.jobs;
            if (e_norm->count()) exp_opts.normalize = ef.normalize;
            if (e_arch->count()) {
                exp_opts.arch = ef.arch;
                exp_opts.arch_custom.reset();
            }
            if (e_clr->count()) exp_opts.cnn_learning_rate = ef.cnn_lr;
            if (e_cbatch->count()) exp_opts.cnn_batch = ef.cnn_batch;
            if (e_cepochs->count()) exp_opts.cnn_epochs = ef.cnn_epochs;
            if (e_rf->count())
                exp_opts.rf_override = nf::rf_params_from_json(load_json_file(ef.rf_params_path));
            if (exp_opts.data.empty()) throw std::invalid_argument("--data is required");
            return cmd_experiment(std::move(exp_opts), ef.out_dir);
        }
        if (tune->parsed()) {
            if (!tf.manifest_path.empty())
                apply_tune_json(tune_opts, config_from_manifest(tf.manifest_path, "tune"));
            if (!tf.config_path.empty()) apply_tune_json(tune_opts, load_json_file(tf.config_path));
            if (t_data->count()) tune_opts.data = tf.data;
            if (t_id->count()) tune_opts.id = tf.id;
            if (t_mode->count()) tune_opts.mode = tf.mode;
            if (t_folds->count()) tune_opts.folds = tf.folds;
            if (t_iters->count()) tune_opts.iterations = tf.iterations;
            if (t_seed->count()) tune_opts.seed = tf.seed;
            if (t_artifacts->count()) tune_opts.artifact_dir = tf.artifact_dir;
            if (t_space->count()) tune_opts.space = search_space_from_json(load_json_file(tf.space_path));
            if (tune_opts.data.empty()) throw std::invalid_argument("--data is required");
            return cmd_tune(std::move(tune_opts), tf.out_dir);
        }
        if (bestk->parsed()) {
            if (!bf.manifest_path.empty())
                apply_bestk_json(bestk_opts, config_from_manifest(bf.manifest_path, "bestk"));
            if (!bf.config_path.empty()) apply_bestk_json(bestk_opts, load_json_file(bf.config_path));
            if (b_data->count()) bestk_opts.data = bf.data;
            if (b_runs->count()) bestk_opts.runs = bf.runs;
            if (b_frac->count()) bestk_opts.train_fraction = bf.train_fraction;
            if (b_seed->count()) bestk_opts.seed = bf.seed;
            if (bestk_opts.data.empty()) throw std::invalid_argument("--data is required");
            return cmd_bestk(bestk_opts, bf.out_dir);
        }
    } catch (const nf::PrereqError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const nf::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
