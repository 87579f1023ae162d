#include "nodulefuse/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "nodulefuse/errors.hpp"
#include "nodulefuse/fusion.hpp"
#include "nodulefuse/radiomics.hpp"
#include "nodulefuse/rng.hpp"

namespace nf {

const char* experiment_mode_name(ExperimentMode mode) {
    return mode == ExperimentMode::Fully ? "fully" : "semi";
}

RandomForestParams default_rf_params(int experiment_id, ExperimentMode mode) {
    // Published tuning tables, one row per experiment and training
    // distribution: {n_estimators, max_depth, min_samples_leaf,
    // min_samples_split}. Experiment 6 (biomarkers + radiomics, no images)
    // has no published row and reuses the experiment-1 values.
    static constexpr int kFully[5][4] = {
        {1000, 10, 1, 5}, {200, 10, 4, 2}, {800, 10, 2, 5}, {400, 100, 4, 10}, {300, 110, 2, 2}};
    static constexpr int kSemi[5][4] = {
        {200, 100, 1, 5}, {200, 10, 4, 2}, {600, 10, 2, 5}, {200, 10, 4, 2}, {500, 110, 1, 2}};
    if (experiment_id < 1 || experiment_id > 6)
        throw std::invalid_argument("experiment id must be in 1..6");
    const int row = experiment_id == 6 ? 0 : experiment_id - 1;
    const int(*table)[4] = mode == ExperimentMode::Fully ? kFully : kSemi;
    RandomForestParams params;
    params.n_estimators = table[row][0];
    params.max_depth = table[row][1];
    params.min_samples_leaf = table[row][2];
    params.min_samples_split = table[row][3];
    params.bootstrap = true;
    return params;
}

int default_iterations(int experiment_id) {
    if (experiment_id < 1 || experiment_id > 6)
        throw std::invalid_argument("experiment id must be in 1..6");
    return (experiment_id == 1 || experiment_id == 6) ? 1000 : 30;
}

Eigen::VectorXd label_vector(const LabeledDataset& ds) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.entries.size()));
    for (std::size_t i = 0; i < ds.entries.size(); ++i)
        y[static_cast<Eigen::Index>(i)] = ds.entries[i].label;
    return y;
}

Eigen::MatrixXd biomarker_matrix(const std::vector<NoduleRecord>& records, const LabeledDataset& ds) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ds.entries.size()), kBiomarkerCount);
    for (std::size_t i = 0; i < ds.entries.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) =
            records[static_cast<std::size_t>(ds.entries[i].record_index)].biomarkers.to_eigen().transpose();
    return X;
}

Eigen::MatrixXd biomarker_radiomic_matrix(const std::vector<NoduleRecord>& records,
                                          const LabeledDataset& ds) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ds.entries.size()), kBiomarkerCount + 3);
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const auto& rec = records[static_cast<std::size_t>(ds.entries[i].record_index)];
        X.row(static_cast<Eigen::Index>(i)).head(kBiomarkerCount) = rec.biomarkers.to_eigen().transpose();
        X.row(static_cast<Eigen::Index>(i)).tail(3) = extract_radiomics(rec).to_eigen().transpose();
    }
    return X;
}

namespace {

namespace fs = std::filesystem;

struct SeriesAccumulator {
    std::string model;
    std::vector<double> aucs;
    std::vector<RocCurve> curves;
};

/// One iteration's model-name -> test ROC pairs, in a fixed per-experiment
/// model order so aggregation is independent of scheduling.
using IterationOutput = std::vector<std::pair<std::string, RocCurve>>;

std::string iter_dir_name(int iteration) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "iter_%04d", iteration);
    return buf;
}

fs::path exp2_iter_dir(const fs::path& artifact_dir, ExperimentMode mode, int iteration) {
    return artifact_dir / "exp2" / experiment_mode_name(mode) / iter_dir_name(iteration);
}

struct IterationSplit {
    LabeledDataset train;
    LabeledDataset test;
};

IterationSplit make_iteration_split(const std::vector<NoduleRecord>& records,
                                    const ExperimentConfig& cfg, int iteration) {
    SplitSpec spec;
    spec.train_fraction = cfg.train_fraction;
    spec.stratified = cfg.stratified;
    spec.seed = derive_seed(cfg.master_seed, "split", static_cast<std::uint64_t>(iteration));
    const auto [train_idx, test_idx] = split_indices(records, spec);

    IterationSplit split;
    // The test population is identical in both modes: R3 never enters it.
    split.test = strip_r3_from_test(records, test_idx);
    split.train = cfg.mode == ExperimentMode::Fully
                      ? label_distribution_a(records, train_idx, SplitRole::Train)
                      : pseudo_label_r3(records, train_idx, cfg.knn_k);
    return split;
}

RandomForestParams effective_rf_params(const ExperimentConfig& cfg) {
    return cfg.rf_override ? *cfg.rf_override : default_rf_params(cfg.id, cfg.mode);
}

Eigen::MatrixXd deep_feature_matrix(Network<float>& net, const std::vector<NoduleRecord>& records,
                                    const LabeledDataset& ds) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(ds.entries.size()), net.feature_dim());
    for (std::size_t i = 0; i < ds.entries.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) =
            net.extract_features(records[static_cast<std::size_t>(ds.entries[i].record_index)].volume)
                .transpose();
    return X;
}

Eigen::MatrixXd fused_matrix(Network<float>& net, const std::vector<NoduleRecord>& records,
                             const std::vector<RadiomicVector>& radiomics, const LabeledDataset& ds,
                             int experiment_id) {
    Eigen::MatrixXd X;
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const auto idx = static_cast<std::size_t>(ds.entries[i].record_index);
        const auto& rec = records[idx];
        const Eigen::VectorXd image = net.extract_features(rec.volume);
        std::optional<BiomarkerVector> bio;
        std::optional<RadiomicVector> rad;
        if (experiment_id == 3 || experiment_id == 5) bio = rec.biomarkers;
        if (experiment_id == 4 || experiment_id == 5) rad = radiomics[idx];
        const FusedVector fused = fuse(image, bio, rad);
        if (X.size() == 0) X.resize(static_cast<Eigen::Index>(ds.entries.size()), fused.values.size());
        X.row(static_cast<Eigen::Index>(i)) = fused.values.transpose();
    }
    return X;
}

std::vector<const VoxelGrid*> volume_pointers(const std::vector<NoduleRecord>& records,
                                              const LabeledDataset& ds) {
    std::vector<const VoxelGrid*> grids;
    grids.reserve(ds.entries.size());
    for (const auto& e : ds.entries)
        grids.push_back(&records[static_cast<std::size_t>(e.record_index)].volume);
    return grids;
}

const char* fused_model_name(int experiment_id) {
    switch (experiment_id) {
        case 3: return "cnn_bio_rf";
        case 4: return "cnn_rad_rf";
        case 5: return "cnn_bio_rad_rf";
        default: throw std::invalid_argument("not a fused experiment id");
    }
}

nlohmann::json config_snapshot_json(const ExperimentConfig& cfg, int iterations,
                                    const RandomForestParams& rf) {
    nlohmann::json j;
    j["id"] = cfg.id;
    j["mode"] = experiment_mode_name(cfg.mode);
    j["iterations"] = iterations;
    j["train_fraction"] = cfg.train_fraction;
    j["stratified"] = cfg.stratified;
    j["knn_k"] = cfg.knn_k;
    j["master_seed"] = cfg.master_seed;
    j["roc_grid_points"] = cfg.roc_grid_points;
    j["rf"] = rf_params_to_json(rf);
    if (cfg.id == 1 || cfg.id == 6) {
        j["lr"] = {{"l2_strength", cfg.lr_params.l2_strength},
                   {"learning_rate", cfg.lr_params.learning_rate},
                   {"max_epochs", cfg.lr_params.max_epochs},
                   {"tolerance", cfg.lr_params.tolerance}};
    }
    if (cfg.id == 2) {
        j["cnn"] = {{"architecture", architecture_to_json(cfg.cnn_arch)},
                    {"learning_rate", cfg.cnn_train.learning_rate},
                    {"batch_size", cfg.cnn_train.batch_size},
                    {"epochs", cfg.cnn_train.epochs}};
    }
    if (cfg.id >= 2 && cfg.id <= 5) j["artifact_dir"] = cfg.artifact_dir.string();
    return j;
}

} // namespace

nlohmann::json labeled_dataset_to_json(const LabeledDataset& ds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : ds.entries) {
        nlohmann::json row;
        row["index"] = e.record_index;
        row["label"] = e.label;
        row["pseudo"] = e.provenance == Provenance::Pseudo;
        arr.push_back(std::move(row));
    }
    return arr;
}

LabeledDataset labeled_dataset_from_json(const nlohmann::json& entries, Distribution distribution,
                                         SplitRole role, std::size_t record_count) {
    LabeledDataset ds;
    ds.distribution = distribution;
    ds.role = role;
    for (const auto& row : entries) {
        LabeledEntry e;
        e.record_index = row.at("index").get<int>();
        e.label = row.at("label").get<int>();
        e.provenance = row.at("pseudo").get<bool>() ? Provenance::Pseudo : Provenance::Annotated;
        if (e.record_index < 0 || static_cast<std::size_t>(e.record_index) >= record_count)
            throw DataError("persisted split references record " + std::to_string(e.record_index) +
                            " but the container has " + std::to_string(record_count) + " records");
        ds.entries.push_back(e);
    }
    return ds;
}

Eigen::MatrixXd experiment_feature_matrix(Network<float>& net,
                                          const std::vector<NoduleRecord>& records,
                                          const LabeledDataset& ds, int experiment_id) {
    if (experiment_id == 2) return deep_feature_matrix(net, records, ds);
    if (experiment_id < 3 || experiment_id > 5)
        throw std::invalid_argument("feature matrix only defined for the image experiments (2-5)");
    std::vector<RadiomicVector> radiomics;
    if (experiment_id == 4 || experiment_id == 5) {
        radiomics.reserve(records.size());
        for (const auto& rec : records) radiomics.push_back(extract_radiomics(rec));
    }
    return fused_matrix(net, records, radiomics, ds, experiment_id);
}

ExperimentResult run_experiment(const std::vector<NoduleRecord>& records, const ExperimentConfig& cfg) {
    if (cfg.id < 1 || cfg.id > 6) throw std::invalid_argument("experiment id must be in 1..6");
    if (records.size() < 2) throw std::invalid_argument("need at least 2 records");
    if (cfg.id >= 2 && cfg.id <= 5 && cfg.artifact_dir.empty())
        throw std::invalid_argument("experiments 2-5 require an artifact directory");
    if (cfg.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    const int iterations = cfg.iterations > 0 ? cfg.iterations : default_iterations(cfg.id);
    const RandomForestParams rf_base = effective_rf_params(cfg);

    std::vector<RadiomicVector> radiomics;
    if (cfg.id == 4 || cfg.id == 5 || cfg.id == 6) {
        radiomics.reserve(records.size());
        for (const auto& rec : records) radiomics.push_back(extract_radiomics(rec));
    }

    const auto run_iteration = [&](int iter) -> IterationOutput {
        IterationOutput out;
        const auto eval = [&](const char* model, const Eigen::VectorXd& scores,
                              const Eigen::VectorXd& labels) {
            out.emplace_back(model, roc_auc(scores, labels));
        };
        RandomForestParams rf_params = rf_base;
        rf_params.seed = derive_seed(cfg.master_seed, "rf", static_cast<std::uint64_t>(iter));

        if (cfg.id == 1 || cfg.id == 6) {
            const IterationSplit split = make_iteration_split(records, cfg, iter);
            const Eigen::MatrixXd Xtr = cfg.id == 1 ? biomarker_matrix(records, split.train)
                                                    : biomarker_radiomic_matrix(records, split.train);
            const Eigen::MatrixXd Xte = cfg.id == 1 ? biomarker_matrix(records, split.test)
                                                    : biomarker_radiomic_matrix(records, split.test);
            const Eigen::VectorXd ytr = label_vector(split.train);
            const Eigen::VectorXd yte = label_vector(split.test);

            const LogisticRegressionModel lr = lr_train(Xtr, ytr, cfg.lr_params);
            eval("lr", lr_predict_proba(lr, Xte), yte);
            const RandomForestModel rf = rf_train(Xtr, ytr, rf_params);
            eval("rf", rf_predict_proba(rf, Xte), yte);
        } else if (cfg.id == 2) {
            const IterationSplit split = make_iteration_split(records, cfg, iter);
            const Eigen::VectorXd ytr = label_vector(split.train);
            const Eigen::VectorXd yte = label_vector(split.test);
            const auto train_grids = volume_pointers(records, split.train);
            const auto test_grids = volume_pointers(records, split.test);

            Network<float> net(cfg.cnn_arch, derive_seed(cfg.master_seed, "cnn",
                                                         static_cast<std::uint64_t>(iter)));
            TrainConfig tc = cfg.cnn_train;
            tc.seed = derive_seed(cfg.master_seed, "cnn-shuffle", static_cast<std::uint64_t>(iter));
            net.train(train_grids, ytr, tc);

            const fs::path dir = exp2_iter_dir(cfg.artifact_dir, cfg.mode, iter);
            fs::create_directories(dir);
            save_checkpoint(net, dir / "model.nfc");
            nlohmann::json split_json;
            split_json["iteration"] = iter;
            split_json["mode"] = experiment_mode_name(cfg.mode);
            split_json["train"] = labeled_dataset_to_json(split.train);
            split_json["test"] = labeled_dataset_to_json(split.test);
            std::ofstream out(dir / "split.json");
            out << split_json.dump(2) << '\n';
            if (!out) throw DataError("failed writing " + (dir / "split.json").string());

            eval("cnn", net.predict_proba(test_grids), yte);
            const Eigen::MatrixXd Xtr = deep_feature_matrix(net, records, split.train);
            const Eigen::MatrixXd Xte = deep_feature_matrix(net, records, split.test);
            const RandomForestModel rf = rf_train(Xtr, ytr, rf_params);
            eval("cnn_rf", rf_predict_proba(rf, Xte), yte);
        } else { // 3, 4, 5
            const fs::path dir = exp2_iter_dir(cfg.artifact_dir, cfg.mode, iter);
            const fs::path model_path = dir / "model.nfc";
            const fs::path split_path = dir / "split.json";
            if (!fs::exists(model_path) || !fs::exists(split_path))
                throw PrereqError("experiment " + std::to_string(cfg.id) + " (" +
                                  experiment_mode_name(cfg.mode) + ") iteration " +
                                  std::to_string(iter) + ": no persisted model under " + dir.string() +
                                  "; run experiment 2 first");
            Network<float> net = load_checkpoint(model_path);
            std::ifstream in(split_path);
            nlohmann::json split_json;
            try {
                in >> split_json;
            } catch (const nlohmann::json::exception& e) {
                throw DataError("cannot parse " + split_path.string() + ": " + e.what());
            }
            const Distribution dist =
                cfg.mode == ExperimentMode::Fully ? Distribution::A : Distribution::B;
            const LabeledDataset train = labeled_dataset_from_json(split_json.at("train"), dist,
                                                           SplitRole::Train, records.size());
            const LabeledDataset test = labeled_dataset_from_json(split_json.at("test"), Distribution::A,
                                                          SplitRole::Test, records.size());

            const Eigen::MatrixXd Xtr = fused_matrix(net, records, radiomics, train, cfg.id);
            const Eigen::MatrixXd Xte = fused_matrix(net, records, radiomics, test, cfg.id);
            const RandomForestModel rf = rf_train(Xtr, label_vector(train), rf_params);
            eval(fused_model_name(cfg.id), rf_predict_proba(rf, Xte), label_vector(test));
        }
        return out;
    };

    std::vector<IterationOutput> slots(static_cast<std::size_t>(iterations));
    const int jobs = std::min(cfg.jobs, iterations);
    if (jobs <= 1) {
        for (int iter = 0; iter < iterations; ++iter)
            slots[static_cast<std::size_t>(iter)] = run_iteration(iter);
    } else {
        std::atomic<int> next{0};
        std::atomic<bool> failed{false};
        std::mutex error_mutex;
        std::exception_ptr error;
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                while (!failed.load(std::memory_order_relaxed)) {
                    const int iter = next.fetch_add(1);
                    if (iter >= iterations) break;
                    try {
                        slots[static_cast<std::size_t>(iter)] = run_iteration(iter);
                    } catch (...) {
                        const std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                        failed.store(true);
                        break;
                    }
                }
            });
        for (auto& worker : pool) worker.join();
        if (error) std::rethrow_exception(error);
    }

    // Merge in iteration order: identical output regardless of jobs.
    std::vector<SeriesAccumulator> series;
    for (auto& slot : slots)
        for (auto& [model, curve] : slot) {
            auto it = std::find_if(series.begin(), series.end(),
                                   [&](const SeriesAccumulator& s) { return s.model == model; });
            if (it == series.end()) {
                series.push_back(SeriesAccumulator{model, {}, {}});
                it = std::prev(series.end());
            }
            it->aucs.push_back(curve.auc);
            it->curves.push_back(std::move(curve));
        }

    ExperimentResult result;
    result.id = cfg.id;
    result.mode = cfg.mode;
    result.iterations = iterations;
    result.roc_grid_points = cfg.roc_grid_points;
    result.config_snapshot = config_snapshot_json(cfg, iterations, rf_base);
    for (auto& acc : series) {
        ModelSeries ms;
        ms.model = acc.model;
        ms.aucs = std::move(acc.aucs);
        ms.mean_auc = std::accumulate(ms.aucs.begin(), ms.aucs.end(), 0.0) /
                      static_cast<double>(ms.aucs.size());
        ms.mean_tpr = mean_roc_on_grid(acc.curves, cfg.roc_grid_points);
        result.models.push_back(std::move(ms));
    }
    return result;
}

nlohmann::json experiment_result_to_json(const ExperimentResult& result) {
    nlohmann::json j;
    j["experiment"] = result.id;
    j["mode"] = experiment_mode_name(result.mode);
    j["iterations"] = result.iterations;
    j["config"] = result.config_snapshot;
    auto& models = j["models"] = nlohmann::json::array();
    for (const auto& ms : result.models) {
        nlohmann::json m;
        m["model"] = ms.model;
        m["aucs"] = ms.aucs;
        m["mean_auc"] = ms.mean_auc;
        nlohmann::json fpr = nlohmann::json::array();
        for (std::size_t g = 0; g < ms.mean_tpr.size(); ++g)
            fpr.push_back(static_cast<double>(g) / static_cast<double>(ms.mean_tpr.size() - 1));
        m["mean_roc"] = {{"fpr", std::move(fpr)}, {"tpr", ms.mean_tpr}};
        models.push_back(std::move(m));
    }
    return j;
}

std::string auc_csv(const std::vector<ExperimentResult>& results) {
    std::string csv = "experiment,mode,model,iteration,auc\n";
    for (const auto& result : results)
        for (const auto& ms : result.models)
            for (std::size_t i = 0; i < ms.aucs.size(); ++i) {
                csv += std::to_string(result.id);
                csv += ',';
                csv += experiment_mode_name(result.mode);
                csv += ',';
                csv += ms.model;
                csv += ',';
                csv += std::to_string(i);
                csv += ',';
                csv += format_double(ms.aucs[i]);
                csv += '\n';
            }
    return csv;
}

std::string roc_csv(const std::vector<ExperimentResult>& results) {
    std::string csv = "experiment,mode,model,fpr,mean_tpr\n";
    for (const auto& result : results)
        for (const auto& ms : result.models)
            for (std::size_t g = 0; g < ms.mean_tpr.size(); ++g) {
                csv += std::to_string(result.id);
                csv += ',';
                csv += experiment_mode_name(result.mode);
                csv += ',';
                csv += ms.model;
                csv += ',';
                csv += format_double(static_cast<double>(g) /
                                     static_cast<double>(ms.mean_tpr.size() - 1));
                csv += ',';
                csv += format_double(ms.mean_tpr[g]);
                csv += '\n';
            }
    return csv;
}

ComparisonTable compare(const std::vector<ExperimentResult>& results, double alpha) {
    struct Series {
        std::string name;
        const std::vector<double>* aucs;
        double mean;
    };
    std::vector<Series> series;
    for (const auto& result : results)
        for (const auto& ms : result.models)
            series.push_back({"exp" + std::to_string(result.id) + "_" +
                                  experiment_mode_name(result.mode) + "_" + ms.model,
                              &ms.aucs, ms.mean_auc});
    if (series.size() < 2) throw std::invalid_argument("compare needs at least 2 model series");

    std::sort(series.begin(), series.end(), [](const Series& a, const Series& b) {
        return a.mean != b.mean ? a.mean > b.mean : a.name < b.name;
    });

    ComparisonTable table;
    for (const auto& s : series)
        table.ranking.push_back({s.name, s.mean, static_cast<int>(s.aucs->size())});

    std::map<std::pair<std::string, std::string>, bool> significant;
    for (std::size_t i = 0; i < series.size(); ++i) {
        for (std::size_t j = i + 1; j < series.size(); ++j) {
            ComparisonTable::Pair pair;
            pair.a = series[i].name;
            pair.b = series[j].name;
            pair.equal_sizes = series[i].aucs->size() == series[j].aucs->size();
            if (!pair.equal_sizes)
                table.warnings.push_back("unpaired comparison between " + pair.a + " (n=" +
                                         std::to_string(series[i].aucs->size()) + ") and " + pair.b +
                                         " (n=" + std::to_string(series[j].aucs->size()) + ")");
            try {
                pair.test = students_t_test(*series[i].aucs, *series[j].aucs, alpha);
            } catch (const std::invalid_argument&) {
                // Zero pooled variance: identical constants tie; different
                // constants separate with certainty.
                pair.test.alpha = alpha;
                pair.test.degrees_of_freedom =
                    static_cast<int>(series[i].aucs->size() + series[j].aucs->size()) - 2;
                const bool equal_means = series[i].mean == series[j].mean;
                pair.test.t_statistic = 0.0;
                pair.test.p_value = equal_means ? 1.0 : 0.0;
                pair.test.significant = !equal_means;
                table.warnings.push_back("zero-variance comparison between " + pair.a + " and " +
                                         pair.b + "; decided by means");
            }
            significant[{pair.a, pair.b}] = pair.test.significant;
            table.tests.push_back(std::move(pair));
        }
    }

    // Greedy grouping down the ranking: a series joins the current group
    // when it is not significantly different from the group's head.
    std::vector<std::string> group{series[0].name};
    std::string head = series[0].name;
    for (std::size_t i = 1; i < series.size(); ++i) {
        const auto key = std::make_pair(head, series[i].name);
        const bool sig = significant.count(key) ? significant.at(key)
                                                : significant.at({series[i].name, head});
        if (sig) {
            table.tied_groups.push_back(group);
            group = {series[i].name};
            head = series[i].name;
        } else {
            group.push_back(series[i].name);
        }
    }
    table.tied_groups.push_back(group);
    return table;
}

nlohmann::json comparison_to_json(const ComparisonTable& table) {
    nlohmann::json j;
    auto& ranking = j["ranking"] = nlohmann::json::array();
    for (const auto& e : table.ranking)
        ranking.push_back({{"name", e.name}, {"mean_auc", e.mean_auc}, {"iterations", e.iterations}});
    auto& tests = j["pairwise_tests"] = nlohmann::json::array();
    for (const auto& p : table.tests) {
        tests.push_back({{"a", p.a},
                         {"b", p.b},
                         {"t_statistic", p.test.t_statistic},
                         {"degrees_of_freedom", p.test.degrees_of_freedom},
                         {"p_value", p.test.p_value},
                         {"significant", p.test.significant},
                         {"equal_sizes", p.equal_sizes}});
    }
    j["tied_groups"] = table.tied_groups;
    j["warnings"] = table.warnings;
    return j;
}

TuneReport random_search_tune(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::VectorXd>& labels,
                              const SearchSpace& space, int folds, int iterations,
                              std::uint64_t seed) {
    const auto n = static_cast<int>(features.rows());
    if (labels.size() != n) throw std::invalid_argument("features and labels disagree on count");
    if (folds < 2) throw std::invalid_argument("folds must be >= 2");
    if (n < folds) throw std::invalid_argument("fewer samples than folds");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (space.max_features != "sqrt")
        throw std::invalid_argument("unsupported max_features rule: " + space.max_features);
    const auto check_range = [](const std::array<int, 2>& r, int lo_min, const char* name) {
        if (r[0] < lo_min || r[1] < r[0])
            throw std::invalid_argument(std::string("invalid range for ") + name);
    };
    check_range(space.n_estimators, 1, "n_estimators");
    check_range(space.max_depth, 1, "max_depth");
    check_range(space.min_samples_leaf, 1, "min_samples_leaf");
    check_range(space.min_samples_split, 2, "min_samples_split");
    if (space.bootstrap.empty()) throw std::invalid_argument("bootstrap choices must be nonempty");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng fold_rng(derive_seed(seed, "folds"));
    std::shuffle(order.begin(), order.end(), fold_rng);

    std::vector<std::vector<int>> fold_members(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) {
        const int lo = f * n / folds, hi = (f + 1) * n / folds;
        fold_members[static_cast<std::size_t>(f)].assign(order.begin() + lo, order.begin() + hi);
    }
    for (int f = 0; f < folds; ++f) {
        const auto& val = fold_members[static_cast<std::size_t>(f)];
        int val_pos = 0, train_pos = 0, train_n = 0;
        for (int idx : val) val_pos += labels[idx] > 0.5 ? 1 : 0;
        for (int g = 0; g < folds; ++g) {
            if (g == f) continue;
            for (int idx : fold_members[static_cast<std::size_t>(g)]) {
                train_pos += labels[idx] > 0.5 ? 1 : 0;
                ++train_n;
            }
        }
        const auto val_n = static_cast<int>(val.size());
        if (val.empty() || val_pos == 0 || val_pos == val_n || train_pos == 0 || train_pos == train_n)
            throw std::invalid_argument("fold degeneracy: fold " + std::to_string(f) +
                                        " lacks both classes in train or validation");
    }

    TuneReport report;
    report.best_cv_auc = -1.0;
    for (int c = 0; c < iterations; ++c) {
        Rng rng(derive_seed(seed, "candidate", static_cast<std::uint64_t>(c)));
        RandomForestParams params;
        params.n_estimators =
            std::uniform_int_distribution<int>(space.n_estimators[0], space.n_estimators[1])(rng);
        params.max_depth = std::uniform_int_distribution<int>(space.max_depth[0], space.max_depth[1])(rng);
        params.min_samples_leaf = std::uniform_int_distribution<int>(space.min_samples_leaf[0],
                                                                     space.min_samples_leaf[1])(rng);
        params.min_samples_split = std::uniform_int_distribution<int>(space.min_samples_split[0],
                                                                      space.min_samples_split[1])(rng);
        params.bootstrap = space.bootstrap[std::uniform_int_distribution<std::size_t>(
            0, space.bootstrap.size() - 1)(rng)];
        params.seed = derive_seed(seed, "rf", static_cast<std::uint64_t>(c));

        double cv_sum = 0.0;
        for (int f = 0; f < folds; ++f) {
            const auto& val = fold_members[static_cast<std::size_t>(f)];
            std::vector<int> train;
            for (int g = 0; g < folds; ++g)
                if (g != f)
                    train.insert(train.end(), fold_members[static_cast<std::size_t>(g)].begin(),
                                 fold_members[static_cast<std::size_t>(g)].end());

            Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(train.size()), features.cols());
            Eigen::VectorXd ytr(static_cast<Eigen::Index>(train.size()));
            for (std::size_t i = 0; i < train.size(); ++i) {
                Xtr.row(static_cast<Eigen::Index>(i)) = features.row(train[i]);
                ytr[static_cast<Eigen::Index>(i)] = labels[train[i]];
            }
            Eigen::MatrixXd Xval(static_cast<Eigen::Index>(val.size()), features.cols());
            Eigen::VectorXd yval(static_cast<Eigen::Index>(val.size()));
            for (std::size_t i = 0; i < val.size(); ++i) {
                Xval.row(static_cast<Eigen::Index>(i)) = features.row(val[i]);
                yval[static_cast<Eigen::Index>(i)] = labels[val[i]];
            }
            const RandomForestModel model = rf_train(Xtr, ytr, params);
            cv_sum += roc_auc(rf_predict_proba(model, Xval), yval).auc;
        }
        const double cv = cv_sum / folds;
        report.log.push_back({params, cv});
        if (cv > report.best_cv_auc) {
            report.best_cv_auc = cv;
            report.best = params;
        }
    }
    return report;
}

nlohmann::json rf_params_to_json(const RandomForestParams& params) {
    nlohmann::json j;
    j["n_estimators"] = params.n_estimators;
    j["max_depth"] = params.max_depth;
    j["max_features"] = "sqrt";
    j["min_samples_leaf"] = params.min_samples_leaf;
    j["min_samples_split"] = params.min_samples_split;
    j["bootstrap"] = params.bootstrap;
    j["seed"] = params.seed;
    return j;
}

RandomForestParams rf_params_from_json(const nlohmann::json& j) {
    RandomForestParams params;
    params.n_estimators = j.value("n_estimators", params.n_estimators);
    params.max_depth = j.value("max_depth", params.max_depth);
    params.min_samples_leaf = j.value("min_samples_leaf", params.min_samples_leaf);
    params.min_samples_split = j.value("min_samples_split", params.min_samples_split);
    params.bootstrap = j.value("bootstrap", params.bootstrap);
    params.seed = j.value("seed", params.seed);
    if (j.contains("max_features") && j.at("max_features").get<std::string>() != "sqrt")
        throw std::invalid_argument("unsupported max_features rule");
    return params;
}

nlohmann::json tune_report_to_json(const TuneReport& report) {
    nlohmann::json j;
    j["best"] = rf_params_to_json(report.best);
    j["best_cv_auc"] = report.best_cv_auc;
    auto& log = j["log"] = nlohmann::json::array();
    for (const auto& cand : report.log)
        log.push_back({{"params", rf_params_to_json(cand.params)}, {"cv_auc", cand.cv_auc}});
    return j;
}

void min_max_normalize(std::vector<NoduleRecord>& records) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (const auto& rec : records)
        for (float v : rec.volume.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo)) return;
    const float scale = 1.0f / (hi - lo);
    for (auto& rec : records)
        for (float& v : rec.volume.data) v = (v - lo) * scale;
}

std::string format_double(double value) {
    std::array<char, 32> buf;
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw std::runtime_error("double formatting failed");
    return std::string(buf.data(), ptr);
}

} // namespace nf
