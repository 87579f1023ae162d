#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nodulefuse/cnn3d.hpp"
#include "nodulefuse/learners.hpp"
#include "nodulefuse/metrics.hpp"
#include "nodulefuse/semisup.hpp"
#include "nodulefuse/types.hpp"

namespace nf {

enum class ExperimentMode { Fully, Semi };

const char* experiment_mode_name(ExperimentMode mode); // "fully" | "semi"

/// Published per-experiment random-forest defaults for each training
/// distribution (experiment 6 reuses the experiment-1 row). Seed is left at
/// 0; the runner derives per-iteration seeds.
RandomForestParams default_rf_params(int experiment_id, ExperimentMode mode);

/// 1000 iterations for the tabular experiments (1 and 6), 30 for the CNN
/// experiments (2-5).
int default_iterations(int experiment_id);

struct ExperimentConfig {
    int id = 1; // 1..6
    ExperimentMode mode = ExperimentMode::Fully;
    int iterations = 0; // 0 -> default_iterations(id)
    double train_fraction = 0.8;
    bool stratified = false;
    int knn_k = kDefaultPseudoLabelK;
    std::uint64_t master_seed = 0;
    LogisticRegressionParams lr_params{0.0, 0.05, 2000, 1e-9, 0};
    CnnArchitecture cnn_arch = default_architecture();
    TrainConfig cnn_train{1e-3, 16, 10, 0};
    std::optional<RandomForestParams> rf_override; // else the published defaults
    std::filesystem::path artifact_dir;            // experiment-2 persistence root
    int roc_grid_points = 101;
    int jobs = 1; // worker threads over iterations; results independent of jobs
};

struct ModelSeries {
    std::string model;
    std::vector<double> aucs; // one per iteration
    double mean_auc = 0.0;
    std::vector<double> mean_tpr; // vertical ROC average on the FPR grid
};

struct ExperimentResult {
    int id = 0;
    ExperimentMode mode = ExperimentMode::Fully;
    int iterations = 0;
    int roc_grid_points = 101;
    std::vector<ModelSeries> models;
    nlohmann::json config_snapshot;
};

/// The per-iteration protocol: split the full record set, build the
/// mode's train labeling (Distribution A, or B via KNN pseudo-labels),
/// evaluate on the R3-stripped test set, and record per-model AUCs and the
/// mean ROC. Experiment 2 persists its CNN checkpoint and split per
/// iteration under artifact_dir; experiments 3-5 load those artifacts and
/// throw PrereqError ("run experiment 2 first") when missing.
ExperimentResult run_experiment(const std::vector<NoduleRecord>& records, const ExperimentConfig& cfg);

nlohmann::json experiment_result_to_json(const ExperimentResult& result);
std::string auc_csv(const std::vector<ExperimentResult>& results);
std::string roc_csv(const std::vector<ExperimentResult>& results);

struct ComparisonTable {
    struct Entry {
        std::string name; // exp<id>_<mode>_<model>
        double mean_auc = 0.0;
        int iterations = 0;
    };
    struct Pair {
        std::string a, b;
        TTestResult test;
        bool equal_sizes = true;
    };
    std::vector<Entry> ranking; // descending mean AUC
    std::vector<Pair> tests;    // all pairs
    std::vector<std::vector<std::string>> tied_groups;
    std::vector<std::string> warnings;
};

/// Pairwise t-tests over every model series in the given results, a
/// descending mean-AUC ranking, and greedy grouping of statistically
/// indistinguishable neighbours.
ComparisonTable compare(const std::vector<ExperimentResult>& results, double alpha = 0.05);
nlohmann::json comparison_to_json(const ComparisonTable& table);

struct SearchSpace {
    std::array<int, 2> n_estimators{100, 1000};
    std::array<int, 2> max_depth{5, 110};
    std::array<int, 2> min_samples_leaf{1, 10};
    std::array<int, 2> min_samples_split{2, 10};
    std::vector<bool> bootstrap{true};
    std::string max_features = "sqrt"; // the only supported rule
};

struct TuneCandidate {
    RandomForestParams params;
    double cv_auc = 0.0;
};

struct TuneReport {
    RandomForestParams best;
    double best_cv_auc = 0.0;
    std::vector<TuneCandidate> log; // in sampling order
};

/// Random search: `iterations` uniform samples from the space, each scored
/// by mean k-fold validation AUC; argmax wins, ties to the first sampled.
/// Deterministic per seed. Throws std::invalid_argument on fold degeneracy
/// (a fold whose train or validation side is single-class).
TuneReport random_search_tune(const Eigen::Ref<const Eigen::MatrixXd>& features,
                              const Eigen::Ref<const Eigen::VectorXd>& labels,
                              const SearchSpace& space, int folds, int iterations,
                              std::uint64_t seed);

nlohmann::json rf_params_to_json(const RandomForestParams& params);
RandomForestParams rf_params_from_json(const nlohmann::json& j);
nlohmann::json tune_report_to_json(const TuneReport& report);

/// Global min-max rescale of every intensity grid to [0,1] (no-op on a
/// constant dataset). Masks are untouched.
void min_max_normalize(std::vector<NoduleRecord>& records);

/// Shortest round-trip decimal form, for CSV output.
std::string format_double(double value);

/// Biomarker matrix (n x 8) for dataset entries, and the 11-wide
/// biomarkers++radiomics matrix used by experiment 6.
Eigen::MatrixXd biomarker_matrix(const std::vector<NoduleRecord>& records, const LabeledDataset& ds);
Eigen::MatrixXd biomarker_radiomic_matrix(const std::vector<NoduleRecord>& records,
                                          const LabeledDataset& ds);
Eigen::VectorXd label_vector(const LabeledDataset& ds);

/// Persisted-split serialization: entries as {index, label, pseudo}.
nlohmann::json labeled_dataset_to_json(const LabeledDataset& ds);
LabeledDataset labeled_dataset_from_json(const nlohmann::json& entries, Distribution distribution,
                                         SplitRole role, std::size_t record_count);

/// Per-entry feature rows for the image experiments: deep features for
/// id 2, fused vectors for ids 3-5.
Eigen::MatrixXd experiment_feature_matrix(Network<float>& net,
                                          const std::vector<NoduleRecord>& records,
                                          const LabeledDataset& ds, int experiment_id);

} // namespace nf
