#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace nf {

// ---------------------------------------------------------------------------
// Logistic regression (full-batch gradient descent on BCE + L2)
// ---------------------------------------------------------------------------

struct LogisticRegressionParams {
    double l2_strength = 0.0;
    double learning_rate = 0.1;
    int max_epochs = 500;
    double tolerance = 1e-8; // stop when the loss delta falls below this
    std::uint64_t seed = 0;  // reserved; zero-init training is already deterministic
};

struct LogisticRegressionModel {
    Eigen::VectorXd weights;
    double bias = 0.0;
    double final_loss = 0.0;
    int epochs_run = 0;
    Eigen::Index feature_dim() const { return weights.size(); }
};

/// Mean binary cross-entropy + l2·‖w‖² (bias unregularized) and its exact
/// gradient. Exposed separately so the finite-difference check can probe
/// the same code path training uses.
double lr_loss_and_gradient(const Eigen::Ref<const Eigen::MatrixXd>& features,
                            const Eigen::Ref<const Eigen::VectorXd>& labels,
                            const Eigen::Ref<const Eigen::VectorXd>& weights, double bias,
                            double l2_strength, Eigen::VectorXd& grad_weights, double& grad_bias);

/// Full-batch gradient descent from zero-initialized weights; deterministic.
/// Throws std::invalid_argument on single-class labels ("degenerate
/// labels"), non-finite features, or fewer than 2 samples.
LogisticRegressionModel lr_train(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                 const Eigen::Ref<const Eigen::VectorXd>& labels,
                                 const LogisticRegressionParams& params);

Eigen::VectorXd lr_predict_proba(const LogisticRegressionModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features);

// ---------------------------------------------------------------------------
// Random forest (CART trees, Gini impurity, bootstrap resampling)
// ---------------------------------------------------------------------------

struct RandomForestParams {
    int n_estimators = 100;
    int max_depth = 10;
    int min_samples_leaf = 1;
    int min_samples_split = 2;
    bool bootstrap = true;
    std::uint64_t seed = 0;
    // max_features is not a free parameter: floor(sqrt(feature count)),
    // minimum 1, per the square-root rule.
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double positive_fraction = 0.0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes; // nodes[0] is the root
    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct BootstrapStats {
    int drawn = 0;    // samples drawn (with replacement when bootstrapping)
    int distinct = 0; // distinct training rows seen by the tree
};

struct RandomForestModel {
    RandomForestParams params;
    Eigen::Index feature_dim = 0;
    std::vector<DecisionTree> trees;
    std::vector<BootstrapStats> bootstrap_stats; // one entry per tree
};

/// Trains n_estimators CART trees on bootstrap resamples, splitting on
/// Gini impurity over floor(sqrt(d)) randomly drawn candidate features per
/// node, with midpoint thresholds and the depth/leaf/split constraints.
/// Deterministic given the seed. Errors as lr_train.
RandomForestModel rf_train(const Eigen::Ref<const Eigen::MatrixXd>& features,
                           const Eigen::Ref<const Eigen::VectorXd>& labels,
                           const RandomForestParams& params);

/// Mean over trees of the routed leaf's positive-class fraction.
Eigen::VectorXd rf_predict_proba(const RandomForestModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features);

// ---------------------------------------------------------------------------
// K-nearest neighbours
// ---------------------------------------------------------------------------

/// Majority label among the k nearest training rows by Euclidean distance;
/// distance ties break toward the lower training index. k must be odd and
/// ≤ the number of training rows.
int knn_classify(const Eigen::Ref<const Eigen::MatrixXd>& train_features,
                 const Eigen::Ref<const Eigen::VectorXd>& train_labels,
                 const Eigen::Ref<const Eigen::RowVectorXd>& query, int k);

} // namespace nf
