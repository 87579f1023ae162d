#include "nodulefuse/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "nodulefuse/rng.hpp"

namespace nf {

namespace {

void check_training_input(const Eigen::Ref<const Eigen::MatrixXd>& features,
                          const Eigen::Ref<const Eigen::VectorXd>& labels) {
    if (features.rows() != labels.size())
        throw std::invalid_argument("features and labels disagree on sample count");
    if (features.rows() < 2) throw std::invalid_argument("need at least 2 samples");
    if (!features.allFinite()) throw std::invalid_argument("non-finite feature value");
    bool has0 = false, has1 = false;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0.0)
            has0 = true;
        else if (labels[i] == 1.0)
            has1 = true;
        else
            throw std::invalid_argument("labels must be 0 or 1");
    }
    if (!has0 || !has1) throw std::invalid_argument("degenerate labels: only one class present");
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

} // namespace

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

double lr_loss_and_gradient(const Eigen::Ref<const Eigen::MatrixXd>& features,
                            const Eigen::Ref<const Eigen::VectorXd>& labels,
                            const Eigen::Ref<const Eigen::VectorXd>& weights, double bias,
                            double l2_strength, Eigen::VectorXd& grad_weights, double& grad_bias) {
    const auto n = static_cast<double>(features.rows());
    const Eigen::VectorXd logits = (features * weights).array() + bias;
    const Eigen::VectorXd probs = logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });

    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        loss += softplus(logits[i]) - labels[i] * logits[i]; // BCE via the stable softplus form
    loss = loss / n + l2_strength * weights.squaredNorm();

    const Eigen::VectorXd residual = probs - labels;
    grad_weights = features.transpose() * residual / n + 2.0 * l2_strength * weights;
    grad_bias = residual.mean();
    return loss;
}

LogisticRegressionModel lr_train(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                 const Eigen::Ref<const Eigen::VectorXd>& labels,
                                 const LogisticRegressionParams& params) {
    check_training_input(features, labels);
    if (params.l2_strength < 0.0) throw std::invalid_argument("l2_strength must be >= 0");
    if (!(params.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (params.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");

    LogisticRegressionModel model;
    model.weights = Eigen::VectorXd::Zero(features.cols());
    model.bias = 0.0;

    Eigen::VectorXd grad_w(features.cols());
    double grad_b = 0.0;
    double prev_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < params.max_epochs; ++epoch) {
        const double loss = lr_loss_and_gradient(features, labels, model.weights, model.bias,
                                                 params.l2_strength, grad_w, grad_b);
        model.weights -= params.learning_rate * grad_w;
        model.bias -= params.learning_rate * grad_b;
        model.final_loss = loss;
        model.epochs_run = epoch + 1;
        if (std::abs(prev_loss - loss) < params.tolerance) break;
        prev_loss = loss;
    }
    return model;
}

Eigen::VectorXd lr_predict_proba(const LogisticRegressionModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features) {
    if (features.cols() != model.feature_dim())
        throw std::invalid_argument("feature dimension mismatch");
    const Eigen::VectorXd logits = (features * model.weights).array() + model.bias;
    return logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

double DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int node = 0;
    while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
        node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(node)].positive_fraction;
}

namespace {

struct TreeBuilder {
    const Eigen::Ref<const Eigen::MatrixXd>& X;
    const Eigen::Ref<const Eigen::VectorXd>& y;
    const RandomForestParams& params;
    int max_features;
    Rng& rng;
    DecisionTree& tree;
    std::vector<int> feature_pool; // scratch for per-node candidate draws

    // Gini impurity of a (pos, total) split half times its sample weight.
    static double weighted_gini(double pos, double total) {
        if (total == 0.0) return 0.0;
        const double p = pos / total;
        return total * 2.0 * p * (1.0 - p);
    }

    int build(std::vector<int>& samples, int depth) {
        const auto n = static_cast<int>(samples.size());
        double pos = 0.0;
        for (int idx : samples) pos += y[idx];

        const int node_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes.back().positive_fraction = pos / n;

        const bool pure = (pos == 0.0) || (pos == static_cast<double>(n));
        if (depth >= params.max_depth || n < params.min_samples_split || pure) return node_id;

        // Draw floor(sqrt(d)) candidate features without replacement.
        std::iota(feature_pool.begin(), feature_pool.end(), 0);
        const auto d = static_cast<int>(feature_pool.size());
        for (int i = 0; i < max_features; ++i) {
            const int j = i + static_cast<int>(std::uniform_int_distribution<int>(
                                  0, d - 1 - i)(rng));
            std::swap(feature_pool[static_cast<std::size_t>(i)], feature_pool[static_cast<std::size_t>(j)]);
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_score = std::numeric_limits<double>::infinity();
        std::vector<std::pair<double, int>> order(static_cast<std::size_t>(n));

        for (int fi = 0; fi < max_features; ++fi) {
            const int f = feature_pool[static_cast<std::size_t>(fi)];
            for (int i = 0; i < n; ++i)
                order[static_cast<std::size_t>(i)] = {X(samples[static_cast<std::size_t>(i)], f),
                                                      samples[static_cast<std::size_t>(i)]};
            std::sort(order.begin(), order.end());

            double left_pos = 0.0;
            for (int i = 0; i + 1 < n; ++i) {
                left_pos += y[order[static_cast<std::size_t>(i)].second];
                const double v = order[static_cast<std::size_t>(i)].first;
                const double v_next = order[static_cast<std::size_t>(i) + 1].first;
                if (v == v_next) continue; // no midpoint between equal values
                const int left_n = i + 1;
                const int right_n = n - left_n;
                if (left_n < params.min_samples_leaf || right_n < params.min_samples_leaf) continue;
                const double score = weighted_gini(left_pos, left_n) +
                                     weighted_gini(pos - left_pos, right_n);
                if (score < best_score) {
                    best_score = score;
                    best_feature = f;
                    best_threshold = v + (v_next - v) / 2.0;
                }
            }
        }

        if (best_feature < 0) return node_id; // no admissible split

        std::vector<int> left, right;
        left.reserve(samples.size());
        right.reserve(samples.size());
        for (int idx : samples)
            (X(idx, best_feature) <= best_threshold ? left : right).push_back(idx);

        const int left_id = build(left, depth + 1);
        const int right_id = build(right, depth + 1);
        TreeNode& nd = tree.nodes[static_cast<std::size_t>(node_id)];
        nd.feature = best_feature;
        nd.threshold = best_threshold;
        nd.left = left_id;
        nd.right = right_id;
        return node_id;
    }
};

} // namespace

RandomForestModel rf_train(const Eigen::Ref<const Eigen::MatrixXd>& features,
                           const Eigen::Ref<const Eigen::VectorXd>& labels,
                           const RandomForestParams& params) {
    check_training_input(features, labels);
    if (params.n_estimators < 1 || params.max_depth < 1 || params.min_samples_leaf < 1)
        throw std::invalid_argument("forest counts must be >= 1");
    if (params.min_samples_split < 2) throw std::invalid_argument("min_samples_split must be >= 2");

    RandomForestModel model;
    model.params = params;
    model.feature_dim = features.cols();
    model.trees.resize(static_cast<std::size_t>(params.n_estimators));
    model.bootstrap_stats.resize(static_cast<std::size_t>(params.n_estimators));

    const auto n = static_cast<int>(features.rows());
    const int max_features =
        std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(features.cols())))));

    for (int t = 0; t < params.n_estimators; ++t) {
        Rng rng(derive_seed(params.seed, "tree", static_cast<std::uint64_t>(t)));

        std::vector<int> samples(static_cast<std::size_t>(n));
        if (params.bootstrap) {
            std::uniform_int_distribution<int> pick(0, n - 1);
            for (int i = 0; i < n; ++i) samples[static_cast<std::size_t>(i)] = pick(rng);
        } else {
            std::iota(samples.begin(), samples.end(), 0);
        }
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        int distinct = 0;
        for (int idx : samples)
            if (!seen[static_cast<std::size_t>(idx)]) {
                seen[static_cast<std::size_t>(idx)] = 1;
                ++distinct;
            }
        model.bootstrap_stats[static_cast<std::size_t>(t)] = BootstrapStats{n, distinct};

        DecisionTree& tree = model.trees[static_cast<std::size_t>(t)];
        TreeBuilder builder{features, labels, params, max_features, rng, tree,
                            std::vector<int>(static_cast<std::size_t>(features.cols()))};
        builder.build(samples, 0);
    }
    return model;
}

Eigen::VectorXd rf_predict_proba(const RandomForestModel& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& features) {
    if (features.cols() != model.feature_dim)
        throw std::invalid_argument("feature dimension mismatch");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        double sum = 0.0;
        for (const auto& tree : model.trees) sum += tree.predict(features.row(i));
        out[i] = sum / static_cast<double>(model.trees.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// KNN
// ---------------------------------------------------------------------------

int knn_classify(const Eigen::Ref<const Eigen::MatrixXd>& train_features,
                 const Eigen::Ref<const Eigen::VectorXd>& train_labels,
                 const Eigen::Ref<const Eigen::RowVectorXd>& query, int k) {
    const Eigen::Index n = train_features.rows();
    if (train_labels.size() != n)
        throw std::invalid_argument("features and labels disagree on sample count");
    if (query.size() != train_features.cols())
        throw std::invalid_argument("feature dimension mismatch");
    if (k < 1 || k > n) throw std::invalid_argument("k must be in [1, n]");
    if (k % 2 == 0) throw std::invalid_argument("k must be odd");

    std::vector<std::pair<double, Eigen::Index>> by_distance(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        by_distance[static_cast<std::size_t>(i)] = {(train_features.row(i) - query).squaredNorm(), i};
    std::nth_element(by_distance.begin(), by_distance.begin() + (k - 1), by_distance.end());

    int votes = 0;
    for (int i = 0; i < k; ++i)
        votes += train_labels[by_distance[static_cast<std::size_t>(i)].second] > 0.5 ? 1 : 0;
    return votes * 2 > k ? 1 : 0;
}

} // namespace nf
