#include "nodulefuse/semisup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "nodulefuse/learners.hpp"
#include "nodulefuse/rng.hpp"

namespace nf {

namespace {

int distribution_a_label(int malignancy) {
    return malignancy >= 4 ? 1 : 0; // callers exclude malignancy 3
}

int train_count(double fraction, int n) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("train fraction must be in (0, 1)");
    // ceil with a round-off guard: 0.8*10 must give 8, not 9.
    const int raw = static_cast<int>(std::ceil(fraction * n - 1e-9));
    return std::clamp(raw, 1, n - 1);
}

} // namespace

LabeledDataset make_distribution_a(const std::vector<NoduleRecord>& records) {
    LabeledDataset ds;
    ds.distribution = Distribution::A;
    ds.role = SplitRole::Train;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int m = records[i].malignancy.value;
        if (m == 3) continue;
        ds.entries.push_back({static_cast<int>(i), distribution_a_label(m), Provenance::Annotated});
    }
    return ds;
}

LabeledDataset label_distribution_a(const std::vector<NoduleRecord>& records,
                                    const std::vector<int>& indices, SplitRole role) {
    LabeledDataset ds;
    ds.distribution = Distribution::A;
    ds.role = role;
    for (int idx : indices) {
        const int m = records[static_cast<std::size_t>(idx)].malignancy.value;
        if (m == 3) continue;
        ds.entries.push_back({idx, distribution_a_label(m), Provenance::Annotated});
    }
    return ds;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, const SplitSpec& spec) {
    if (n < 2) throw std::invalid_argument("cannot split fewer than 2 records");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(spec.seed);
    std::shuffle(order.begin(), order.end(), rng);

    const int n_train = train_count(spec.train_fraction, n);
    std::vector<int> train(order.begin(), order.begin() + n_train);
    std::vector<int> test(order.begin() + n_train, order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

std::pair<std::vector<int>, std::vector<int>> split_indices(const std::vector<NoduleRecord>& records,
                                                            const SplitSpec& spec) {
    const int n = static_cast<int>(records.size());
    if (!spec.stratified) return split_indices(n, spec);
    if (n < 2) throw std::invalid_argument("cannot split fewer than 2 records");

    // Strata: R12, R3, R45.
    std::array<std::vector<int>, 3> strata;
    for (int i = 0; i < n; ++i) {
        const int m = records[static_cast<std::size_t>(i)].malignancy.value;
        strata[m <= 2 ? 0 : (m == 3 ? 1 : 2)].push_back(i);
    }

    Rng rng(spec.seed);
    std::vector<int> train, test;
    for (auto& stratum : strata) {
        if (stratum.empty()) continue;
        std::shuffle(stratum.begin(), stratum.end(), rng);
        if (stratum.size() == 1) {
            train.push_back(stratum[0]);
            continue;
        }
        const int n_train = train_count(spec.train_fraction, static_cast<int>(stratum.size()));
        train.insert(train.end(), stratum.begin(), stratum.begin() + n_train);
        test.insert(test.end(), stratum.begin() + n_train, stratum.end());
    }
    if (test.empty()) throw std::invalid_argument("stratified split produced an empty test set");
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

LabeledDataset pseudo_label_r3(const std::vector<NoduleRecord>& records,
                               const std::vector<int>& train_indices, int k) {
    std::vector<int> anchors; // R12/R45 rows the KNN is fitted on
    std::vector<int> r3;
    for (int idx : train_indices) {
        const int m = records[static_cast<std::size_t>(idx)].malignancy.value;
        (m == 3 ? r3 : anchors).push_back(idx);
    }
    if (anchors.empty())
        throw std::invalid_argument("pseudo-labeling requires R12/R45 records in the train set");

    LabeledDataset ds;
    ds.distribution = Distribution::B;
    ds.role = SplitRole::Train;
    for (int idx : anchors) {
        const int m = records[static_cast<std::size_t>(idx)].malignancy.value;
        ds.entries.push_back({idx, distribution_a_label(m), Provenance::Annotated});
    }
    if (r3.empty()) return ds;

    Eigen::MatrixXd anchor_features(static_cast<Eigen::Index>(anchors.size()), kBiomarkerCount);
    Eigen::VectorXd anchor_labels(static_cast<Eigen::Index>(anchors.size()));
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        anchor_features.row(static_cast<Eigen::Index>(i)) =
            records[static_cast<std::size_t>(anchors[i])].biomarkers.to_eigen().transpose();
        anchor_labels[static_cast<Eigen::Index>(i)] =
            distribution_a_label(records[static_cast<std::size_t>(anchors[i])].malignancy.value);
    }

    for (int idx : r3) {
        const Eigen::RowVectorXd query =
            records[static_cast<std::size_t>(idx)].biomarkers.to_eigen().transpose();
        const int label = knn_classify(anchor_features, anchor_labels, query, k);
        ds.entries.push_back({idx, label, Provenance::Pseudo});
    }
    std::sort(ds.entries.begin(), ds.entries.end(),
              [](const LabeledEntry& a, const LabeledEntry& b) { return a.record_index < b.record_index; });
    return ds;
}

LabeledDataset strip_r3_from_test(const std::vector<NoduleRecord>& records,
                                  const std::vector<int>& test_indices,
                                  std::vector<std::string>* warnings) {
    LabeledDataset ds = label_distribution_a(records, test_indices, SplitRole::Test);
    if (ds.entries.empty() && warnings)
        warnings->push_back("test set is empty after removing malignancy-3 records");
    return ds;
}

std::vector<int> best_k_grid() {
    std::vector<int> grid;
    for (int k = 1; k <= 51; k += 2) grid.push_back(k);
    return grid;
}

BestKReport select_best_k(const std::vector<NoduleRecord>& records, int runs,
                          std::uint64_t master_seed, double train_fraction) {
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    const LabeledDataset dist_a = make_distribution_a(records);
    const int n = static_cast<int>(dist_a.entries.size());
    if (n < 2) throw std::invalid_argument("insufficient data: need at least 2 non-R3 records");

    Eigen::MatrixXd features(n, kBiomarkerCount);
    Eigen::VectorXd labels(n);
    for (int i = 0; i < n; ++i) {
        const auto& entry = dist_a.entries[static_cast<std::size_t>(i)];
        features.row(i) =
            records[static_cast<std::size_t>(entry.record_index)].biomarkers.to_eigen().transpose();
        labels[i] = entry.label;
    }

    BestKReport report;
    report.k_grid = best_k_grid();
    const int grid_size = static_cast<int>(report.k_grid.size());
    const int max_k = report.k_grid.back();
    report.mean_accuracy.assign(static_cast<std::size_t>(grid_size), 0.0);
    report.frequency.assign(static_cast<std::size_t>(grid_size), 0);
    report.runs.reserve(static_cast<std::size_t>(runs));

    std::vector<std::pair<double, int>> by_distance;
    for (int run = 0; run < runs; ++run) {
        SplitSpec spec;
        spec.train_fraction = train_fraction;
        spec.seed = derive_seed(master_seed, "bestk", static_cast<std::uint64_t>(run));
        const auto [train_idx, val_idx] = split_indices(n, spec);
        if (static_cast<int>(train_idx.size()) < max_k)
            throw std::invalid_argument("insufficient data: train split smaller than the largest k");

        // For each validation point, sort neighbours once; prefix sums of
        // labels then answer every k in the grid.
        BestKRun run_row;
        run_row.accuracy.assign(static_cast<std::size_t>(grid_size), 0.0);
        by_distance.resize(train_idx.size());
        for (int vi : val_idx) {
            for (std::size_t t = 0; t < train_idx.size(); ++t) {
                const int ti = train_idx[t];
                by_distance[t] = {(features.row(ti) - features.row(vi)).squaredNorm(), ti};
            }
            std::sort(by_distance.begin(), by_distance.end());
            int votes = 0;
            int gi = 0;
            for (int rank = 0; rank < static_cast<int>(by_distance.size()) && gi < grid_size; ++rank) {
                votes += labels[by_distance[static_cast<std::size_t>(rank)].second] > 0.5 ? 1 : 0;
                const int k = rank + 1;
                if (k == report.k_grid[static_cast<std::size_t>(gi)]) {
                    const int predicted = votes * 2 > k ? 1 : 0;
                    if (predicted == static_cast<int>(labels[vi]))
                        run_row.accuracy[static_cast<std::size_t>(gi)] += 1.0;
                    ++gi;
                }
            }
        }
        for (double& acc : run_row.accuracy) acc /= static_cast<double>(val_idx.size());

        int best = 0;
        for (int g = 1; g < grid_size; ++g)
            if (run_row.accuracy[static_cast<std::size_t>(g)] >
                run_row.accuracy[static_cast<std::size_t>(best)])
                best = g;
        run_row.best_k = report.k_grid[static_cast<std::size_t>(best)];
        report.frequency[static_cast<std::size_t>(best)] += 1;
        for (int g = 0; g < grid_size; ++g)
            report.mean_accuracy[static_cast<std::size_t>(g)] +=
                run_row.accuracy[static_cast<std::size_t>(g)];
        report.runs.push_back(std::move(run_row));
    }
    for (double& acc : report.mean_accuracy) acc /= static_cast<double>(runs);

    // Accuracy first; frequency breaks near-ties; smaller k breaks the rest.
    const double max_mean = *std::max_element(report.mean_accuracy.begin(), report.mean_accuracy.end());
    int chosen = -1;
    for (int g = 0; g < grid_size; ++g) {
        if (report.mean_accuracy[static_cast<std::size_t>(g)] < max_mean - 1e-9) continue;
        if (chosen < 0 ||
            report.frequency[static_cast<std::size_t>(g)] > report.frequency[static_cast<std::size_t>(chosen)])
            chosen = g;
    }
    report.chosen_k = report.k_grid[static_cast<std::size_t>(chosen)];
    return report;
}

nlohmann::json best_k_report_to_json(const BestKReport& report) {
    nlohmann::json j;
    j["k_grid"] = report.k_grid;
    j["chosen_k"] = report.chosen_k;
    j["mean_accuracy"] = report.mean_accuracy;
    j["frequency"] = report.frequency;
    auto& runs = j["runs"] = nlohmann::json::array();
    for (const auto& run : report.runs) {
        nlohmann::json r;
        r["best_k"] = run.best_k;
        r["accuracy"] = run.accuracy;
        runs.push_back(std::move(r));
    }
    return j;
}

} // namespace nf
