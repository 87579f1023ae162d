#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nodulefuse/types.hpp"

namespace nf {

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    bool stratified = false; // stratify by malignancy group (R12 / R3 / R45)
};

/// Distribution A over every record: malignancy 1-2 -> label 0, 4-5 ->
/// label 1, malignancy 3 excluded. All labels annotated.
LabeledDataset make_distribution_a(const std::vector<NoduleRecord>& records);

/// Same mapping restricted to a subset of record indices, with the given
/// role. R3 records in the subset are dropped.
LabeledDataset label_distribution_a(const std::vector<NoduleRecord>& records,
                                    const std::vector<int>& indices, SplitRole role);

/// Deterministic disjoint/exhaustive split of {0..n-1}. Train size is
/// ceil(fraction*n) (computed with a round-off guard so exact multiples
/// don't spill over), clamped to [1, n-1]. Throws on n < 2.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, const SplitSpec& spec);

/// Stratified variant: applies the same rule within each malignancy group
/// (R12 / R3 / R45) of the given records; single-record strata go to train.
std::pair<std::vector<int>, std::vector<int>> split_indices(const std::vector<NoduleRecord>& records,
                                                            const SplitSpec& spec);

/// Distribution B train set: R12/R45 records keep their annotated labels;
/// each R3 record receives the majority label of its k nearest R12/R45
/// neighbours by Euclidean distance on the 8 biomarkers, with
/// provenance=pseudo. Throws when the train subset has no R12/R45 records.
LabeledDataset pseudo_label_r3(const std::vector<NoduleRecord>& records,
                               const std::vector<int>& train_indices, int k);

/// Test set with every malignancy-3 record removed and the rest labeled as
/// Distribution A. Appends to `warnings` when the result is empty.
LabeledDataset strip_r3_from_test(const std::vector<NoduleRecord>& records,
                                  const std::vector<int>& test_indices,
                                  std::vector<std::string>* warnings = nullptr);

inline constexpr int kDefaultPseudoLabelK = 21;

/// Odd values 1, 3, ..., 51 — the 26-candidate grid.
std::vector<int> best_k_grid();

struct BestKRun {
    std::vector<double> accuracy; // one validation accuracy per grid k
    int best_k = 1;               // argmax for this run, ties to smaller k
};

struct BestKReport {
    std::vector<int> k_grid;
    std::vector<BestKRun> runs;
    std::vector<double> mean_accuracy; // per grid k, over runs
    std::vector<int> frequency;        // how often each k won a run
    int chosen_k = 1;
};

nlohmann::json best_k_report_to_json(const BestKReport& report);

/// The best-K protocol: `runs` fresh 80:20 splits of the Distribution-A
/// records; per run, KNN validation accuracy for every grid k; per-run
/// winner is the argmax (ties to smaller k). chosen_k maximizes mean
/// validation accuracy, breaking ties (within 1e-9) by per-run win
/// frequency, then by smaller k. Throws when a split's train side is
/// smaller than the largest grid k.
BestKReport select_best_k(const std::vector<NoduleRecord>& records, int runs,
                          std::uint64_t master_seed, double train_fraction = 0.8);

} // namespace nf
