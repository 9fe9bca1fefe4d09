// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_HARNESS_HPP
#define CPRGCN_HARNESS_HPP

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "cprgcn/cohort.hpp"
#include "cprgcn/gcn.hpp"
#include "cprgcn/geometry.hpp"
#include "cprgcn/volume.hpp"

namespace cprgcn {

class ConfigurationError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- preprocessing -----------------------------------------------------------

struct PipelineConfig {
  double merge_radius = 3.0;        // voxels
  double resample_spacing = 10.0;   // voxels between control points
  int smooth_samples_per_span = 4;
  int decimate_step = 3;            // raw points per smoothing control point
  double volume_spacing_mm = 0.5;
  std::size_t gamma = kCubeRadius;
  double cube_fill = 0.0;
  // Take a moving cube at every cube_stride-th control point. Positions keep
  // the full control-point resolution; the image sequence can be sparser,
  // which is where nearly all of the training cost sits.
  std::size_t cube_stride = 2;
};

/// One tree turned into model inputs: segments, adjacency, position
/// features, cube sequences, labels.
struct PreparedTree {
  int id = 0;
  GraphSample sample;
  std::vector<std::string> segment_labels;  // by node, for reporting
};

PreparedTree prepare_tree(int id, const std::vector<Centerline>& lines,
                          const Volume& volume, const PipelineConfig& pc);

// --- folds & metrics ---------------------------------------------------------

struct FoldSplit {
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> folds;  // 5 disjoint id subsets
};

FoldSplit five_fold_split(const std::vector<int>& tree_ids,
                          std::uint64_t seed);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;    // ground-truth count
  std::size_t predicted = 0;  // prediction count
  bool present = false;       // counted toward the means
};

struct MetricsReport {
  std::string config;
  std::array<ClassMetrics, kNumClasses> per_class{};
  double mean_precision = 0, mean_recall = 0, mean_f1 = 0;
  double micro_precision = 0;  // segment-level accuracy
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};

  static MetricsReport from_confusion(
      const std::array<std::array<std::size_t, kNumClasses>, kNumClasses>&
          confusion,
      std::string config);
};

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& ground_truth);

/// Pooled report: confusion matrices add, metrics recomputed from the sum.
MetricsReport merge_reports(const std::vector<MetricsReport>& reports);

void print_report(const MetricsReport& r, std::ostream& os);

// --- training ----------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  int epochs = 50;
  int batch_trees = 8;
  double learning_rate = 0.001;
  std::uint64_t seed = 1;
  /// Epochs at the start of training during which the image branch (CNN +
  /// BiLSTM) trains end-to-end with everything else. Afterwards the branch
  /// is frozen and its per-tree condition vectors are computed once and
  /// reused, so the remaining epochs cost no image-branch work while the
  /// graph network keeps converging. -1 trains end-to-end throughout.
  int condition_epochs = -1;
  /// Fraction of the training trees held out for checkpoint selection;
  /// 0 selects on the fold's evaluation set (the protocol described with
  /// the five-fold results).
  double validation_fraction = 0.0;
  bool verbose = false;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;            // mean batch loss
  double selection_precision = 0;
};

struct TrainResult {
  CprGcnModel model;  // best checkpoint restored
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_precision = -1;
  MetricsReport eval_report;  // held-out set, best checkpoint
};

TrainResult train_fold(const std::vector<const PreparedTree*>& train_set,
                       const std::vector<const PreparedTree*>& eval_set,
                       const TrainConfig& cfg);

/// Predictions for one prepared tree; optionally reports wall time.
std::vector<int> predict_tree(const CprGcnModel& model,
                              const PreparedTree& tree,
                              double* seconds = nullptr);

MetricsReport evaluate(const CprGcnModel& model,
                       const std::vector<const PreparedTree*>& trees,
                       double* seconds_per_tree = nullptr);

// --- experiments -------------------------------------------------------------

struct CrossValResult {
  std::vector<TrainResult> folds;
  MetricsReport pooled;
};

CrossValResult run_cross_validation(const std::vector<PreparedTree>& trees,
                                    const FoldSplit& split,
                                    const TrainConfig& cfg);

struct AblationCell {
  std::string name;
  TrainConfig config;
  MetricsReport report;
};

/// {full, no-conditions, no-residual, undirected} plus an optional GCN
/// block-count sweep 1..4, all on the same fold split.
std::vector<AblationCell> run_ablation_grid(
    const std::vector<PreparedTree>& trees, const FoldSplit& split,
    const TrainConfig& base, bool block_sweep);

struct AttackResult {
  MetricsReport original;
  MetricsReport attacked;
  double delta_mean_f1 = 0;  // original - attacked
};

/// Evaluation-only pass: each fold's trained model labels its held-out
/// trees from the attacked cohort; no retraining.
AttackResult run_data_attack(const CrossValResult& trained,
                             const std::vector<PreparedTree>& original,
                             const std::vector<PreparedTree>& attacked,
                             const FoldSplit& split);

/// Rasterizes and prepares every tree of a cohort.
std::vector<PreparedTree> prepare_cohort(const Cohort& cohort,
                                         const PipelineConfig& pc);

}  // namespace cprgcn

#endif  // CPRGCN_HARNESS_HPP
