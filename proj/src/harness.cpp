// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "cprgcn/optim.hpp"

namespace cprgcn {
namespace {

/// Thins a dense polyline to control points for smoothing; endpoints are
/// always kept.
std::vector<Vec3> decimate(const std::vector<Vec3>& pts, int step) {
  if (step <= 1 || pts.size() <= 2) return pts;
  std::vector<Vec3> out;
  for (std::size_t i = 0; i + 1 < pts.size(); i += static_cast<size_t>(step))
    out.push_back(pts[i]);
  out.push_back(pts.back());
  return out;
}

std::vector<const PreparedTree*> pick(
    const std::vector<PreparedTree>& trees, const std::vector<int>& ids) {
  std::vector<const PreparedTree*> out;
  for (int id : ids) {
    auto it = std::find_if(trees.begin(), trees.end(),
                           [&](const PreparedTree& t) { return t.id == id; });
    if (it == trees.end())
      throw ConfigurationError("fold references unknown tree id " +
                               std::to_string(id));
    out.push_back(&*it);
  }
  return out;
}

}  // namespace

PreparedTree prepare_tree(int id, const std::vector<Centerline>& lines,
                          const Volume& volume, const PipelineConfig& pc) {
  PreparedTree out;
  out.id = id;

  const std::vector<Segment> segments =
      split_into_segments(lines, pc.merge_radius);
  const SegmentGraph graph = build_graph(segments);

  Volume resampled = resample_volume(volume, pc.volume_spacing_mm);
  normalize_intensity(resampled);

  // Smooth + resample each segment once; the resampled control points drive
  // both the position features and the moving cubes.
  std::vector<Segment> control = segments;
  for (auto& seg : control) {
    Centerline c;
    c.points = decimate(seg.points, pc.decimate_step);
    c = catmull_rom_smooth(c, pc.smooth_samples_per_span);
    c = resample_uniform(c, pc.resample_spacing);
    seg.points = std::move(c.points);
  }
  const double diag = bounding_box_diagonal(control);
  const Vec3 origin = bounding_box_center(control);

  GraphSample& g = out.sample;
  g.nodes = segments.size();
  g.adjacency = graph.adjacency;
  g.x.reserve(g.nodes * kPositionFeatureDim);
  for (std::size_t i = 0; i < control.size(); ++i) {
    const PositionFeatures f = position_features(control[i], origin, diag);
    g.x.insert(g.x.end(), f.begin(), f.end());
    const std::size_t stride = std::max<std::size_t>(1, pc.cube_stride);
    std::vector<Vec3> cube_points;
    for (std::size_t k = 0; k < control[i].points.size(); k += stride)
      cube_points.push_back(control[i].points[k]);
    CubeSequence seq =
        extract_cubes(resampled, cube_points, pc.gamma, pc.cube_fill);
    seq.segment_id = static_cast<int>(i);
    g.cubes.push_back(std::move(seq));
    out.segment_labels.push_back(segments[i].label);
    g.labels.push_back(segments[i].label.empty()
                           ? -1
                           : static_cast<int>(
                                 label_from_string(segments[i].label)));
  }
  return out;
}

FoldSplit five_fold_split(const std::vector<int>& tree_ids,
                          std::uint64_t seed) {
  if (tree_ids.size() < 5)
    throw ConfigurationError("five_fold_split needs at least 5 trees");
  std::vector<int> ids = tree_ids;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit split;
  split.seed = seed;
  split.folds.assign(5, {});
  for (std::size_t i = 0; i < ids.size(); ++i)
    split.folds[i % 5].push_back(ids[i]);
  return split;
}

MetricsReport MetricsReport::from_confusion(
    const std::array<std::array<std::size_t, kNumClasses>, kNumClasses>&
        confusion,
    std::string config) {
  MetricsReport r;
  r.config = std::move(config);
  r.confusion = confusion;
  std::size_t total = 0, correct = 0, present = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    ClassMetrics& m = r.per_class[c];
    std::size_t tp = confusion[c][c], fp = 0;
    for (int g = 0; g < kNumClasses; ++g) m.support += confusion[c][g];
    for (int g = 0; g < kNumClasses; ++g) m.predicted += confusion[g][c];
    fp = m.predicted - tp;
    const std::size_t fn = m.support - tp;
    m.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall > 0)
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    m.present = m.support > 0 || m.predicted > 0;
    if (m.present) {
      ++present;
      r.mean_precision += m.precision;
      r.mean_recall += m.recall;
      r.mean_f1 += m.f1;
    }
    total += m.support;
    correct += tp;
  }
  if (present > 0) {
    r.mean_precision /= static_cast<double>(present);
    r.mean_recall /= static_cast<double>(present);
    r.mean_f1 /= static_cast<double>(present);
  }
  r.micro_precision = total ? static_cast<double>(correct) / total : 0.0;
  return r;
}

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& ground_truth) {
  if (predictions.size() != ground_truth.size())
    throw ContractViolation("compute_metrics: length mismatch");
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int g = ground_truth[i], p = predictions[i];
    if (g < 0 || g >= kNumClasses || p < 0 || p >= kNumClasses)
      throw InvalidLabelError("compute_metrics: label out of range");
    ++confusion[g][p];
  }
  return MetricsReport::from_confusion(confusion, "");
}

MetricsReport merge_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractViolation("merge_reports: empty input");
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  for (const auto& r : reports)
    for (int g = 0; g < kNumClasses; ++g)
      for (int p = 0; p < kNumClasses; ++p)
        confusion[g][p] += r.confusion[g][p];
  return MetricsReport::from_confusion(confusion, reports.front().config);
}

void print_report(const MetricsReport& r, std::ostream& os) {
  os << std::fixed << std::setprecision(3);
  if (!r.config.empty()) os << "# config: " << r.config << "\n";
  os << "class\tprecision\trecall\tf1\tsupport\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = r.per_class[c];
    if (!m.present) continue;
    os << class_names()[c] << "\t" << m.precision << "\t" << m.recall << "\t"
       << m.f1 << "\t" << m.support << "\n";
  }
  os << "mean\t" << r.mean_precision << "\t" << r.mean_recall << "\t"
     << r.mean_f1 << "\t-\n";
}

std::vector<int> predict_tree(const CprGcnModel& model,
                              const PreparedTree& tree, double* seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  LabelPrediction p = model.predict(tree.sample);
  const auto t1 = std::chrono::steady_clock::now();
  if (seconds)
    *seconds = std::chrono::duration<double>(t1 - t0).count();
  return p.classes;
}

MetricsReport evaluate(const CprGcnModel& model,
                       const std::vector<const PreparedTree*>& trees,
                       double* seconds_per_tree) {
  std::vector<int> pred, gt;
  double total_seconds = 0;
  for (const PreparedTree* t : trees) {
    double seconds = 0;
    const std::vector<int> classes = predict_tree(model, *t, &seconds);
    total_seconds += seconds;
    pred.insert(pred.end(), classes.begin(), classes.end());
    gt.insert(gt.end(), t->sample.labels.begin(), t->sample.labels.end());
  }
  if (seconds_per_tree)
    *seconds_per_tree =
        trees.empty() ? 0.0 : total_seconds / static_cast<double>(trees.size());
  return compute_metrics(pred, gt);
}

namespace {

double micro_precision_on(const CprGcnModel& model,
                          const std::vector<const PreparedTree*>& trees,
                          const std::vector<Tensor>* cached_conditions) {
  std::size_t total = 0, correct = 0;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    const PreparedTree* t = trees[k];
    const Tensor* y =
        cached_conditions ? &(*cached_conditions)[k] : nullptr;
    const std::vector<int> classes = model.predict(t->sample, y).classes;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      ++total;
      if (classes[i] == t->sample.labels[i]) ++correct;
    }
  }
  return total ? static_cast<double>(correct) / total : 0.0;
}

}  // namespace

TrainResult train_fold(const std::vector<const PreparedTree*>& train_set,
                       const std::vector<const PreparedTree*>& eval_set,
                       const TrainConfig& cfg) {
  if (train_set.empty()) throw ConfigurationError("empty training set");
  if (cfg.epochs < 1 || cfg.batch_trees < 1)
    throw ConfigurationError("epochs and batch size must be positive");

  TrainResult result;
  result.model.cfg = cfg.model;
  result.model.init(cfg.seed);

  // Optional proper validation split; by default checkpoints are selected on
  // the fold's evaluation set, matching the published protocol.
  std::vector<const PreparedTree*> fit = train_set;
  std::vector<const PreparedTree*> selection;
  if (cfg.validation_fraction > 0.0) {
    std::mt19937_64 vrng(cfg.seed ^ 0x5a17ULL);
    std::shuffle(fit.begin(), fit.end(), vrng);
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(
               cfg.validation_fraction * static_cast<double>(fit.size()))));
    if (n_val >= fit.size())
      throw ConfigurationError("validation fraction leaves no training data");
    selection.assign(fit.end() - static_cast<long>(n_val), fit.end());
    fit.resize(fit.size() - n_val);
  } else {
    selection = eval_set;
  }

  std::vector<Tensor> params;
  for (auto& [name, t] : result.model.named_params()) params.push_back(t);
  Adam opt(params, AdamConfig{cfg.learning_rate});

  // Staged training: once the image branch stops training, its conditions
  // are a fixed function of each tree, so they are computed once and reused.
  // The branch's gradients stay exactly zero afterwards, which makes the
  // Adam updates for its parameters no-ops.
  const bool staged = cfg.model.use_conditions && cfg.condition_epochs >= 0 &&
                      cfg.condition_epochs < cfg.epochs;
  std::vector<Tensor> fit_y, selection_y;
  auto detach_conditions = [&](const std::vector<const PreparedTree*>& set,
                               std::vector<Tensor>& out) {
    out.clear();
    for (const PreparedTree* t : set) {
      Tensor y = result.model.node_conditions(t->sample.cubes);
      out.push_back(Tensor::from(y.shape(), std::vector<double>(y.values())));
    }
  };

  std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<double>> best_values;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool frozen = staged && epoch >= cfg.condition_epochs;
    if (staged && epoch == cfg.condition_epochs) {
      detach_conditions(fit, fit_y);
      detach_conditions(selection, selection_y);
    }
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(cfg.batch_trees)) {
      std::vector<std::size_t> batch;
      for (std::size_t i = b0;
           i < std::min(order.size(),
                        b0 + static_cast<std::size_t>(cfg.batch_trees));
           ++i)
        batch.push_back(order[i]);
      // The batch loss is the node-mean over all trees. Running one tree's
      // tape at a time and scaling by its node share produces the same
      // gradient as the block-diagonal batch while keeping the peak tape
      // size to a single tree.
      std::size_t batch_nodes = 0;
      for (std::size_t idx : batch) batch_nodes += fit[idx]->sample.nodes;
      opt.zero_grad();
      double value = 0;
      for (std::size_t idx : batch) {
        const GraphSample* g = &fit[idx]->sample;
        Tensor tree_loss =
            forward_loss(result.model, {g}, frozen ? &fit_y[idx] : nullptr);
        const double share =
            static_cast<double>(g->nodes) / static_cast<double>(batch_nodes);
        value += share * tree_loss.item();
        Tensor weighted = scale(tree_loss, share);
        backward(weighted);
      }
      if (!std::isfinite(value)) {
        std::ostringstream diag;
        diag << "training diverged: loss=" << value << " at epoch " << epoch
             << ", batch " << batches << " (seed " << cfg.seed
             << ", lr " << cfg.learning_rate << ", step "
             << opt.step_count() << ")";
        throw TrainingDiverged(diag.str());
      }
      opt.step();
      epoch_loss += value;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    log.selection_precision = micro_precision_on(
        result.model, selection, frozen ? &selection_y : nullptr);
    if (log.selection_precision > result.best_precision) {
      result.best_precision = log.selection_precision;
      result.best_epoch = epoch;
      best_values.clear();
      for (const Tensor& p : params) best_values.push_back(p.values());
    }
    result.log.push_back(log);
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " loss " << log.loss
                << " selection precision " << log.selection_precision
                << "\n";
  }

  for (std::size_t i = 0; i < params.size(); ++i)
    params[i].values() = best_values[i];
  result.eval_report = evaluate(result.model, eval_set);
  return result;
}

CrossValResult run_cross_validation(const std::vector<PreparedTree>& trees,
                                    const FoldSplit& split,
                                    const TrainConfig& cfg) {
  CrossValResult result;
  std::vector<MetricsReport> fold_reports;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    std::vector<int> train_ids;
    for (std::size_t g = 0; g < split.folds.size(); ++g)
      if (g != f)
        train_ids.insert(train_ids.end(), split.folds[g].begin(),
                         split.folds[g].end());
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + f;
    TrainResult r = train_fold(pick(trees, train_ids),
                               pick(trees, split.folds[f]), fold_cfg);
    fold_reports.push_back(r.eval_report);
    result.folds.push_back(std::move(r));
  }
  result.pooled = merge_reports(fold_reports);
  return result;
}

std::vector<AblationCell> run_ablation_grid(
    const std::vector<PreparedTree>& trees, const FoldSplit& split,
    const TrainConfig& base, bool block_sweep) {
  std::vector<AblationCell> cells;
  auto run = [&](const std::string& name, const TrainConfig& cfg) {
    AblationCell cell;
    cell.name = name;
    cell.config = cfg;
    cell.report = run_cross_validation(trees, split, cfg).pooled;
    cell.report.config = name;
    cells.push_back(std::move(cell));
  };

  run("full", base);
  {
    TrainConfig c = base;
    c.model.use_conditions = false;
    run("no_conditions", c);
  }
  {
    TrainConfig c = base;
    c.model.shortcut = ShortcutMode::kNone;
    run("no_residual", c);
  }
  {
    TrainConfig c = base;
    c.model.directed = false;
    run("undirected", c);
  }
  if (block_sweep) {
    for (int blocks = 1; blocks <= 4; ++blocks) {
      if (blocks == base.model.gcn_blocks) {
        AblationCell cell = cells.front();  // "full" already ran this depth
        cell.name = "blocks_" + std::to_string(blocks);
        cell.report.config = cell.name;
        cells.push_back(std::move(cell));
        continue;
      }
      TrainConfig c = base;
      c.model.gcn_blocks = blocks;
      run("blocks_" + std::to_string(blocks), c);
    }
  }
  return cells;
}

AttackResult run_data_attack(const CrossValResult& trained,
                             const std::vector<PreparedTree>& original,
                             const std::vector<PreparedTree>& attacked,
                             const FoldSplit& split) {
  if (trained.folds.size() != split.folds.size())
    throw ConfigurationError("fold count mismatch between models and split");
  std::vector<MetricsReport> orig_reports, attack_reports;
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    const CprGcnModel& model = trained.folds[f].model;
    orig_reports.push_back(
        evaluate(model, pick(original, split.folds[f])));
    attack_reports.push_back(
        evaluate(model, pick(attacked, split.folds[f])));
  }
  AttackResult result;
  result.original = merge_reports(orig_reports);
  result.attacked = merge_reports(attack_reports);
  result.delta_mean_f1 = result.original.mean_f1 - result.attacked.mean_f1;
  return result;
}

std::vector<PreparedTree> prepare_cohort(const Cohort& cohort,
                                         const PipelineConfig& pc) {
  std::vector<PreparedTree> out;
  out.reserve(cohort.trees.size());
  for (const auto& tree : cohort.trees) {
    const Volume vol = rasterize_volume(tree, cohort.spec);
    out.push_back(prepare_tree(tree.id, tree.centerlines(), vol, pc));
  }
  return out;
}

}  // namespace cprgcn
