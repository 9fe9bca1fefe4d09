// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cprgcn/harness.hpp"
#include "doctest.h"

using namespace cprgcn;

namespace {

/// Small prepared cohort shared by the training tests. Rasterization and
/// preprocessing run once; the trees are generated from the standard
/// anatomical template so labels/topology are realistic.
const std::vector<PreparedTree>& tiny_cohort() {
  static const std::vector<PreparedTree> trees = [] {
    CohortSpec spec;
    spec.tree_count = 20;
    spec.seed = 404;
    PipelineConfig pc;
    pc.cube_stride = 8;  // conditions are off in these tests; keep prep cheap
    return prepare_cohort(generate_cohort(spec, TreeTemplate::standard()), pc);
  }();
  return trees;
}

std::vector<const PreparedTree*> all_ptrs(
    const std::vector<PreparedTree>& trees) {
  std::vector<const PreparedTree*> out;
  for (const auto& t : trees) out.push_back(&t);
  return out;
}

TrainConfig fast_config() {
  TrainConfig cfg;
  cfg.model.use_conditions = false;  // image path is exercised elsewhere;
                                     // these tests target the harness logic
  cfg.model.hidden_dim = 64;
  cfg.model.fc_hidden = 64;
  cfg.epochs = 6;
  cfg.batch_trees = 4;
  cfg.learning_rate = 0.01;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("five_fold_split partitions ids into near-equal disjoint folds") {
  std::vector<int> ids(511);
  std::iota(ids.begin(), ids.end(), 0);
  const FoldSplit split = five_fold_split(ids, 99);
  REQUIRE(split.folds.size() == 5);
  std::multiset<std::size_t> sizes;
  std::set<int> seen;
  for (const auto& fold : split.folds) {
    sizes.insert(fold.size());
    for (int id : fold) CHECK(seen.insert(id).second);  // no id twice
  }
  CHECK(seen.size() == ids.size());
  // 511 = 103 + 4 * 102.
  CHECK(sizes == std::multiset<std::size_t>{102, 102, 102, 102, 103});
}

TEST_CASE("five_fold_split is seed-deterministic and seed-sensitive") {
  std::vector<int> ids(40);
  std::iota(ids.begin(), ids.end(), 100);
  const FoldSplit a = five_fold_split(ids, 7);
  const FoldSplit b = five_fold_split(ids, 7);
  const FoldSplit c = five_fold_split(ids, 8);
  CHECK(a.folds == b.folds);
  CHECK(a.folds != c.folds);
}

TEST_CASE("five_fold_split rejects fewer than five trees") {
  CHECK_THROWS_AS(five_fold_split({1, 2, 3, 4}, 0), ConfigurationError);
}

TEST_CASE("compute_metrics matches hand counts") {
  // gt:   0 0 0 1 1 2     pred: 0 0 1 1 2 2
  // class 0: tp=2 fp=0 fn=1 -> p=1, r=2/3, f1=0.8
  // class 1: tp=1 fp=1 fn=1 -> p=0.5, r=0.5, f1=0.5
  // class 2: tp=1 fp=1 fn=0 -> p=0.5, r=1, f1=2/3
  const MetricsReport r =
      compute_metrics({0, 0, 1, 1, 2, 2}, {0, 0, 0, 1, 1, 2});
  CHECK(r.per_class[0].precision == doctest::Approx(1.0));
  CHECK(r.per_class[0].recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.per_class[0].f1 == doctest::Approx(0.8));
  CHECK(r.per_class[1].precision == doctest::Approx(0.5));
  CHECK(r.per_class[1].recall == doctest::Approx(0.5));
  CHECK(r.per_class[1].f1 == doctest::Approx(0.5));
  CHECK(r.per_class[2].precision == doctest::Approx(0.5));
  CHECK(r.per_class[2].recall == doctest::Approx(1.0));
  CHECK(r.per_class[2].f1 == doctest::Approx(2.0 / 3.0));
  // Means average over present classes only (3 of 11 here).
  CHECK(r.mean_f1 ==
        doctest::Approx((0.8 + 0.5 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
  CHECK(r.micro_precision == doctest::Approx(4.0 / 6.0));
  for (int c = 3; c < kNumClasses; ++c) CHECK_FALSE(r.per_class[c].present);
}

TEST_CASE("compute_metrics input validation") {
  CHECK_THROWS_AS(compute_metrics({0, 1}, {0}), ContractViolation);
  CHECK_THROWS_AS(compute_metrics({0, 11}, {0, 0}), InvalidLabelError);
  CHECK_THROWS_AS(compute_metrics({0, 0}, {-1, 0}), InvalidLabelError);
}

TEST_CASE("F1 is the harmonic mean of precision and recall") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> count(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> cm{};
    for (int g = 0; g < kNumClasses; ++g)
      for (int p = 0; p < kNumClasses; ++p)
        cm[g][p] = static_cast<std::size_t>(count(rng));
    const MetricsReport r = MetricsReport::from_confusion(cm, "");
    for (int c = 0; c < kNumClasses; ++c) {
      const ClassMetrics& m = r.per_class[c];
      if (m.precision + m.recall == 0) {
        CHECK(m.f1 == 0.0);
      } else {
        CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall /
                                      (m.precision + m.recall))
                          .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("merge_reports equals metrics of concatenated predictions") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> lab(0, kNumClasses - 1);
  std::vector<int> pred_a, gt_a, pred_b, gt_b;
  for (int i = 0; i < 60; ++i) {
    pred_a.push_back(lab(rng));
    gt_a.push_back(lab(rng));
  }
  for (int i = 0; i < 37; ++i) {
    pred_b.push_back(lab(rng));
    gt_b.push_back(lab(rng));
  }
  const MetricsReport merged = merge_reports(
      {compute_metrics(pred_a, gt_a), compute_metrics(pred_b, gt_b)});
  std::vector<int> pred = pred_a, gt = gt_a;
  pred.insert(pred.end(), pred_b.begin(), pred_b.end());
  gt.insert(gt.end(), gt_b.begin(), gt_b.end());
  const MetricsReport pooled = compute_metrics(pred, gt);
  CHECK(merged.mean_f1 == doctest::Approx(pooled.mean_f1).epsilon(1e-12));
  CHECK(merged.micro_precision ==
        doctest::Approx(pooled.micro_precision).epsilon(1e-12));
  for (int g = 0; g < kNumClasses; ++g)
    for (int p = 0; p < kNumClasses; ++p)
      CHECK(merged.confusion[g][p] == pooled.confusion[g][p]);
  CHECK_THROWS_AS(merge_reports({}), ContractViolation);
}

TEST_CASE("prepare_tree produces a consistent graph sample") {
  const auto& trees = tiny_cohort();
  REQUIRE(trees.size() == 20);
  for (const PreparedTree& t : trees) {
    const GraphSample& g = t.sample;
    CHECK(g.nodes >= 3);  // LM, LAD, LCX are mandatory
    CHECK(g.x.size() == g.nodes * kPositionFeatureDim);
    CHECK(g.adjacency.size() == g.nodes * g.nodes);
    CHECK(g.cubes.size() == g.nodes);
    CHECK(g.labels.size() == g.nodes);
    CHECK(t.segment_labels.size() == g.nodes);
    for (std::size_t i = 0; i < g.nodes; ++i) {
      CHECK(g.labels[i] >= 0);
      CHECK(g.labels[i] < kNumClasses);
      CHECK(!g.cubes[i].cubes.empty());
    }
    for (double v : g.x) CHECK(std::isfinite(v));
  }
}

TEST_CASE("cube_stride thins the cube sequences but not the features") {
  CohortSpec spec;
  spec.tree_count = 2;
  spec.seed = 31;
  const Cohort cohort = generate_cohort(spec, TreeTemplate::standard());
  PipelineConfig dense;
  dense.cube_stride = 1;
  PipelineConfig sparse = dense;
  sparse.cube_stride = 3;
  const auto a = prepare_cohort(cohort, dense);
  const auto b = prepare_cohort(cohort, sparse);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].sample.x == b[t].sample.x);
    CHECK(a[t].sample.adjacency == b[t].sample.adjacency);
    std::size_t dense_cubes = 0, sparse_cubes = 0;
    for (std::size_t i = 0; i < a[t].sample.nodes; ++i) {
      dense_cubes += a[t].sample.cubes[i].cubes.size();
      sparse_cubes += b[t].sample.cubes[i].cubes.size();
      CHECK(b[t].sample.cubes[i].cubes.size() >= 1);
      // The strided sequence starts at the same control point.
      CHECK(a[t].sample.cubes[i].cubes.front() ==
            b[t].sample.cubes[i].cubes.front());
    }
    CHECK(sparse_cubes < dense_cubes);
  }
}

TEST_CASE("train_fold learns on a small cohort and keeps the best epoch") {
  const auto& trees = tiny_cohort();
  const auto ptrs = all_ptrs(trees);
  std::vector<const PreparedTree*> train(ptrs.begin(), ptrs.begin() + 16);
  std::vector<const PreparedTree*> eval(ptrs.begin() + 16, ptrs.end());
  const TrainResult r = train_fold(train, eval, fast_config());
  REQUIRE(r.log.size() == 6);
  // The first epoch's mean batch loss starts near the uniform prior ln(11)
  // and training must make clear progress by the end.
  CHECK(r.log.front().loss < std::log(11.0) + 0.3);
  CHECK(r.log.back().loss < 0.75 * r.log.front().loss);
  CHECK(r.best_epoch >= 0);
  CHECK(r.best_precision ==
        doctest::Approx(r.log[static_cast<std::size_t>(r.best_epoch)]
                            .selection_precision));
  for (const EpochLog& e : r.log)
    CHECK(e.selection_precision <= r.best_precision);
  // The restored checkpoint reproduces the best selection precision.
  double micro = 0;
  std::size_t total = 0, correct = 0;
  for (const PreparedTree* t : eval) {
    const std::vector<int> pred = predict_tree(r.model, *t);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      ++total;
      if (pred[i] == t->sample.labels[i]) ++correct;
    }
  }
  micro = static_cast<double>(correct) / static_cast<double>(total);
  CHECK(micro == doctest::Approx(r.best_precision).epsilon(1e-12));
}

TEST_CASE("train_fold is bitwise deterministic for a fixed seed") {
  const auto& trees = tiny_cohort();
  const auto ptrs = all_ptrs(trees);
  std::vector<const PreparedTree*> train(ptrs.begin(), ptrs.begin() + 10);
  std::vector<const PreparedTree*> eval(ptrs.begin() + 10, ptrs.begin() + 14);
  TrainConfig cfg = fast_config();
  cfg.epochs = 3;
  const TrainResult a = train_fold(train, eval, cfg);
  const TrainResult b = train_fold(train, eval, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);  // bitwise
    CHECK(a.log[i].selection_precision == b.log[i].selection_precision);
  }
  CHECK(a.eval_report.mean_f1 == b.eval_report.mean_f1);
  const NamedTensors pa = a.model.named_params();
  const NamedTensors pb = b.model.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].second.values() == pb[i].second.values());
}

TEST_CASE("train_fold validates its configuration") {
  const auto& trees = tiny_cohort();
  const auto ptrs = all_ptrs(trees);
  CHECK_THROWS_AS(train_fold({}, ptrs, fast_config()), ConfigurationError);
  TrainConfig bad = fast_config();
  bad.epochs = 0;
  CHECK_THROWS_AS(train_fold(ptrs, ptrs, bad), ConfigurationError);
  bad = fast_config();
  bad.batch_trees = 0;
  CHECK_THROWS_AS(train_fold(ptrs, ptrs, bad), ConfigurationError);
  bad = fast_config();
  bad.epochs = 1;
  bad.validation_fraction = 1.0;  // leaves nothing to train on
  CHECK_THROWS_AS(train_fold(ptrs, ptrs, bad), ConfigurationError);
}

TEST_CASE("run_cross_validation pools every held-out node exactly once") {
  const auto& trees = tiny_cohort();
  std::vector<int> ids;
  for (const auto& t : trees) ids.push_back(t.id);
  const FoldSplit split = five_fold_split(ids, 17);
  TrainConfig cfg = fast_config();
  cfg.epochs = 3;
  const CrossValResult cv = run_cross_validation(trees, split, cfg);
  REQUIRE(cv.folds.size() == 5);
  std::size_t total_nodes = 0;
  for (const auto& t : trees) total_nodes += t.sample.nodes;
  std::size_t pooled_nodes = 0;
  for (int c = 0; c < kNumClasses; ++c)
    pooled_nodes += cv.pooled.per_class[c].support;
  CHECK(pooled_nodes == total_nodes);
  // Pooling must match merging the fold reports directly.
  std::vector<MetricsReport> fold_reports;
  for (const auto& f : cv.folds) fold_reports.push_back(f.eval_report);
  CHECK(cv.pooled.mean_f1 ==
        doctest::Approx(merge_reports(fold_reports).mean_f1).epsilon(1e-12));
}

TEST_CASE("run_data_attack with an unchanged cohort reports zero drop") {
  const auto& trees = tiny_cohort();
  std::vector<int> ids;
  for (const auto& t : trees) ids.push_back(t.id);
  const FoldSplit split = five_fold_split(ids, 21);
  TrainConfig cfg = fast_config();
  cfg.epochs = 2;
  const CrossValResult cv = run_cross_validation(trees, split, cfg);
  const AttackResult r = run_data_attack(cv, trees, trees, split);
  CHECK(r.delta_mean_f1 == doctest::Approx(0.0));
  CHECK(r.original.mean_f1 == doctest::Approx(r.attacked.mean_f1));

  FoldSplit wrong = split;
  wrong.folds.pop_back();
  CHECK_THROWS_AS(run_data_attack(cv, trees, trees, wrong),
                  ConfigurationError);
}
