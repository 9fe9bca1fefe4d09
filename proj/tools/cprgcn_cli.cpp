// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//
// Experiment driver: cohort generation, five-fold training, evaluation,
// single-tree prediction, the ablation grid, the data attack, and fold
// report merging.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cprgcn/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cprgcn;

namespace {

struct RunConfig {
  CohortSpec cohort;
  PipelineConfig pipeline;
  TrainConfig train;
  std::uint64_t fold_seed = 7;
  bool block_sweep = false;
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open config " + path.string());
  const json j = json::parse(in);
  if (j.contains("cohort")) {
    const json& s = j.at("cohort");
    maybe(s, "tree_count", c.cohort.tree_count);
    maybe(s, "seed", c.cohort.seed);
    maybe(s, "dims", c.cohort.dims);
    maybe(s, "spacing_mm", c.cohort.spacing_mm);
    maybe(s, "noise", c.cohort.noise);
    maybe(s, "attack_fraction", c.cohort.attack_fraction);
  }
  if (j.contains("pipeline")) {
    const json& s = j.at("pipeline");
    maybe(s, "merge_radius", c.pipeline.merge_radius);
    maybe(s, "resample_spacing", c.pipeline.resample_spacing);
    maybe(s, "smooth_samples_per_span", c.pipeline.smooth_samples_per_span);
    maybe(s, "decimate_step", c.pipeline.decimate_step);
    maybe(s, "volume_spacing_mm", c.pipeline.volume_spacing_mm);
    maybe(s, "gamma", c.pipeline.gamma);
    maybe(s, "cube_fill", c.pipeline.cube_fill);
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    maybe(s, "gcn_blocks", c.train.model.gcn_blocks);
    maybe(s, "directed", c.train.model.directed);
    maybe(s, "use_conditions", c.train.model.use_conditions);
    maybe(s, "hidden_dim", c.train.model.hidden_dim);
    maybe(s, "fc_hidden", c.train.model.fc_hidden);
    if (s.contains("shortcut"))
      c.train.model.shortcut =
          shortcut_mode_from_name(s.at("shortcut").get<std::string>());
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    maybe(s, "epochs", c.train.epochs);
    maybe(s, "batch_trees", c.train.batch_trees);
    maybe(s, "learning_rate", c.train.learning_rate);
    maybe(s, "seed", c.train.seed);
    maybe(s, "validation_fraction", c.train.validation_fraction);
    maybe(s, "verbose", c.train.verbose);
  }
  maybe(j, "fold_seed", c.fold_seed);
  maybe(j, "block_sweep", c.block_sweep);
  return c;
}

void apply_env_overrides(RunConfig& c, fs::path& out_dir) {
  if (const char* seed = std::getenv("CPRGCN_SEED")) {
    const std::uint64_t s = std::stoull(seed);
    c.cohort.seed = s;
    c.train.seed = s;
    c.fold_seed = s;
  }
  if (const char* dir = std::getenv("CPRGCN_OUT")) out_dir = dir;
}

std::vector<PreparedTree> prepare_from_dir(const fs::path& dir,
                                           const PipelineConfig& pc) {
  const CohortManifest manifest = read_cohort_manifest(dir);
  std::vector<PreparedTree> trees;
  for (const auto& entry : manifest.trees) {
    const auto lines = load_centerlines(entry.centerlines);
    const Volume vol = load_volume(entry.volume_header);
    trees.push_back(prepare_tree(entry.id, lines, vol, pc));
  }
  return trees;
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["config"] = r.config;
  j["mean_precision"] = r.mean_precision;
  j["mean_recall"] = r.mean_recall;
  j["mean_f1"] = r.mean_f1;
  j["micro_precision"] = r.micro_precision;
  json conf = json::array();
  for (const auto& row : r.confusion) conf.push_back(row);
  j["confusion"] = conf;
  return j;
}

MetricsReport report_from_json(const json& j) {
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> conf{};
  const auto& rows = j.at("confusion");
  for (int g = 0; g < kNumClasses; ++g)
    for (int p = 0; p < kNumClasses; ++p)
      conf[g][p] = rows.at(g).at(p).get<std::size_t>();
  return MetricsReport::from_confusion(conf,
                                       j.value("config", std::string{}));
}

void write_report_files(const MetricsReport& r, const fs::path& dir,
                        const std::string& stem) {
  fs::create_directories(dir);
  std::ofstream tsv(dir / (stem + ".tsv"));
  print_report(r, tsv);
  std::ofstream jf(dir / (stem + ".json"));
  jf << report_to_json(r).dump(2) << "\n";
}

FoldSplit split_for(const std::vector<PreparedTree>& trees,
                    std::uint64_t seed) {
  std::vector<int> ids;
  for (const auto& t : trees) ids.push_back(t.id);
  return five_fold_split(ids, seed);
}

int cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
  const Cohort cohort = generate_cohort(cfg.cohort);
  write_cohort(cohort, out_dir);
  std::size_t branches = 0;
  for (const auto& t : cohort.trees) branches += t.branches.size();
  std::cout << "wrote " << cohort.trees.size() << " trees ("
            << static_cast<double>(branches) /
                   static_cast<double>(cohort.trees.size())
            << " branches/tree) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& cohort_dir,
              const fs::path& out_dir) {
  const auto trees = prepare_from_dir(cohort_dir, cfg.pipeline);
  const FoldSplit split = split_for(trees, cfg.fold_seed);
  const CrossValResult cv = run_cross_validation(trees, split, cfg.train);
  fs::create_directories(out_dir);
  save_model_config(cfg.train.model, out_dir / "model_config.json");
  for (std::size_t f = 0; f < cv.folds.size(); ++f) {
    save_model(cv.folds[f].model, out_dir,
               "fold" + std::to_string(f));
    write_report_files(cv.folds[f].eval_report, out_dir,
                       "fold" + std::to_string(f) + "_metrics");
    std::ofstream log(out_dir / ("fold" + std::to_string(f) + "_log.tsv"));
    log << "epoch\tloss\tselection_precision\n";
    for (const auto& e : cv.folds[f].log)
      log << e.epoch << "\t" << e.loss << "\t" << e.selection_precision
          << "\n";
  }
  write_report_files(cv.pooled, out_dir, "pooled_metrics");
  print_report(cv.pooled, std::cout);
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& cohort_dir,
                 const fs::path& model_dir, const fs::path& out_dir) {
  const auto trees = prepare_from_dir(cohort_dir, cfg.pipeline);
  const FoldSplit split = split_for(trees, cfg.fold_seed);
  const ModelConfig mc = load_model_config(model_dir / "model_config.json");
  std::vector<MetricsReport> reports;
  std::ofstream timing(out_dir.empty() ? fs::path("/dev/null")
                                       : out_dir / "timing.tsv");
  timing << "fold\tseconds_per_tree\n";
  for (std::size_t f = 0; f < split.folds.size(); ++f) {
    CprGcnModel model;
    model.cfg = mc;
    load_model(model, model_dir, "fold" + std::to_string(f));
    std::vector<const PreparedTree*> held;
    for (int id : split.folds[f])
      for (const auto& t : trees)
        if (t.id == id) held.push_back(&t);
    double seconds = 0;
    reports.push_back(evaluate(model, held, &seconds));
    timing << f << "\t" << seconds << "\n";
  }
  const MetricsReport pooled = merge_reports(reports);
  if (!out_dir.empty()) write_report_files(pooled, out_dir, "eval_metrics");
  print_report(pooled, std::cout);
  return 0;
}

int cmd_predict(const RunConfig& cfg, const fs::path& model_dir,
                const fs::path& lines_path, const fs::path& volume_path) {
  const auto lines = load_centerlines(lines_path);
  const Volume vol = load_volume(volume_path);
  const PreparedTree tree = prepare_tree(0, lines, vol, cfg.pipeline);
  CprGcnModel model;
  model.cfg = load_model_config(model_dir / "model_config.json");
  load_model(model, model_dir, "fold0");
  for (int c : predict_tree(model, tree))
    std::cout << class_names()[c] << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& cohort_dir,
               const fs::path& out_dir) {
  const auto trees = prepare_from_dir(cohort_dir, cfg.pipeline);
  const FoldSplit split = split_for(trees, cfg.fold_seed);
  const auto cells = run_ablation_grid(trees, split, cfg.train,
                                       cfg.block_sweep);
  fs::create_directories(out_dir);
  std::cout << std::fixed << std::setprecision(3);
  for (const auto& cell : cells) {
    write_report_files(cell.report, out_dir, cell.name + "_metrics");
    std::cout << cell.name << "\tmeanF1 " << cell.report.mean_f1 << "\n";
  }
  return 0;
}

int cmd_attack(const RunConfig& cfg, const fs::path& cohort_dir,
               const fs::path& out_dir, double fraction) {
  const auto original = prepare_from_dir(cohort_dir, cfg.pipeline);
  const CohortManifest manifest = read_cohort_manifest(cohort_dir);
  CohortSpec spec = manifest.spec;
  spec.attack_fraction = 0.0;
  Cohort attacked_cohort = generate_cohort(spec);
  apply_data_attack(attacked_cohort, fraction);
  const auto attacked = prepare_cohort(attacked_cohort, cfg.pipeline);

  const FoldSplit split = split_for(original, cfg.fold_seed);
  const CrossValResult cv = run_cross_validation(original, split, cfg.train);
  const AttackResult result =
      run_data_attack(cv, original, attacked, split);
  fs::create_directories(out_dir);
  write_report_files(result.original, out_dir, "attack_original");
  write_report_files(result.attacked, out_dir, "attack_attacked");
  std::cout << std::fixed << std::setprecision(3) << "meanF1 original "
            << result.original.mean_f1 << ", attacked "
            << result.attacked.mean_f1 << ", drop "
            << result.delta_mean_f1 << "\n";
  return 0;
}

int cmd_report(const std::vector<fs::path>& files, const fs::path& out_dir) {
  std::vector<MetricsReport> reports;
  for (const auto& p : files) {
    std::ifstream in(p);
    if (!in) throw ConfigurationError("cannot open report " + p.string());
    reports.push_back(report_from_json(json::parse(in)));
  }
  const MetricsReport pooled = merge_reports(reports);
  if (!out_dir.empty()) write_report_files(pooled, out_dir, "pooled_metrics");
  print_report(pooled, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anatomical labeling of coronary-artery trees"};
  app.require_subcommand(1);

  fs::path config_path, out_dir, cohort_dir, model_dir, lines_path,
      volume_path;
  std::optional<std::uint64_t> seed;
  double attack_fraction = 0.2;
  std::vector<fs::path> report_files;

  app.add_option("--config", config_path, "config document (JSON)");
  app.add_option("--seed", seed, "override every seed in the config");

  auto* gen = app.add_subcommand("generate", "write a synthetic cohort");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "five-fold cross-validation");
  train->add_option("--cohort", cohort_dir, "cohort directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "evaluate saved fold models");
  eval->add_option("--cohort", cohort_dir)->required();
  eval->add_option("--model", model_dir)->required();
  eval->add_option("--out", out_dir);

  auto* predict = app.add_subcommand("predict", "label a single tree");
  predict->add_option("--model", model_dir)->required();
  predict->add_option("--centerlines", lines_path)->required();
  predict->add_option("--volume", volume_path)->required();

  auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
  ablate->add_option("--cohort", cohort_dir)->required();
  ablate->add_option("--out", out_dir)->required();

  auto* attack = app.add_subcommand("attack", "data-attack robustness");
  attack->add_option("--cohort", cohort_dir)->required();
  attack->add_option("--out", out_dir)->required();
  attack->add_option("--fraction", attack_fraction,
                     "fraction of trees losing LM/RCA");

  auto* report = app.add_subcommand("report", "merge fold metric files");
  report->add_option("files", report_files, "fold *_metrics.json files")
      ->required();
  report->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path);
    if (seed) {
      cfg.cohort.seed = *seed;
      cfg.train.seed = *seed;
      cfg.fold_seed = *seed;
    }
    apply_env_overrides(cfg, out_dir);
    if (gen->parsed()) return cmd_generate(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, cohort_dir, out_dir);
    if (eval->parsed())
      return cmd_evaluate(cfg, cohort_dir, model_dir, out_dir);
    if (predict->parsed())
      return cmd_predict(cfg, model_dir, lines_path, volume_path);
    if (ablate->parsed()) return cmd_ablate(cfg, cohort_dir, out_dir);
    if (attack->parsed())
      return cmd_attack(cfg, cohort_dir, out_dir, attack_fraction);
    if (report->parsed()) return cmd_report(report_files, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
