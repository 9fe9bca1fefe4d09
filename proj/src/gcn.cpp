// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/gcn.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace cprgcn {

std::vector<double> normalize_adjacency(const std::vector<double>& a,
                                        std::size_t n, bool directed) {
  if (a.size() != n * n)
    throw DimensionError("normalize_adjacency: adjacency is not n x n");
  for (double v : a)
    if (v < 0.0)
      throw InvalidAdjacencyError("normalize_adjacency: negative entry");

  std::vector<double> tilde(a);
  if (!directed) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (a[i * n + j] != 0.0 || a[j * n + i] != 0.0) {
          tilde[i * n + j] = 1.0;
          tilde[j * n + i] = 1.0;
        }
  }
  for (std::size_t i = 0; i < n; ++i) tilde[i * n + i] += 1.0;  // self loops

  std::vector<double> dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += tilde[i * n + j];
    dinv[i] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = dinv[i] * tilde[i * n + j] * dinv[j];
  return out;
}

Tensor gcn_block(const Tensor& h, const Tensor& a_hat, const Tensor& w) {
  return relu(matmul(matmul(a_hat, h), w));
}

// --- config -------------------------------------------------------------------

std::string shortcut_mode_name(ShortcutMode m) {
  switch (m) {
    case ShortcutMode::kPerBlock: return "per_block";
    case ShortcutMode::kSingle: return "single";
    case ShortcutMode::kNone: return "none";
  }
  return "per_block";
}

ShortcutMode shortcut_mode_from_name(const std::string& name) {
  if (name == "per_block") return ShortcutMode::kPerBlock;
  if (name == "single") return ShortcutMode::kSingle;
  if (name == "none") return ShortcutMode::kNone;
  throw UnsupportedConfigError("unknown shortcut mode '" + name + "'");
}

void save_model_config(const ModelConfig& cfg,
                       const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["gcn_blocks"] = cfg.gcn_blocks;
  doc["directed"] = cfg.directed;
  doc["shortcut"] = shortcut_mode_name(cfg.shortcut);
  doc["use_conditions"] = cfg.use_conditions;
  doc["hidden_dim"] = cfg.hidden_dim;
  doc["fc_hidden"] = cfg.fc_hidden;
  doc["classes"] = nlohmann::json::array();
  for (const auto& name : class_names()) doc["classes"].push_back(name);
  std::ofstream os(path, std::ios::trunc);
  if (!os)
    throw std::runtime_error("cannot open model config " + path.string());
  os << doc.dump(2) << "\n";
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open model config " + path.string());
  nlohmann::json doc;
  is >> doc;
  ModelConfig cfg;
  cfg.gcn_blocks = doc.value("gcn_blocks", 3);
  cfg.directed = doc.value("directed", true);
  cfg.shortcut = shortcut_mode_from_name(doc.value("shortcut", "per_block"));
  cfg.use_conditions = doc.value("use_conditions", true);
  cfg.hidden_dim = doc.value("hidden_dim", 256);
  cfg.fc_hidden = doc.value("fc_hidden", 128);
  if (doc.contains("classes"))
    cfg.classes = static_cast<int>(doc["classes"].size());
  return cfg;
}

// --- model ----------------------------------------------------------------------

namespace {

double fan_in_bound(std::size_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

}  // namespace

void CprGcnModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  extractor.init(rng);

  const std::size_t h = static_cast<std::size_t>(cfg.hidden_dim);
  const std::size_t d0 = kPositionFeatureDim + kConditionDim;  // 291
  gcn_w.clear();
  shortcut_w.clear();
  for (int l = 0; l < cfg.gcn_blocks; ++l) {
    const std::size_t din = l == 0 ? d0 : h;
    gcn_w.push_back(Tensor::uniform({din, h}, fan_in_bound(din), rng));
    shortcut_w.push_back(Tensor::uniform({kPositionFeatureDim, h},
                                         fan_in_bound(kPositionFeatureDim),
                                         rng));
  }
  const std::size_t fh = static_cast<std::size_t>(cfg.fc_hidden);
  const std::size_t nc = static_cast<std::size_t>(cfg.classes);
  fc1_w = Tensor::uniform({h, fh}, fan_in_bound(h), rng);
  fc1_b = Tensor::uniform({fh}, fan_in_bound(h), rng);
  fc2_w = Tensor::uniform({fh, nc}, fan_in_bound(fh), rng);
  fc2_b = Tensor::uniform({nc}, fan_in_bound(fh), rng);
}

NamedTensors CprGcnModel::named_params() const {
  NamedTensors out;
  if (cfg.use_conditions) out = extractor.named_params("extractor.");
  for (std::size_t l = 0; l < gcn_w.size(); ++l)
    out.emplace_back("gcn.block" + std::to_string(l) + ".w", gcn_w[l]);
  if (cfg.shortcut != ShortcutMode::kNone)
    for (std::size_t l = 0; l < shortcut_w.size(); ++l)
      out.emplace_back("gcn.block" + std::to_string(l) + ".w_s",
                       shortcut_w[l]);
  out.emplace_back("head.fc1.w", fc1_w);
  out.emplace_back("head.fc1.b", fc1_b);
  out.emplace_back("head.fc2.w", fc2_w);
  out.emplace_back("head.fc2.b", fc2_b);
  return out;
}

Tensor CprGcnModel::hidden(const Tensor& x, const Tensor& y,
                           const Tensor& a_hat) const {
  if (x.rows() != y.rows() || x.rows() != a_hat.rows())
    throw DimensionError("hidden: x, y and adjacency are not row-aligned");
  Tensor h = concat_cols({x, y});
  for (std::size_t l = 0; l < gcn_w.size(); ++l) {
    h = gcn_block(h, a_hat, gcn_w[l]);
    const bool add_shortcut =
        cfg.shortcut == ShortcutMode::kPerBlock ||
        (cfg.shortcut == ShortcutMode::kSingle && l + 1 == gcn_w.size());
    if (add_shortcut) h = add(h, matmul(x, shortcut_w[l]));
  }
  return h;
}

Tensor CprGcnModel::logits(const Tensor& h) const {
  return add(matmul(relu(add(matmul(h, fc1_w), fc1_b)), fc2_w), fc2_b);
}

Tensor CprGcnModel::node_conditions(
    const std::vector<CubeSequence>& cubes) const {
  if (!cfg.use_conditions)
    return Tensor::zeros({cubes.size(), kConditionDim});
  return extractor.conditions(cubes);
}

LabelPrediction CprGcnModel::predict(const GraphSample& g,
                                     const Tensor* conditions) const {
  const std::size_t n = g.nodes;
  Tensor a_hat = Tensor::from(
      {n, n}, normalize_adjacency(g.adjacency, n, cfg.directed));
  Tensor x = Tensor::from({n, kPositionFeatureDim}, g.x);
  if (conditions && conditions->shape() != Shape{n, kConditionDim})
    throw DimensionError("predict: cached conditions shape mismatch");
  Tensor y = conditions ? *conditions : node_conditions(g.cubes);
  LabelPrediction pred;
  pred.logits = logits(hidden(x, y, a_hat));
  pred.classes.resize(n);
  const std::size_t c = static_cast<std::size_t>(cfg.classes);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = pred.logits.values().data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;  // lowest index wins ties
    pred.classes[i] = static_cast<int>(best);
  }
  return pred;
}

Tensor forward_loss(const CprGcnModel& model,
                    const std::vector<const GraphSample*>& batch,
                    const Tensor* conditions) {
  if (batch.empty()) throw DegenerateInputError("forward_loss: empty batch");
  std::size_t total = 0;
  for (const auto* g : batch) {
    if (g->labels.size() != g->nodes)
      throw ContractViolation("forward_loss: label count != node count");
    total += g->nodes;
  }
  // Block-diagonal adjacency over the mini-batch.
  std::vector<double> block(total * total, 0.0);
  std::vector<double> xvals;
  xvals.reserve(total * kPositionFeatureDim);
  std::vector<CubeSequence> cubes;
  cubes.reserve(total);
  std::vector<int> labels;
  labels.reserve(total);
  std::size_t off = 0;
  for (const auto* g : batch) {
    const auto norm =
        normalize_adjacency(g->adjacency, g->nodes, model.cfg.directed);
    for (std::size_t i = 0; i < g->nodes; ++i)
      for (std::size_t j = 0; j < g->nodes; ++j)
        block[(off + i) * total + off + j] = norm[i * g->nodes + j];
    xvals.insert(xvals.end(), g->x.begin(), g->x.end());
    if (model.cfg.use_conditions && !conditions)
      cubes.insert(cubes.end(), g->cubes.begin(), g->cubes.end());
    labels.insert(labels.end(), g->labels.begin(), g->labels.end());
    off += g->nodes;
  }
  if (conditions && conditions->shape() != Shape{total, kConditionDim})
    throw DimensionError("forward_loss: cached conditions shape mismatch");
  Tensor a_hat = Tensor::from({total, total}, std::move(block));
  Tensor x = Tensor::from({total, kPositionFeatureDim}, std::move(xvals));
  Tensor y = conditions ? *conditions
             : model.cfg.use_conditions
                 ? model.extractor.conditions(cubes)
                 : Tensor::zeros({total, kConditionDim});
  return softmax_cross_entropy(model.logits(model.hidden(x, y, a_hat)),
                               labels);
}

void save_model(const CprGcnModel& model, const std::filesystem::path& dir,
                const std::string& stem) {
  std::filesystem::create_directories(dir);
  save_model_config(model.cfg, dir / (stem + ".config.json"));
  // The checkpoint always carries every tensor, including ones disabled by
  // the current config, so configs can be toggled on a saved model.
  NamedTensors all = model.extractor.named_params("extractor.");
  for (std::size_t l = 0; l < model.gcn_w.size(); ++l)
    all.emplace_back("gcn.block" + std::to_string(l) + ".w", model.gcn_w[l]);
  for (std::size_t l = 0; l < model.shortcut_w.size(); ++l)
    all.emplace_back("gcn.block" + std::to_string(l) + ".w_s",
                     model.shortcut_w[l]);
  all.emplace_back("head.fc1.w", model.fc1_w);
  all.emplace_back("head.fc1.b", model.fc1_b);
  all.emplace_back("head.fc2.w", model.fc2_w);
  all.emplace_back("head.fc2.b", model.fc2_b);
  save_checkpoint(all, dir / (stem + ".manifest.json"),
                  dir / (stem + ".weights.bin"));
}

void load_model(CprGcnModel& model, const std::filesystem::path& dir,
                const std::string& stem) {
  model.cfg = load_model_config(dir / (stem + ".config.json"));
  model.init(0);  // allocate tensors with the right shapes
  NamedTensors all = model.extractor.named_params("extractor.");
  for (std::size_t l = 0; l < model.gcn_w.size(); ++l)
    all.emplace_back("gcn.block" + std::to_string(l) + ".w", model.gcn_w[l]);
  for (std::size_t l = 0; l < model.shortcut_w.size(); ++l)
    all.emplace_back("gcn.block" + std::to_string(l) + ".w_s",
                     model.shortcut_w[l]);
  all.emplace_back("head.fc1.w", model.fc1_w);
  all.emplace_back("head.fc1.b", model.fc1_b);
  all.emplace_back("head.fc2.w", model.fc2_w);
  all.emplace_back("head.fc2.b", model.fc2_b);
  load_checkpoint(all, dir / (stem + ".manifest.json"),
                  dir / (stem + ".weights.bin"));
}

}  // namespace cprgcn
