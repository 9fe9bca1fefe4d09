// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_GCN_HPP
#define CPRGCN_GCN_HPP

#include <filesystem>
#include <random>
#include <vector>

#include "cprgcn/condition.hpp"
#include "cprgcn/geometry.hpp"
#include "cprgcn/tensor.hpp"

namespace cprgcn {

class InvalidAdjacencyError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// D^{-1/2} (A + I) D^{-1/2} with row-sum degrees. If directed is false the
/// adjacency is symmetrized (A or A^T) first.
std::vector<double> normalize_adjacency(const std::vector<double>& a,
                                        std::size_t n, bool directed);

/// ReLU(A_hat H W).
Tensor gcn_block(const Tensor& h, const Tensor& a_hat, const Tensor& w);

enum class ShortcutMode {
  kPerBlock,  // x W_s^l added to every block output
  kSingle,    // one x W_s added after the final block
  kNone       // ablation: no residual connection
};

struct ModelConfig {
  int gcn_blocks = 3;
  bool directed = true;
  ShortcutMode shortcut = ShortcutMode::kPerBlock;
  bool use_conditions = true;
  int hidden_dim = 256;
  int fc_hidden = 128;
  int classes = kNumClasses;
};

ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const ModelConfig& cfg,
                       const std::filesystem::path& path);
std::string shortcut_mode_name(ShortcutMode m);
ShortcutMode shortcut_mode_from_name(const std::string& name);

/// One graph's inputs: position features, cube sequences, adjacency, labels.
struct GraphSample {
  std::size_t nodes = 0;
  std::vector<double> adjacency;            // nodes x nodes, 0/1
  std::vector<double> x;                    // nodes x 35
  std::vector<CubeSequence> cubes;          // one per node
  std::vector<int> labels;                  // ground truth per node
};

struct LabelPrediction {
  Tensor logits;                 // n x classes
  std::vector<int> classes;      // argmax, lowest index on ties
};

/// All learnable parameters of the CPR-GCN plus the condition extractor.
struct CprGcnModel {
  ModelConfig cfg;
  ConditionExtractor extractor;
  std::vector<Tensor> gcn_w;       // block l: d_l x hidden, d_0 = 35 + 256
  std::vector<Tensor> shortcut_w;  // 35 x hidden each
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;

  void init(std::uint64_t seed);
  NamedTensors named_params() const;

  /// H^0 = concat(x, y); H^l = ReLU(A_hat H^{l-1} W^{l-1}) (+ x W_s per the
  /// shortcut mode). x: n x 35, y: n x 256, a_hat: n x n.
  Tensor hidden(const Tensor& x, const Tensor& y, const Tensor& a_hat) const;
  Tensor logits(const Tensor& h) const;

  /// Conditions for a node set; zeros when conditions are ablated.
  Tensor node_conditions(const std::vector<CubeSequence>& cubes) const;

  /// `conditions`, when given, replaces the image branch with a precomputed
  /// n x 256 condition matrix (used while the branch is frozen, so its
  /// forward pass need not be replayed).
  LabelPrediction predict(const GraphSample& g,
                          const Tensor* conditions = nullptr) const;
};

/// Mean cross-entropy over all nodes of all graphs in the batch, computed on
/// a block-diagonal adjacency. `conditions`, when given, must hold the
/// precomputed condition rows for every node of the batch in order.
Tensor forward_loss(const CprGcnModel& model,
                    const std::vector<const GraphSample*>& batch,
                    const Tensor* conditions = nullptr);

void save_model(const CprGcnModel& model, const std::filesystem::path& dir,
                const std::string& stem);
void load_model(CprGcnModel& model, const std::filesystem::path& dir,
                const std::string& stem);

}  // namespace cprgcn

#endif  // CPRGCN_GCN_HPP
