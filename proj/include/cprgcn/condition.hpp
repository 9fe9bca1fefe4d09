// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_CONDITION_HPP
#define CPRGCN_CONDITION_HPP

#include <random>
#include <vector>

#include "cprgcn/checkpoint.hpp"
#include "cprgcn/tensor.hpp"
#include "cprgcn/volume.hpp"

namespace cprgcn {

inline constexpr std::size_t kCubeRadius = 12;            // gamma, voxels
inline constexpr std::size_t kCubeSide = 2 * kCubeRadius;  // 24
inline constexpr std::size_t kCnnFeatureDim = 64 * 3 * 3 * 3;  // 1728
inline constexpr std::size_t kLstmHidden = 128;
inline constexpr std::size_t kLstmLayers = 4;
inline constexpr std::size_t kConditionDim = 2 * kLstmHidden;  // 256

/// Moving cubes along one segment; one cube per resampled control point.
struct CubeSequence {
  int segment_id = -1;
  std::vector<std::vector<double>> cubes;  // each kCubeSide^3, channel C=1
};

/// One cube per control point, centered on the point, side 2*gamma.
/// Out-of-bounds voxels take the fill value.
CubeSequence extract_cubes(const Volume& v, const std::vector<Vec3>& points,
                           std::size_t gamma = kCubeRadius, double fill = 0.0);

/// Three conv(3x3x3)+ReLU+maxpool(2) stages: 1->16->32->64 channels,
/// 24^3 -> 3^3 spatial, flattened to a 1728-vector per cube.
struct CnnEncoder {
  Tensor k1, b1, k2, b2, k3, b3;

  void init(std::mt19937_64& rng);
  Tensor encode(const Tensor& cube) const;  // 1x24x24x24 -> 1x1728 row
  NamedTensors named_params(const std::string& prefix) const;
};

/// 4-layer bidirectional LSTM, hidden 128 per direction. The condition is
/// concat(top-layer forward state at the true last step, top-layer backward
/// state at step 1); padding never reaches a selected state.
struct BiLstm {
  std::size_t input_dim = kCnnFeatureDim;
  std::vector<LstmCellParams> fwd;  // one per layer
  std::vector<LstmCellParams> bwd;

  void init(std::mt19937_64& rng);
  /// One feature row (1 x input_dim) per step, one sequence per item.
  /// Returns an items x 256 matrix.
  Tensor summarize(const std::vector<std::vector<Tensor>>& sequences) const;
  NamedTensors named_params(const std::string& prefix) const;
};

/// The image-domain branch: CNN features per cube, BiLSTM summary per
/// segment. CNN weights are shared across all segments.
struct ConditionExtractor {
  CnnEncoder cnn;
  BiLstm lstm;

  void init(std::mt19937_64& rng);
  /// Conditions y for a node set: one CubeSequence per node, output n x 256.
  Tensor conditions(const std::vector<CubeSequence>& sequences) const;
  NamedTensors named_params(const std::string& prefix) const;
};

}  // namespace cprgcn

#endif  // CPRGCN_CONDITION_HPP
