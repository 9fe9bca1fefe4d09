// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/condition.hpp"

#include <cmath>

namespace cprgcn {

CubeSequence extract_cubes(const Volume& v, const std::vector<Vec3>& points,
                           std::size_t gamma, double fill) {
  const std::size_t side = 2 * gamma;
  CubeSequence seq;
  seq.cubes.reserve(points.size());
  for (const auto& p : points) {
    std::vector<double> cube(side * side * side, fill);
    const long cx = std::lround(p.x) - static_cast<long>(gamma);
    const long cy = std::lround(p.y) - static_cast<long>(gamma);
    const long cz = std::lround(p.z) - static_cast<long>(gamma);
    for (std::size_t z = 0; z < side; ++z) {
      const long vz = cz + static_cast<long>(z);
      if (vz < 0 || vz >= static_cast<long>(v.dims[2])) continue;
      for (std::size_t y = 0; y < side; ++y) {
        const long vy = cy + static_cast<long>(y);
        if (vy < 0 || vy >= static_cast<long>(v.dims[1])) continue;
        for (std::size_t x = 0; x < side; ++x) {
          const long vx = cx + static_cast<long>(x);
          if (vx < 0 || vx >= static_cast<long>(v.dims[0])) continue;
          cube[(z * side + y) * side + x] =
              v.at(static_cast<std::size_t>(vx), static_cast<std::size_t>(vy),
                   static_cast<std::size_t>(vz));
        }
      }
    }
    seq.cubes.push_back(std::move(cube));
  }
  return seq;
}

// --- CNN encoder ------------------------------------------------------------

namespace {

double fan_in_bound(std::size_t fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

}  // namespace

void CnnEncoder::init(std::mt19937_64& rng) {
  k1 = Tensor::uniform({16, 1, 3, 3, 3}, fan_in_bound(1 * 27), rng);
  b1 = Tensor::uniform({16}, fan_in_bound(1 * 27), rng);
  k2 = Tensor::uniform({32, 16, 3, 3, 3}, fan_in_bound(16 * 27), rng);
  b2 = Tensor::uniform({32}, fan_in_bound(16 * 27), rng);
  k3 = Tensor::uniform({64, 32, 3, 3, 3}, fan_in_bound(32 * 27), rng);
  b3 = Tensor::uniform({64}, fan_in_bound(32 * 27), rng);
}

Tensor CnnEncoder::encode(const Tensor& cube) const {
  if (cube.shape() != Shape{1, kCubeSide, kCubeSide, kCubeSide})
    throw DimensionError("cnn_encode: expected cube of shape [1x24x24x24], got " +
                         shape_string(cube.shape()));
  Tensor h = maxpool3d(relu(conv3d(cube, k1, b1)));   // 16x12x12x12
  h = maxpool3d(relu(conv3d(h, k2, b2)));             // 32x6x6x6
  h = maxpool3d(relu(conv3d(h, k3, b3)));             // 64x3x3x3
  return reshape(h, {1, kCnnFeatureDim});
}

NamedTensors CnnEncoder::named_params(const std::string& prefix) const {
  return {{prefix + "conv1.kernel", k1}, {prefix + "conv1.bias", b1},
          {prefix + "conv2.kernel", k2}, {prefix + "conv2.bias", b2},
          {prefix + "conv3.kernel", k3}, {prefix + "conv3.bias", b3}};
}

// --- BiLSTM -------------------------------------------------------------------

void BiLstm::init(std::mt19937_64& rng) {
  fwd.clear();
  bwd.clear();
  for (std::size_t layer = 0; layer < kLstmLayers; ++layer) {
    const std::size_t d = layer == 0 ? input_dim : kConditionDim;
    for (auto* dir : {&fwd, &bwd}) {
      LstmCellParams p;
      p.w_x = Tensor::uniform({d, 4 * kLstmHidden}, fan_in_bound(d), rng);
      p.w_h = Tensor::uniform({kLstmHidden, 4 * kLstmHidden},
                              fan_in_bound(kLstmHidden), rng);
      p.b = Tensor::uniform({4 * kLstmHidden}, fan_in_bound(kLstmHidden), rng);
      dir->push_back(std::move(p));
    }
  }
}

Tensor BiLstm::summarize(
    const std::vector<std::vector<Tensor>>& sequences) const {
  const std::size_t items = sequences.size();
  if (items == 0)
    throw DegenerateInputError("bilstm_summarize: empty batch");
  std::vector<std::size_t> lengths(items);
  std::size_t max_len = 0;
  for (std::size_t b = 0; b < items; ++b) {
    lengths[b] = sequences[b].size();
    if (lengths[b] == 0)
      throw DegenerateInputError("bilstm_summarize: empty sequence");
    max_len = std::max(max_len, lengths[b]);
  }

  const Tensor pad_in = Tensor::zeros({1, input_dim});
  const Tensor pad_half = Tensor::zeros({1, kLstmHidden});

  // below_f[t] / below_b[t] are the layer-below outputs (items x hidden),
  // indexed by ORIGINAL step t. The backward direction runs each item's own
  // sequence reversed, so state at computation step t < length never sees a
  // padding row of its own item (rows evolve independently).
  std::vector<Tensor> below_f, below_b;
  Tensor final_f, final_b;

  for (std::size_t layer = 0; layer < kLstmLayers; ++layer) {
    // Per computation step: comp_f[t] aligns with original step t, comp_b[t]
    // with original step lengths[b]-1-t for each row b.
    std::vector<Tensor> comp_f(max_len), comp_b(max_len);
    for (int direction = 0; direction < 2; ++direction) {
      const bool rev = direction == 1;
      const auto& params = rev ? bwd[layer] : fwd[layer];
      Tensor h = Tensor::zeros({items, kLstmHidden});
      Tensor c = Tensor::zeros({items, kLstmHidden});
      for (std::size_t t = 0; t < max_len; ++t) {
        Tensor x;
        if (layer == 0) {
          std::vector<std::pair<Tensor, std::size_t>> rows;
          rows.reserve(items);
          for (std::size_t b = 0; b < items; ++b) {
            if (t >= lengths[b]) {
              rows.emplace_back(pad_in, 0);
            } else {
              const std::size_t src = rev ? lengths[b] - 1 - t : t;
              rows.emplace_back(sequences[b][src], 0);
            }
          }
          x = stack_rows(rows);
        } else {
          std::vector<std::pair<Tensor, std::size_t>> rf, rb;
          rf.reserve(items);
          rb.reserve(items);
          for (std::size_t b = 0; b < items; ++b) {
            if (t >= lengths[b]) {
              rf.emplace_back(pad_half, 0);
              rb.emplace_back(pad_half, 0);
            } else {
              const std::size_t src = rev ? lengths[b] - 1 - t : t;
              rf.emplace_back(below_f[src], b);
              rb.emplace_back(below_b[src], b);
            }
          }
          x = concat_cols({stack_rows(rf), stack_rows(rb)});
        }
        auto [h2, c2] = lstm_cell(x, h, c, params);
        h = h2;
        c = c2;
        (rev ? comp_b : comp_f)[t] = h;
      }
      if (layer + 1 == kLstmLayers) {
        // Both final states live at computation step lengths[b]-1: forward at
        // the item's true last step, backward back at original step 1.
        std::vector<std::pair<Tensor, std::size_t>> rows;
        rows.reserve(items);
        for (std::size_t b = 0; b < items; ++b)
          rows.emplace_back((rev ? comp_b : comp_f)[lengths[b] - 1], b);
        (rev ? final_b : final_f) = stack_rows(rows);
      }
    }
    if (layer + 1 == kLstmLayers) break;
    // Re-index the backward outputs from computation step to original step.
    std::vector<Tensor> orig_b(max_len);
    for (std::size_t t = 0; t < max_len; ++t) {
      std::vector<std::pair<Tensor, std::size_t>> rows;
      rows.reserve(items);
      for (std::size_t b = 0; b < items; ++b) {
        if (t >= lengths[b])
          rows.emplace_back(pad_half, 0);
        else
          rows.emplace_back(comp_b[lengths[b] - 1 - t], b);
      }
      orig_b[t] = stack_rows(rows);
    }
    below_f = std::move(comp_f);
    below_b = std::move(orig_b);
  }
  return concat_cols({final_f, final_b});
}

NamedTensors BiLstm::named_params(const std::string& prefix) const {
  NamedTensors out;
  for (std::size_t layer = 0; layer < fwd.size(); ++layer) {
    for (int dir = 0; dir < 2; ++dir) {
      const auto& p = dir == 0 ? fwd[layer] : bwd[layer];
      const std::string base = prefix + "layer" + std::to_string(layer) +
                               (dir == 0 ? ".fwd." : ".bwd.");
      out.emplace_back(base + "w_x", p.w_x);
      out.emplace_back(base + "w_h", p.w_h);
      out.emplace_back(base + "b", p.b);
    }
  }
  return out;
}

// --- condition extractor --------------------------------------------------------

void ConditionExtractor::init(std::mt19937_64& rng) {
  cnn.init(rng);
  lstm.init(rng);
}

Tensor ConditionExtractor::conditions(
    const std::vector<CubeSequence>& sequences) const {
  if (sequences.empty())
    throw DegenerateInputError("conditions: no segments");
  std::vector<std::vector<Tensor>> features(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].cubes.empty())
      throw DegenerateInputError("conditions: segment with no cubes");
    for (const auto& cube : sequences[i].cubes) {
      Tensor c = Tensor::from({1, kCubeSide, kCubeSide, kCubeSide}, cube);
      features[i].push_back(cnn.encode(c));
    }
  }
  return lstm.summarize(features);
}

NamedTensors ConditionExtractor::named_params(const std::string& prefix) const {
  NamedTensors out = cnn.named_params(prefix + "cnn.");
  NamedTensors l = lstm.named_params(prefix + "lstm.");
  out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace cprgcn
