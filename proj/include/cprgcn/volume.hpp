// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_VOLUME_HPP
#define CPRGCN_VOLUME_HPP

#include <array>
#include <filesystem>
#include <vector>

#include "cprgcn/geometry.hpp"

namespace cprgcn {

struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};   // x, y, z extents
  std::array<double, 3> spacing{1, 1, 1};     // mm per voxel
  std::vector<double> data;                   // x fastest, then y, then z

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  double& at(std::size_t x, std::size_t y, std::size_t z) {
    return data[(z * dims[1] + y) * dims[0] + x];
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return data[(z * dims[1] + y) * dims[0] + x];
  }
  /// Trilinear sample at voxel coordinates, clamped at the borders.
  double sample(double x, double y, double z) const;
};

/// Trilinear resampling to isotropic target_spacing (mm); the physical
/// extent is preserved to within one voxel.
Volume resample_volume(const Volume& v, double target_spacing);

/// Per-volume shift-scale to zero mean and unit variance (no-op on a
/// constant volume).
void normalize_intensity(Volume& v);

/// Header (JSON) + raw little-endian payload. dtype float64 or float32.
void save_volume(const Volume& v, const std::filesystem::path& header_path,
                 const std::filesystem::path& payload_path,
                 const std::string& dtype = "float32");
Volume load_volume(const std::filesystem::path& header_path,
                   const std::filesystem::path& payload_path = {});

}  // namespace cprgcn

#endif  // CPRGCN_VOLUME_HPP
