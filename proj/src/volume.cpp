// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/volume.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace cprgcn {

double Volume::sample(double x, double y, double z) const {
  auto clampf = [](double v, double hi) {
    return v < 0.0 ? 0.0 : (v > hi ? hi : v);
  };
  x = clampf(x, static_cast<double>(dims[0] - 1));
  y = clampf(y, static_cast<double>(dims[1] - 1));
  z = clampf(z, static_cast<double>(dims[2] - 1));
  const std::size_t x0 = static_cast<std::size_t>(x);
  const std::size_t y0 = static_cast<std::size_t>(y);
  const std::size_t z0 = static_cast<std::size_t>(z);
  const std::size_t x1 = std::min(x0 + 1, dims[0] - 1);
  const std::size_t y1 = std::min(y0 + 1, dims[1] - 1);
  const std::size_t z1 = std::min(z0 + 1, dims[2] - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double fz = z - static_cast<double>(z0);
  const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
  const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
  const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
  const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

Volume resample_volume(const Volume& v, double target_spacing) {
  if (target_spacing <= 0.0)
    throw ContractViolation("resample_volume: spacing must be positive");
  if (v.voxel_count() == 0)
    throw DegenerateInputError("resample_volume: empty volume");

  Volume out;
  out.spacing = {target_spacing, target_spacing, target_spacing};
  for (int a = 0; a < 3; ++a) {
    const double physical = static_cast<double>(v.dims[a]) * v.spacing[a];
    out.dims[a] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(physical / target_spacing)));
  }
  out.data.resize(out.voxel_count());
  for (std::size_t z = 0; z < out.dims[2]; ++z)
    for (std::size_t y = 0; y < out.dims[1]; ++y)
      for (std::size_t x = 0; x < out.dims[0]; ++x)
        out.at(x, y, z) =
            v.sample(static_cast<double>(x) * target_spacing / v.spacing[0],
                     static_cast<double>(y) * target_spacing / v.spacing[1],
                     static_cast<double>(z) * target_spacing / v.spacing[2]);
  return out;
}

void normalize_intensity(Volume& v) {
  if (v.data.empty()) return;
  double mean = 0.0;
  for (double x : v.data) mean += x;
  mean /= static_cast<double>(v.data.size());
  double var = 0.0;
  for (double x : v.data) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.data.size());
  const double sd = std::sqrt(var);
  if (sd == 0.0) {
    for (double& x : v.data) x -= mean;
    return;
  }
  for (double& x : v.data) x = (x - mean) / sd;
}

void save_volume(const Volume& v, const std::filesystem::path& header_path,
                 const std::filesystem::path& payload_path,
                 const std::string& dtype) {
  if (dtype != "float32" && dtype != "float64")
    throw UnsupportedConfigError("save_volume: dtype must be float32/float64");
  nlohmann::json header;
  header["version"] = 1;
  header["dims"] = v.dims;
  header["spacing"] = v.spacing;
  header["dtype"] = dtype;
  header["byte_order"] = "little";
  header["payload"] = payload_path.filename().string();
  std::ofstream hf(header_path, std::ios::trunc);
  if (!hf)
    throw std::runtime_error("cannot open volume header " +
                             header_path.string());
  hf << header.dump(2) << "\n";

  std::ofstream pf(payload_path, std::ios::binary | std::ios::trunc);
  if (!pf)
    throw std::runtime_error("cannot open volume payload " +
                             payload_path.string());
  if (dtype == "float64") {
    pf.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * sizeof(double)));
  } else {
    std::vector<float> f(v.data.begin(), v.data.end());
    pf.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
}

Volume load_volume(const std::filesystem::path& header_path,
                   const std::filesystem::path& payload_path) {
  std::ifstream hf(header_path);
  if (!hf)
    throw std::runtime_error("cannot open volume header " +
                             header_path.string());
  nlohmann::json header;
  hf >> header;
  if (header.value("byte_order", "little") != std::string("little"))
    throw std::runtime_error("volume payload byte order is not little-endian");

  Volume v;
  v.dims = header.at("dims").get<std::array<std::size_t, 3>>();
  v.spacing = header.at("spacing").get<std::array<double, 3>>();
  const std::string dtype = header.value("dtype", "float64");

  std::filesystem::path pp = payload_path;
  if (pp.empty())
    pp = header_path.parent_path() / header.at("payload").get<std::string>();
  std::ifstream pf(pp, std::ios::binary);
  if (!pf)
    throw std::runtime_error("cannot open volume payload " + pp.string());

  const std::size_t n = v.voxel_count();
  v.data.resize(n);
  if (dtype == "float64") {
    pf.read(reinterpret_cast<char*>(v.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  } else if (dtype == "float32") {
    std::vector<float> f(n);
    pf.read(reinterpret_cast<char*>(f.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    std::copy(f.begin(), f.end(), v.data.begin());
  } else {
    throw UnsupportedConfigError("load_volume: unsupported dtype " + dtype);
  }
  if (!pf) throw std::runtime_error("volume payload truncated: " + pp.string());
  return v;
}

}  // namespace cprgcn
