// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_GEOMETRY_HPP
#define CPRGCN_GEOMETRY_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cprgcn/tensor.hpp"

namespace cprgcn {

class MalformedTreeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const;
};

/// The eleven anatomical classes, in the fixed reporting order.
enum class Label : int {
  RCA = 0,
  RPDA,
  RPLB,
  AM,
  LM,
  LAD,
  LCX,
  RI,
  D,
  OM,
  S
};

inline constexpr int kNumClasses = 11;
const std::array<std::string, kNumClasses>& class_names();
std::string to_string(Label label);
Label label_from_string(const std::string& name);

struct Centerline {
  std::string label;  // anatomical class; may be empty for unlabeled input
  std::vector<Vec3> points;
};

struct Segment {
  std::vector<Vec3> points;
  int parent = -1;      // index into the segment list, -1 for roots
  int source_branch = -1;
  std::string label;
};

struct SegmentGraph {
  std::vector<Segment> nodes;
  std::vector<double> adjacency;  // n*n row-major, (i,j)=1 iff i parent of j

  std::size_t size() const { return nodes.size(); }
  double at(std::size_t i, std::size_t j) const {
    return adjacency[i * nodes.size() + j];
  }
  std::size_t edge_count() const;
  std::size_t root_count() const;
};

struct LocalFrame {
  Vec3 origin;
  Vec3 x_axis, y_axis, z_axis;

  Vec3 to_local(const Vec3& p) const {
    const Vec3 d = p - origin;
    return {x_axis.dot(d), y_axis.dot(d), z_axis.dot(d)};
  }
};

struct SctS2 {
  double r = 0, theta = 0, phi = 0;
  // Row-major [[sin(theta), sin(phi)], [cos(theta), cos(phi)]].
  std::array<double, 4> m{0, 0, 1, 1};
};

inline constexpr int kPositionFeatureDim = 35;
using PositionFeatures = std::array<double, kPositionFeatureDim>;

// --- operations -----------------------------------------------------------

/// Centripetal Catmull-Rom through all control points; boundary tangents are
/// synthesized by reflecting the end points.
Centerline catmull_rom_smooth(const Centerline& line, int samples_per_span);

/// Arc-length resampling at the closest uniform step to `spacing`; the first
/// and last input points are preserved exactly.
Centerline resample_uniform(const Centerline& line, double spacing);

double polyline_length(const std::vector<Vec3>& points);

/// Splits branch centerlines at bifurcations. Children starting within
/// merge_radius of one another share a single junction on the parent.
std::vector<Segment> split_into_segments(const std::vector<Centerline>& lines,
                                         double merge_radius);

SegmentGraph build_graph(const std::vector<Segment>& segments);

LocalFrame local_frame(const Segment& seg);

/// Spherical transform of a point already expressed in a local frame.
/// Poles and the origin use the phi = 0 / all-zero conventions.
SctS2 sct_s2(const Vec3& p);

/// 35-real position feature vector. Positions are taken relative to
/// `origin` (a tree-level reference point such as the bounding-box centre)
/// and expressed in the global axes, so the features translate away with the
/// tree but rotate with it. `normalization` is the containing tree's
/// bounding-box diagonal (used to scale positions; pass <= 0 to skip).
PositionFeatures position_features(const Segment& seg, const Vec3& origin,
                                   double normalization);

double bounding_box_diagonal(const std::vector<Segment>& segments);
Vec3 bounding_box_center(const std::vector<Segment>& segments);

// --- centerline file format ------------------------------------------------

void save_centerlines(const std::vector<Centerline>& lines,
                      const std::filesystem::path& path);
std::vector<Centerline> load_centerlines(const std::filesystem::path& path);

}  // namespace cprgcn

#endif  // CPRGCN_GEOMETRY_HPP
