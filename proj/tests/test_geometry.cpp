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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cprgcn/geometry.hpp"
#include "doctest.h"

using namespace cprgcn;

namespace {

constexpr double kPi = 3.14159265358979323846;

Centerline line_from(std::vector<Vec3> pts, std::string label = "") {
  Centerline c;
  c.label = std::move(label);
  c.points = std::move(pts);
  return c;
}

/// Spherical forward map matching the implemented inverse: the first M
/// column holds (sin theta, cos theta), the second (sin phi, cos phi), with
/// x = r sin(theta) sin(phi), y = r sin(theta) cos(phi), z = r cos(theta).
Vec3 spherical_forward(const SctS2& s) {
  return {s.r * s.m[0] * s.m[1], s.r * s.m[0] * s.m[3], s.r * s.m[2]};
}

}  // namespace

TEST_CASE("catmull-rom keeps collinear input collinear") {
  Centerline line = line_from({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {3, 3, 3}});
  Centerline smooth = catmull_rom_smooth(line, 8);
  for (const Vec3& p : smooth.points) {
    CHECK(std::abs(p.x - p.y) < 1e-9);
    CHECK(std::abs(p.y - p.z) < 1e-9);
  }
}

TEST_CASE("catmull-rom interpolates every control point") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  Centerline line;
  for (int i = 0; i < 7; ++i)
    line.points.push_back({u(rng) + 3.0 * i, u(rng), u(rng)});
  const int samples = 5;
  Centerline smooth = catmull_rom_smooth(line, samples);
  REQUIRE(smooth.points.size() ==
          (line.points.size() - 1) * samples + 1);
  for (std::size_t i = 0; i < line.points.size(); ++i) {
    const Vec3 got = smooth.points[i * samples];
    CHECK((got - line.points[i]).norm() < 1e-12);
  }
}

TEST_CASE("catmull-rom stays within 2% of a quarter circle") {
  const double radius = 10.0;
  Centerline line;
  for (int i = 0; i <= 6; ++i) {
    const double a = kPi / 2.0 * i / 6.0;
    line.points.push_back({radius * std::cos(a), radius * std::sin(a), 0});
  }
  Centerline smooth = catmull_rom_smooth(line, 16);
  double worst = 0;
  for (const Vec3& p : smooth.points)
    worst = std::max(worst, std::abs(std::hypot(p.x, p.y) - radius));
  CHECK(worst < 0.02 * radius);
}

TEST_CASE("catmull-rom rejects degenerate input") {
  CHECK_THROWS_AS(catmull_rom_smooth(line_from({{0, 0, 0}}), 4),
                  DegenerateInputError);
}

TEST_CASE("resample_uniform point counts") {
  Centerline line = line_from({{0, 0, 0}, {100, 0, 0}});
  CHECK(resample_uniform(line, 10.0).points.size() == 11);
  CHECK(resample_uniform(line, 500.0).points.size() == 2);

  Centerline out = resample_uniform(line, 10.0);
  CHECK((out.points.front() - line.points.front()).norm() == 0.0);
  CHECK((out.points.back() - line.points.back()).norm() == 0.0);
}

TEST_CASE("resample_uniform arc-length gaps on a helix within 1%") {
  // Gentle helix: at 10-voxel spacing on a radius-40 coil, the chord
  // between consecutive samples tracks the arc length to ~0.3%.
  Centerline helix;
  for (int i = 0; i <= 1500; ++i) {
    const double t = i * 0.004;
    helix.points.push_back({40 * std::cos(t), 40 * std::sin(t), 5 * t});
  }
  Centerline out = resample_uniform(helix, 10.0);
  REQUIRE(out.points.size() >= 10);
  const double total = polyline_length(helix.points);
  const double step = total / static_cast<double>(out.points.size() - 1);
  CHECK(step == doctest::Approx(10.0).epsilon(0.05));
  for (std::size_t i = 1; i < out.points.size(); ++i) {
    const double chord = (out.points[i] - out.points[i - 1]).norm();
    CHECK(chord == doctest::Approx(step).epsilon(0.01));
  }
}

TEST_CASE("split_into_segments reproduces the reference RCA topology") {
  // RCA gives off AM mid-branch; R-PDA and R-PLB leave from the RCA's end
  // point: 5 segments (RCA split into 2), graph with 4 edges.
  Centerline rca, am, rpda, rplb;
  for (int i = 0; i <= 40; ++i) rca.points.push_back({0, double(i), 0});
  rca.label = "RCA";
  for (int i = 0; i <= 15; ++i)
    am.points.push_back({double(i), 20.0 + 0.4 * i, 0});
  am.label = "AM";
  for (int i = 0; i <= 15; ++i)
    rpda.points.push_back({double(i), 40.0 + double(i), 0});
  rpda.label = "R-PDA";
  for (int i = 0; i <= 15; ++i)
    rplb.points.push_back({-double(i), 40.0 + double(i), 0});
  rplb.label = "R-PLB";

  const auto segments =
      split_into_segments({rca, am, rpda, rplb}, 3.0);
  CHECK(segments.size() == 5);
  int rca_nodes = 0;
  for (const auto& s : segments)
    if (s.label == "RCA") ++rca_nodes;
  CHECK(rca_nodes == 2);

  const SegmentGraph graph = build_graph(segments);
  CHECK(graph.size() == 5);
  CHECK(graph.edge_count() == 4);
  CHECK(graph.root_count() == 1);
}

TEST_CASE("single unbranched line gives one segment, no edges") {
  Centerline line;
  for (int i = 0; i <= 30; ++i) line.points.push_back({double(i), 0, 0});
  line.label = "LAD";
  const auto segments = split_into_segments({line}, 3.0);
  CHECK(segments.size() == 1);
  CHECK(build_graph(segments).edge_count() == 0);
}

TEST_CASE("LM trifurcation merges into one junction") {
  Centerline lm, lad, lcx, ri;
  for (int i = 0; i <= 14; ++i) lm.points.push_back({double(i), 0, 0});
  lm.label = "LM";
  // The three children start within the merge radius of the LM end point.
  for (int i = 0; i <= 20; ++i)
    lad.points.push_back({14.0 + double(i), 0.5 + 0.3 * i, 0});
  lad.label = "LAD";
  for (int i = 0; i <= 20; ++i)
    lcx.points.push_back({14.0 + double(i), -0.5 - 0.8 * i, 0});
  lcx.label = "LCX";
  for (int i = 0; i <= 20; ++i)
    ri.points.push_back({14.0 + double(i), 0, 0.9 * i});
  ri.label = "RI";

  const auto segments = split_into_segments({lm, lad, lcx, ri}, 3.0);
  CHECK(segments.size() == 4);
  const SegmentGraph graph = build_graph(segments);
  CHECK(graph.edge_count() == 3);
  // All three edges leave the LM node.
  std::size_t lm_index = 99;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i].label == "LM") lm_index = i;
  REQUIRE(lm_index != 99);
  std::size_t out_edges = 0;
  for (std::size_t j = 0; j < graph.size(); ++j)
    out_edges += static_cast<std::size_t>(graph.at(lm_index, j));
  CHECK(out_edges == 3);
}

TEST_CASE("build_graph handles empty input and detects cycles") {
  CHECK(build_graph({}).size() == 0);

  Segment a, b;
  a.points = {{0, 0, 0}, {1, 0, 0}};
  b.points = {{1, 0, 0}, {2, 0, 0}};
  a.parent = 1;
  b.parent = 0;
  CHECK_THROWS_AS(build_graph({a, b}), MalformedTreeError);
}

TEST_CASE("two independent roots form a two-component forest") {
  Centerline left, right;
  for (int i = 0; i <= 20; ++i) left.points.push_back({double(i), 0, 0});
  left.label = "LM";
  for (int i = 0; i <= 20; ++i)
    right.points.push_back({double(i), 100, 0});
  right.label = "RCA";
  const auto segments = split_into_segments({left, right}, 3.0);
  const SegmentGraph graph = build_graph(segments);
  CHECK(graph.size() == 2);
  CHECK(graph.root_count() == 2);
  CHECK(graph.edge_count() == graph.size() - graph.root_count());
}

TEST_CASE("local_frame matches the hand-worked example") {
  Segment seg;
  seg.points = {{0, 0, 0}, {0, 0, 1}, {0, 1, 1}};
  const LocalFrame f = local_frame(seg);
  CHECK((f.z_axis - Vec3{0, 0, 1}).norm() < 1e-12);
  CHECK((f.y_axis - Vec3{0, 1, 0}).norm() < 1e-12);
  CHECK((f.x_axis - Vec3{1, 0, 0}).norm() < 1e-12);
}

TEST_CASE("local_frame fallback on straight segments") {
  Segment seg;
  seg.points = {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}};
  const LocalFrame f = local_frame(seg);
  CHECK(std::abs(f.y_axis.dot(f.z_axis)) < 1e-12);
  CHECK(std::abs(f.y_axis.norm() - 1.0) < 1e-12);
}

TEST_CASE("local_frame axes are orthonormal and right-handed") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    Segment seg;
    for (int i = 0; i < 4; ++i) seg.points.push_back({u(rng), u(rng), u(rng)});
    if ((seg.points[1] - seg.points[0]).norm() < 1e-6) continue;
    const LocalFrame f = local_frame(seg);
    CHECK(std::abs(f.x_axis.norm() - 1.0) < 1e-12);
    CHECK(std::abs(f.y_axis.norm() - 1.0) < 1e-12);
    CHECK(std::abs(f.z_axis.norm() - 1.0) < 1e-12);
    CHECK(std::abs(f.x_axis.dot(f.y_axis)) < 1e-12);
    CHECK(std::abs(f.x_axis.dot(f.z_axis)) < 1e-12);
    CHECK(std::abs(f.y_axis.dot(f.z_axis)) < 1e-12);
    CHECK((f.x_axis.cross(f.y_axis) - f.z_axis).norm() < 1e-11);
  }
}

TEST_CASE("sct_s2 pole and origin conventions") {
  const SctS2 pole = sct_s2({0, 0, 5});
  CHECK(pole.r == doctest::Approx(5.0));
  CHECK(pole.theta == doctest::Approx(0.0));
  CHECK(pole.phi == doctest::Approx(0.0));

  const SctS2 origin = sct_s2({0, 0, 0});
  CHECK(origin.r == 0.0);
  CHECK(origin.theta == 0.0);
  CHECK(origin.phi == 0.0);
}

TEST_CASE("sct_s2 round trip within 1e-10") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-7, 7);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    if (std::hypot(p.x, p.y) < 1e-3) continue;  // off the poles
    const Vec3 back = spherical_forward(sct_s2(p));
    CHECK((back - p).norm() < 1e-10);
  }
}

TEST_CASE("sct_s2 M-matrix is stable across the phi wrap") {
  const double eps = 1e-3;
  // phi is measured from +y toward +x, so x = r sin(theta) sin(phi):
  // a small positive x gives phi near 0, a small negative x phi near 2 pi.
  const SctS2 a = sct_s2({std::sin(eps), std::cos(eps), 0.3});
  const SctS2 b = sct_s2({-std::sin(eps), std::cos(eps), 0.3});
  CHECK(std::abs(a.phi - eps * std::sqrt(1.0)) < 1e-2);
  CHECK(b.phi > 2.0 * kPi - 1e-2);
  double m_dist = 0;
  for (int i = 0; i < 4; ++i) m_dist += std::abs(a.m[i] - b.m[i]);
  CHECK(m_dist < 1e-2);  // no 2 pi jump in the feature representation
}

TEST_CASE("position_features layout and invariants") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 200; ++trial) {
    Segment seg;
    for (int i = 0; i < 5; ++i)
      seg.points.push_back({u(rng), u(rng), u(rng)});
    if ((seg.points[1] - seg.points[0]).norm() < 1e-6) continue;
    const PositionFeatures f = position_features(seg, {1.5, -2.0, 0.5}, 25.0);
    // Five blocks of 7 reals: [xyz, M]; every M entry lies in [-1, 1] and
    // each M column (sin, cos pair) has unit norm or is the origin filler.
    for (int block = 0; block < 5; ++block) {
      const double* m = f.data() + block * 7 + 3;
      for (int i = 0; i < 4; ++i) {
        CHECK(m[i] >= -1.0 - 1e-12);
        CHECK(m[i] <= 1.0 + 1e-12);
      }
      const double col1 = std::hypot(m[0], m[2]);
      const double col2 = std::hypot(m[1], m[3]);
      CHECK(col1 == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(col2 == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("position_features is translation invariant") {
  // Points chosen so no encoded vector sits on a pole of the spherical
  // transform, where its phi convention is discontinuous.
  Segment seg;
  seg.points = {{1, 2, 3}, {4, 2, 1}, {6, 5, 2}, {9, 7, 0}};
  const Vec3 origin = bounding_box_center({seg});
  const PositionFeatures base = position_features(seg, origin, 12.0);
  const Vec3 offset{103.5, -44.0, 12.25};
  Segment moved = seg;
  for (Vec3& p : moved.points) p = p + offset;
  // The tree-level origin tracks the translation, so features are unchanged.
  const PositionFeatures shifted =
      position_features(moved, bounding_box_center({moved}), 12.0);
  for (int i = 0; i < kPositionFeatureDim; ++i)
    CHECK(shifted[i] == doctest::Approx(base[i]).epsilon(1e-9));
}

TEST_CASE("position_features rotate with the tree") {
  // Rotating the tree 90 degrees about z must rotate the encoded positions
  // and directions rather than leave them fixed: x -> y, y -> -x.
  Segment seg;
  seg.points = {{1, 2, 3}, {4, 2, 1}, {6, 5, 2}, {9, 5, 0}};
  Segment rot;
  for (const Vec3& p : seg.points) rot.points.push_back({-p.y, p.x, p.z});
  const PositionFeatures a =
      position_features(seg, bounding_box_center({seg}), 12.0);
  const PositionFeatures b =
      position_features(rot, bounding_box_center({rot}), 12.0);
  for (int block = 0; block < 5; ++block) {
    const double* pa = a.data() + block * 7;
    const double* pb = b.data() + block * 7;
    CHECK(pb[0] == doctest::Approx(-pa[1]).epsilon(1e-9));
    CHECK(pb[1] == doctest::Approx(pa[0]).epsilon(1e-9));
    CHECK(pb[2] == doctest::Approx(pa[2]).epsilon(1e-9));
  }
}

TEST_CASE("forest property holds across random forests") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 60);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Centerline> lines;
    // One long trunk plus children sprouting from its interior.
    Centerline trunk;
    for (int i = 0; i <= 50; ++i) trunk.points.push_back({double(i), 0, 0});
    trunk.label = "RCA";
    lines.push_back(trunk);
    const int kids = 1 + static_cast<int>(u(rng)) % 4;
    for (int k = 0; k < kids; ++k) {
      Centerline kid;
      const double x0 = 10.0 + u(rng) * 0.5;
      for (int i = 0; i <= 15; ++i)
        kid.points.push_back({x0 + 0.3 * i, 1.0 + double(i), u(rng) * 0.05});
      kid.label = "AM";
      lines.push_back(kid);
    }
    const auto segments = split_into_segments(lines, 3.0);
    const SegmentGraph g = build_graph(segments);
    CHECK(g.edge_count() == g.size() - g.root_count());
  }
}

TEST_CASE("centerline files round trip and demand a version") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "cprgcn_lines";
  fs::create_directories(dir);
  std::vector<Centerline> lines;
  lines.push_back(line_from({{0, 0, 0}, {1.5, 2.25, -3.125}}, "LM"));
  lines.push_back(line_from({{4, 4, 4}, {5, 5, 5}, {6, 6.5, 7}}, "LAD"));
  save_centerlines(lines, dir / "tree.json");
  const auto loaded = load_centerlines(dir / "tree.json");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].label == "LM");
  CHECK(loaded[1].points.size() == 3);
  CHECK((loaded[1].points[2] - Vec3{6, 6.5, 7}).norm() == 0.0);

  std::ofstream bad(dir / "bad.json");
  bad << "{\"branches\": []}\n";
  bad.close();
  CHECK_THROWS(load_centerlines(dir / "bad.json"));
}

TEST_CASE("label names round trip in the fixed class order") {
  CHECK(class_names()[0] == "RCA");
  CHECK(class_names()[10] == "S");
  for (int c = 0; c < kNumClasses; ++c)
    CHECK(static_cast<int>(label_from_string(class_names()[c])) == c);
  CHECK_THROWS_AS(label_from_string("LIMA"), InvalidLabelError);
}
