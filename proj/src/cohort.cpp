// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace cprgcn {
namespace {

using nlohmann::json;

constexpr double kTwoPi = 6.283185307179586476925;

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return v * c + a.cross(v) * s + a * (a.dot(v) * (1.0 - c));
}

Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 ref = std::abs(d.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  return d.cross(ref).normalized();
}

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int sample_count(std::mt19937_64& rng, const std::vector<double>& dist) {
  const double u = uniform_in(rng, 0.0, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(dist.size()) - 1;
}

/// Grows a unit-step curve of the requested arc length, bending at `curv`
/// radians per voxel about a fixed perpendicular axis with a small random
/// wobble. Components of the heading are reflected at the box walls so the
/// curve never leaves [lo, hi].
std::vector<Vec3> grow_curve(std::mt19937_64& rng, Vec3 p, Vec3 dir,
                             double length, double curv, double lo,
                             double hi) {
  dir = dir.normalized();
  Vec3 axis = any_perpendicular(dir);
  axis = rotate_about(axis, dir, uniform_in(rng, 0.0, kTwoPi));
  std::vector<Vec3> points{p};
  const int steps = std::max(2, static_cast<int>(std::llround(length)));
  std::normal_distribution<double> wobble(0.0, 0.02);
  for (int i = 0; i < steps; ++i) {
    dir = rotate_about(dir, axis, curv);
    dir = rotate_about(dir, any_perpendicular(dir), wobble(rng));
    dir = dir.normalized();
    Vec3 next = p + dir;
    auto reflect = [&](double& coord, double& d) {
      if (coord < lo || coord > hi) {
        d = -d;
        coord = std::clamp(coord, lo, hi);
      }
    };
    reflect(next.x, dir.x);
    reflect(next.y, dir.y);
    reflect(next.z, dir.z);
    dir = dir.normalized();
    // Keep the bend axis perpendicular to the heading after a reflection.
    axis = (axis - dir * axis.dot(dir)).normalized();
    p = next;
    points.push_back(p);
  }
  return points;
}

Vec3 tangent_at(const std::vector<Vec3>& pts, std::size_t i) {
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = std::min(i + 1, pts.size() - 1);
  return (pts[b] - pts[a]).normalized();
}

BranchRule make_rule(Label label, std::optional<Label> parent,
                     std::vector<double> count_dist, BranchGeometry geom) {
  BranchRule r;
  r.label = label;
  r.parent = parent;
  r.count_dist = std::move(count_dist);
  r.geom = geom;
  return r;
}

/// Allowed parent class for every non-root class.
std::optional<Label> allowed_parent(Label label) {
  switch (label) {
    case Label::LAD:
    case Label::LCX:
    case Label::RI:
      return Label::LM;
    case Label::D:
    case Label::S:
      return Label::LAD;
    case Label::OM:
      return Label::LCX;
    case Label::AM:
    case Label::RPDA:
    case Label::RPLB:
      return Label::RCA;
    case Label::LM:
    case Label::RCA:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

TreeTemplate TreeTemplate::standard() {
  // Each class gets a distinct (length, curvature, branch angle, azimuth)
  // signature so the position features carry most of the label signal, as
  // the shape statistics of real coronary anatomy do. Radius bands are also
  // separated per class so the image cubes reinforce it; D and S almost
  // share one geometry band on purpose, leaving the vessel radius — visible
  // only in the image — as the dominant cue that separates them.
  const BranchGeometry diagonal_band{18,   24,  0.012, 0.020, 1.45, 1.70,
                                     0.30, 0.75, 0.95,  0.4,   1.3};
  BranchGeometry septal_band = diagonal_band;
  septal_band.radius_min = 0.60;
  septal_band.radius_max = 0.85;
  // Septals leave the LAD on the far side of the diagonals, but the bands
  // overlap: geometry separates D from S only weakly, the radius gap does
  // the rest.
  septal_band.azim_lo = 1.15;
  septal_band.azim_hi = 1.9;

  TreeTemplate t;
  t.rules = {
      make_rule(Label::LM, std::nullopt, {0.0, 1.0},
                {12, 16, 0.0, 0.004, 2.70, 3.00, 0, 0, 0}),
      make_rule(Label::RCA, std::nullopt, {0.03, 0.97},
                {40, 48, 0.035, 0.050, 2.40, 2.70, 0, 0, 0}),
      make_rule(Label::LAD, Label::LM, {0.0, 1.0},
                {38, 48, 0.004, 0.010, 2.00, 2.30, 0.97, 1.0, 0.30, 0.0, 0.9}),
      make_rule(Label::LCX, Label::LM, {0.0, 1.0},
                {24, 30, 0.050, 0.065, 1.70, 2.00, 0.97, 1.0, 1.15, 1.6, 2.5}),
      make_rule(Label::RI, Label::LM, {0.65, 0.35},
                {14, 18, 0.000, 0.006, 1.35, 1.60, 0.97, 1.0, 0.75, 3.2, 4.1}),
      make_rule(Label::D, Label::LAD, {0.20, 0.50, 0.30}, diagonal_band),
      make_rule(Label::S, Label::LAD, {0.30, 0.50, 0.20}, septal_band),
      make_rule(Label::OM, Label::LCX, {0.20, 0.50, 0.30},
                {10, 14, 0.000, 0.008, 0.90, 1.15, 0.30, 0.85, 0.70, 1.2,
                 2.1}),
      make_rule(Label::AM, Label::RCA, {0.25, 0.75},
                {20, 24, 0.000, 0.006, 1.10, 1.35, 0.35, 0.55, 1.35, 0.7,
                 1.6}),
      make_rule(Label::RPDA, Label::RCA, {0.20, 0.80},
                {28, 36, 0.010, 0.020, 1.20, 1.45, 0.92, 1.0, 0.55, 2.8,
                 3.7}),
      make_rule(Label::RPLB, Label::RCA, {0.30, 0.50, 0.20},
                {12, 16, 0.030, 0.040, 0.70, 0.95, 0.92, 1.0, 1.25, 4.4,
                 5.3}),
  };
  return t;
}

std::vector<Centerline> SyntheticTree::centerlines() const {
  std::vector<Centerline> lines;
  lines.reserve(branches.size());
  for (const auto& b : branches) lines.push_back(b.line);
  return lines;
}

SyntheticTree generate_tree(std::mt19937_64& rng, const TreeTemplate& tmpl,
                            const std::array<std::size_t, 3>& dims) {
  const double lo = 13.0;
  const double hi =
      static_cast<double>(*std::min_element(dims.begin(), dims.end())) - 14.0;
  if (hi <= lo) throw DegenerateInputError("volume too small for a tree");

  SyntheticTree tree;
  std::vector<Label> placed;  // label of branches[i]
  for (const auto& rule : tmpl.rules) {
    std::vector<std::size_t> parents;
    if (rule.parent) {
      for (std::size_t i = 0; i < placed.size(); ++i)
        if (placed[i] == *rule.parent) parents.push_back(i);
      if (parents.empty()) continue;  // parent class absent from this tree
    }
    const int count = sample_count(rng, rule.count_dist);
    for (int c = 0; c < count; ++c) {
      const auto& g = rule.geom;
      Vec3 start, dir;
      if (!rule.parent) {
        if (rule.label == Label::LM) {
          start = {lo + 4 + uniform_in(rng, -2, 2),
                   36 + uniform_in(rng, -3, 3), 30 + uniform_in(rng, -3, 3)};
          dir = Vec3{0.9, uniform_in(rng, 0.1, 0.4),
                     uniform_in(rng, 0.0, 0.3)};
        } else {
          start = {hi - 8 + uniform_in(rng, -2, 2),
                   lo + 7 + uniform_in(rng, -2, 2),
                   26 + uniform_in(rng, -3, 3)};
          dir = Vec3{uniform_in(rng, -0.3, -0.1), 0.85,
                     uniform_in(rng, 0.2, 0.5)};
        }
      } else {
        const std::size_t pi =
            parents[std::uniform_int_distribution<std::size_t>(
                0, parents.size() - 1)(rng)];
        const auto& pts = tree.branches[pi].line.points;
        const double f = uniform_in(rng, g.attach_lo, g.attach_hi);
        const std::size_t k = static_cast<std::size_t>(
            std::llround(f * static_cast<double>(pts.size() - 1)));
        start = pts[k];
        const Vec3 tangent = tangent_at(pts, k);
        Vec3 axis = any_perpendicular(tangent);
        axis = rotate_about(axis, tangent,
                            uniform_in(rng, g.azim_lo, g.azim_hi));
        dir = rotate_about(tangent, axis,
                           g.branch_angle + uniform_in(rng, -0.15, 0.15));
      }
      SyntheticBranch b;
      b.line.label = class_names()[static_cast<int>(rule.label)];
      b.line.points = grow_curve(rng, start, dir,
                                 uniform_in(rng, g.len_min, g.len_max),
                                 uniform_in(rng, g.curv_min, g.curv_max), lo,
                                 hi);
      b.radius = uniform_in(rng, g.radius_min, g.radius_max);
      // Partial-volume effect: vessels thinner than ~1.5 voxels lose peak
      // contrast roughly in proportion to their radius, like thin vessels
      // in CT angiography.
      b.intensity = uniform_in(rng, 0.85, 1.0) *
                    std::clamp(b.radius / 1.5, 0.55, 1.0);
      tree.branches.push_back(std::move(b));
      placed.push_back(rule.label);
    }
  }
  return tree;
}

Cohort generate_cohort(const CohortSpec& spec, const TreeTemplate& tmpl) {
  if (spec.tree_count <= 0)
    throw DegenerateInputError("cohort needs at least one tree");
  Cohort cohort;
  cohort.spec = spec;
  std::mt19937_64 rng(spec.seed);
  for (int i = 0; i < spec.tree_count; ++i) {
    SyntheticTree tree = generate_tree(rng, tmpl, spec.dims);
    tree.id = i;
    cohort.trees.push_back(std::move(tree));
  }
  if (spec.attack_fraction > 0.0)
    apply_data_attack(cohort, spec.attack_fraction);
  return cohort;
}

Volume rasterize_volume(const SyntheticTree& tree, const CohortSpec& spec) {
  Volume vol;
  vol.dims = spec.dims;
  vol.spacing = {spec.spacing_mm, spec.spacing_mm, spec.spacing_mm};
  vol.data.assign(spec.dims[0] * spec.dims[1] * spec.dims[2], 0.0);
  const auto [nx, ny, nz] = spec.dims;

  // Max-blend of per-point Gaussian splats; the points are one voxel apart,
  // which approximates a continuous tube to well below the noise floor.
  for (const auto& branch : tree.branches) {
    const double sigma = branch.radius / 2.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const int reach = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    for (const Vec3& p : branch.line.points) {
      const int x0 = std::max(0, static_cast<int>(std::floor(p.x)) - reach);
      const int y0 = std::max(0, static_cast<int>(std::floor(p.y)) - reach);
      const int z0 = std::max(0, static_cast<int>(std::floor(p.z)) - reach);
      const int x1 = std::min<int>(static_cast<int>(nx) - 1,
                                   static_cast<int>(std::ceil(p.x)) + reach);
      const int y1 = std::min<int>(static_cast<int>(ny) - 1,
                                   static_cast<int>(std::ceil(p.y)) + reach);
      const int z1 = std::min<int>(static_cast<int>(nz) - 1,
                                   static_cast<int>(std::ceil(p.z)) + reach);
      for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double dx = x - p.x, dy = y - p.y, dz = z - p.z;
            const double v = branch.intensity *
                             std::exp(-(dx * dx + dy * dy + dz * dz) * inv);
            double& cell =
                vol.data[(static_cast<std::size_t>(z) * ny + y) * nx + x];
            cell = std::max(cell, v);
          }
    }
  }

  if (spec.noise > 0.0) {
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(tree.id) + 1,
                      std::uint64_t{0x9e3779b97f4a7c15ULL}};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> noise(0.0, spec.noise);
    for (double& v : vol.data) v += noise(rng);
  }
  return vol;
}

void apply_data_attack(Cohort& cohort, double fraction) {
  if (fraction < 0.0 || fraction > 1.0)
    throw DegenerateInputError("attack fraction must be in [0, 1]");
  std::mt19937_64 rng(cohort.spec.seed ^ 0xa77ac4ULL);
  const std::string lm = class_names()[static_cast<int>(Label::LM)];
  const std::string rca = class_names()[static_cast<int>(Label::RCA)];
  for (auto& tree : cohort.trees) {
    if (uniform_in(rng, 0.0, 1.0) >= fraction) continue;
    std::erase_if(tree.branches, [&](const SyntheticBranch& b) {
      return b.line.label == lm || b.line.label == rca;
    });
    tree.attacked = true;
  }
}

bool validate_tree_labels(const std::vector<Centerline>& lines,
                          double merge_radius) {
  std::vector<bool> label_present(kNumClasses, false);
  std::vector<Label> labels;
  for (const auto& line : lines) {
    const Label l = label_from_string(line.label);
    labels.push_back(l);
    label_present[static_cast<int>(l)] = true;
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto parent = allowed_parent(labels[i]);
    if (!parent) continue;  // root classes may start anywhere
    if (!label_present[static_cast<int>(*parent)]) continue;  // orphaned
    bool attached = false;
    const Vec3 start = lines[i].points.front();
    for (std::size_t j = 0; j < lines.size() && !attached; ++j) {
      if (j == i || labels[j] != *parent) continue;
      for (const Vec3& p : lines[j].points)
        if ((p - start).norm() <= merge_radius) {
          attached = true;
          break;
        }
    }
    if (!attached) return false;
  }
  return true;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["spec"] = {{"tree_count", cohort.spec.tree_count},
                      {"seed", cohort.spec.seed},
                      {"dims", cohort.spec.dims},
                      {"spacing_mm", cohort.spec.spacing_mm},
                      {"noise", cohort.spec.noise},
                      {"attack_fraction", cohort.spec.attack_fraction}};
  manifest["trees"] = json::array();
  for (const auto& tree : cohort.trees) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "tree_%04d", tree.id);
    const std::string lines_name = std::string(stem) + ".centerlines.json";
    const std::string vol_name = std::string(stem) + ".vol.json";
    const std::string raw_name = std::string(stem) + ".vol.raw";
    save_centerlines(tree.centerlines(), dir / lines_name);
    save_volume(rasterize_volume(tree, cohort.spec), dir / vol_name,
                dir / raw_name);
    manifest["trees"].push_back({{"id", tree.id},
                                 {"attacked", tree.attacked},
                                 {"centerlines", lines_name},
                                 {"volume", vol_name}});
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
}

CohortManifest read_cohort_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " +
                                    (dir / "manifest.json").string());
  json manifest = json::parse(in);
  CohortManifest m;
  const auto& s = manifest.at("spec");
  m.spec.tree_count = s.at("tree_count").get<int>();
  m.spec.seed = s.at("seed").get<std::uint64_t>();
  m.spec.dims = s.at("dims").get<std::array<std::size_t, 3>>();
  m.spec.spacing_mm = s.at("spacing_mm").get<double>();
  m.spec.noise = s.at("noise").get<double>();
  m.spec.attack_fraction = s.at("attack_fraction").get<double>();
  for (const auto& t : manifest.at("trees")) {
    CohortManifestEntry e;
    e.id = t.at("id").get<int>();
    e.attacked = t.at("attacked").get<bool>();
    e.centerlines = dir / t.at("centerlines").get<std::string>();
    e.volume_header = dir / t.at("volume").get<std::string>();
    m.trees.push_back(std::move(e));
  }
  return m;
}

}  // namespace cprgcn
