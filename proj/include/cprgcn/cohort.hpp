// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#ifndef CPRGCN_COHORT_HPP
#define CPRGCN_COHORT_HPP

#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "cprgcn/geometry.hpp"
#include "cprgcn/volume.hpp"

namespace cprgcn {

/// Geometry signature of one anatomical class: branch length, turn rate and
/// vessel radius bands, plus where on the parent the branch sprouts.
struct BranchGeometry {
  double len_min = 20, len_max = 30;       // voxels
  double curv_min = 0, curv_max = 0.01;    // radians per voxel of arc
  double radius_min = 1, radius_max = 2;   // voxels, must stay in (0, 6)
  double attach_lo = 0.3, attach_hi = 0.8; // fraction along the parent
  double branch_angle = 0.9;               // radians off the parent tangent
  // Azimuth band around the parent tangent, measured from a deterministic
  // perpendicular reference. Real side branches leave their parent on a
  // characteristic side (diagonals anterior, septals into the septum), so
  // each class gets its own band instead of a uniform spin.
  double azim_lo = 0.0, azim_hi = 6.283185307179586;
};

struct BranchRule {
  Label label = Label::LM;
  std::optional<Label> parent;          // nullopt for roots
  std::vector<double> count_dist;       // probability of count 0,1,...
  BranchGeometry geom;
};

struct TreeTemplate {
  std::vector<BranchRule> rules;
  /// The standard template follows the textbook parent rules: LAD/LCX/RI
  /// from LM, D/S from LAD, OM from LCX, AM/R-PDA/R-PLB from RCA.
  static TreeTemplate standard();
};

struct CohortSpec {
  int tree_count = 200;
  std::uint64_t seed = 1;
  std::array<std::size_t, 3> dims{72, 72, 72};
  double spacing_mm = 0.5;
  double noise = 0.05;            // additive Gaussian sigma
  double attack_fraction = 0.0;   // trees losing their LM/RCA centerlines
};

struct SyntheticBranch {
  Centerline line;
  double radius = 1.0;     // voxels
  double intensity = 1.0;  // tube peak
};

struct SyntheticTree {
  int id = 0;
  bool attacked = false;
  std::vector<SyntheticBranch> branches;

  std::vector<Centerline> centerlines() const;
};

struct Cohort {
  CohortSpec spec;
  std::vector<SyntheticTree> trees;
};

/// Deterministic given the rng state; branch centerlines are smooth 3D
/// curves that stay inside the dims box with a cube-radius margin.
SyntheticTree generate_tree(std::mt19937_64& rng, const TreeTemplate& tmpl,
                            const std::array<std::size_t, 3>& dims);

/// Pure function of (spec.seed, spec); applies the data attack when
/// spec.attack_fraction > 0.
Cohort generate_cohort(const CohortSpec& spec,
                       const TreeTemplate& tmpl = TreeTemplate::standard());

/// Tubular Gaussian intensity profile around each branch plus additive
/// noise; deterministic per (spec.seed, tree.id).
Volume rasterize_volume(const SyntheticTree& tree, const CohortSpec& spec);

/// Removes the LM and RCA centerlines from a `fraction` of trees chosen
/// uniformly; children keep their points and become roots downstream.
void apply_data_attack(Cohort& cohort, double fraction);

/// Validates the parent rules of a labeled tree independently of the
/// generator's internal bookkeeping.
bool validate_tree_labels(const std::vector<Centerline>& lines,
                          double merge_radius);

// --- cohort on disk ----------------------------------------------------------

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

struct CohortManifestEntry {
  int id = 0;
  bool attacked = false;
  std::filesystem::path centerlines;
  std::filesystem::path volume_header;
};

struct CohortManifest {
  CohortSpec spec;
  std::vector<CohortManifestEntry> trees;
};

CohortManifest read_cohort_manifest(const std::filesystem::path& dir);

}  // namespace cprgcn

#endif  // CPRGCN_COHORT_HPP
