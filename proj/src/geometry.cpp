// Copyright 2026 the cprgcn authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#include "cprgcn/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>

namespace cprgcn {

Vec3 Vec3::normalized() const {
  const double n = norm();
  if (n == 0.0) return {0, 0, 0};
  return {x / n, y / n, z / n};
}

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "RCA", "R-PDA", "R-PLB", "AM", "LM", "LAD", "LCX", "RI", "D", "OM", "S"};
  return names;
}

std::string to_string(Label label) {
  return class_names()[static_cast<int>(label)];
}

Label label_from_string(const std::string& name) {
  const auto& names = class_names();
  for (int i = 0; i < kNumClasses; ++i)
    if (names[i] == name) return static_cast<Label>(i);
  throw InvalidLabelError("unknown anatomical label '" + name + "'");
}

std::size_t SegmentGraph::edge_count() const {
  std::size_t e = 0;
  for (double v : adjacency) e += v != 0.0 ? 1 : 0;
  return e;
}

std::size_t SegmentGraph::root_count() const {
  std::size_t r = 0;
  for (const auto& s : nodes) r += s.parent < 0 ? 1 : 0;
  return r;
}

// --- Catmull-Rom -----------------------------------------------------------

namespace {

Vec3 barry_goldman(const std::array<Vec3, 4>& p, const std::array<double, 4>& t,
                   double u) {
  auto lerp = [](const Vec3& a, const Vec3& b, double ta, double tb,
                 double u) {
    const double w = (u - ta) / (tb - ta);
    return a * (1.0 - w) + b * w;
  };
  const Vec3 a1 = lerp(p[0], p[1], t[0], t[1], u);
  const Vec3 a2 = lerp(p[1], p[2], t[1], t[2], u);
  const Vec3 a3 = lerp(p[2], p[3], t[2], t[3], u);
  const Vec3 b1 = lerp(a1, a2, t[0], t[2], u);
  const Vec3 b2 = lerp(a2, a3, t[1], t[3], u);
  return lerp(b1, b2, t[1], t[2], u);
}

double centripetal_step(const Vec3& a, const Vec3& b) {
  const double d = std::sqrt((b - a).norm());
  return d > 1e-12 ? d : 1e-12;
}

}  // namespace

Centerline catmull_rom_smooth(const Centerline& line, int samples_per_span) {
  if (line.points.size() < 2)
    throw DegenerateInputError("catmull_rom_smooth: need at least 2 points");
  if (samples_per_span < 1) samples_per_span = 1;

  // Reflected ghost points stand in for the missing boundary tangents.
  std::vector<Vec3> ctrl;
  ctrl.reserve(line.points.size() + 2);
  ctrl.push_back(line.points[0] * 2.0 - line.points[1]);
  ctrl.insert(ctrl.end(), line.points.begin(), line.points.end());
  ctrl.push_back(line.points.back() * 2.0 -
                 line.points[line.points.size() - 2]);

  Centerline out;
  out.label = line.label;
  for (std::size_t i = 1; i + 2 < ctrl.size(); ++i) {
    const std::array<Vec3, 4> p{ctrl[i - 1], ctrl[i], ctrl[i + 1],
                                ctrl[i + 2]};
    std::array<double, 4> t{};
    t[0] = 0.0;
    for (int j = 0; j < 3; ++j)
      t[j + 1] = t[j] + centripetal_step(p[j], p[j + 1]);
    for (int s = 0; s < samples_per_span; ++s) {
      if (s == 0) {
        out.points.push_back(p[1]);  // interpolate control points exactly
        continue;
      }
      const double u =
          t[1] + (t[2] - t[1]) * static_cast<double>(s) / samples_per_span;
      out.points.push_back(barry_goldman(p, t, u));
    }
  }
  out.points.push_back(ctrl[ctrl.size() - 2]);
  return out;
}

double polyline_length(const std::vector<Vec3>& points) {
  double len = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    len += (points[i] - points[i - 1]).norm();
  return len;
}

Centerline resample_uniform(const Centerline& line, double spacing) {
  if (spacing <= 0.0)
    throw ContractViolation("resample_uniform: spacing must be positive");
  if (line.points.size() < 2)
    throw DegenerateInputError("resample_uniform: need at least 2 points");

  const double total = polyline_length(line.points);
  const std::size_t steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(total / spacing)));

  Centerline out;
  out.label = line.label;
  out.points.push_back(line.points.front());
  std::size_t seg = 1;
  double walked = 0.0;  // arc length consumed before points[seg-1]
  for (std::size_t k = 1; k < steps; ++k) {
    const double target = total * static_cast<double>(k) / steps;
    while (seg < line.points.size()) {
      const double d = (line.points[seg] - line.points[seg - 1]).norm();
      if (walked + d >= target || seg + 1 == line.points.size()) {
        const double w = d > 0.0 ? (target - walked) / d : 0.0;
        out.points.push_back(line.points[seg - 1] +
                             (line.points[seg] - line.points[seg - 1]) * w);
        break;
      }
      walked += d;
      ++seg;
    }
  }
  out.points.push_back(line.points.back());
  return out;
}

// --- segment splitting ------------------------------------------------------

namespace {

struct Attachment {
  int parent_line = -1;
  std::size_t point_index = 0;
};

std::vector<Attachment> find_attachments(const std::vector<Centerline>& lines,
                                         double merge_radius) {
  std::vector<Attachment> att(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Vec3 start = lines[i].points.front();
    double best = merge_radius;
    for (std::size_t j = 0; j < lines.size(); ++j) {
      if (j == i) continue;
      const Vec3 other_start = lines[j].points.front();
      for (std::size_t k = 0; k < lines[j].points.size(); ++k) {
        // A match right at the other line's own start means the two lines
        // share an origin (siblings of a removed parent), not that one
        // sprouts from the other; both must stay roots.
        if ((lines[j].points[k] - other_start).norm() <= merge_radius)
          continue;
        const double d = (lines[j].points[k] - start).norm();
        if (d <= best) {
          best = d;
          att[i] = {static_cast<int>(j), k};
        }
      }
    }
  }
  // Break accidental attachment cycles (e.g. two lines starting at the same
  // point): the lowest line index in each cycle becomes a root.
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<char> on_path(lines.size(), 0);
    int cur = static_cast<int>(i);
    while (cur >= 0 && !on_path[cur]) {
      on_path[cur] = 1;
      cur = att[cur].parent_line;
    }
    if (cur >= 0) {  // cycle: clear the smallest member
      int smallest = cur;
      int walk = att[cur].parent_line;
      while (walk != cur) {
        smallest = std::min(smallest, walk);
        walk = att[walk].parent_line;
      }
      att[smallest] = {};
      att[smallest].parent_line = -1;
    }
  }
  return att;
}

}  // namespace

std::vector<Segment> split_into_segments(const std::vector<Centerline>& lines,
                                         double merge_radius) {
  const std::size_t n = lines.size();
  for (const auto& l : lines)
    if (l.points.size() < 2)
      throw DegenerateInputError("split_into_segments: line with < 2 points");

  auto att = find_attachments(lines, merge_radius);

  // Cluster bifurcation events per parent line; events within merge_radius of
  // the cluster representative share one junction point.
  struct Cluster {
    std::size_t index;  // representative point index on the parent
  };
  std::vector<std::vector<Cluster>> clusters(n);
  std::vector<std::size_t> child_cluster_index(n, 0);  // snapped index
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::size_t> children;
    for (std::size_t i = 0; i < n; ++i)
      if (att[i].parent_line == static_cast<int>(j)) children.push_back(i);
    std::sort(children.begin(), children.end(),
              [&](std::size_t a, std::size_t b) {
                return att[a].point_index < att[b].point_index;
              });
    for (std::size_t c : children) {
      const Vec3 p = lines[j].points[att[c].point_index];
      bool merged = false;
      for (auto& cl : clusters[j]) {
        if ((lines[j].points[cl.index] - p).norm() <= merge_radius) {
          child_cluster_index[c] = cl.index;
          merged = true;
          break;
        }
      }
      if (!merged) {
        clusters[j].push_back({att[c].point_index});
        child_cluster_index[c] = att[c].point_index;
      }
    }
  }

  // Cut every line at its junction indices.
  std::vector<std::vector<std::size_t>> boundaries(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::size_t> cuts;
    for (const auto& cl : clusters[j])
      if (cl.index > 0 && cl.index + 1 < lines[j].points.size())
        cuts.push_back(cl.index);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    boundaries[j].push_back(0);
    boundaries[j].insert(boundaries[j].end(), cuts.begin(), cuts.end());
    boundaries[j].push_back(lines[j].points.size() - 1);
  }

  std::vector<Segment> segments;
  std::vector<std::vector<int>> piece_of(n);  // (line, piece) -> global index
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p + 1 < boundaries[j].size(); ++p) {
      Segment s;
      s.label = lines[j].label;
      s.source_branch = static_cast<int>(j);
      const std::size_t b0 = boundaries[j][p], b1 = boundaries[j][p + 1];
      s.points.assign(lines[j].points.begin() + b0,
                      lines[j].points.begin() + b1 + 1);
      piece_of[j].push_back(static_cast<int>(segments.size()));
      segments.push_back(std::move(s));
    }
  }

  auto piece_ending_at = [&](std::size_t j, std::size_t idx) -> int {
    const auto& b = boundaries[j];
    for (std::size_t p = 1; p < b.size(); ++p)
      if (b[p] >= idx) return piece_of[j][p - 1];
    return piece_of[j].back();
  };

  for (std::size_t j = 0; j < n; ++j) {
    // chain the pieces of one line
    for (std::size_t p = 1; p < piece_of[j].size(); ++p)
      segments[piece_of[j][p]].parent = piece_of[j][p - 1];
    // attach the first piece to the parent line's piece at the junction
    if (att[j].parent_line >= 0) {
      const auto pj = static_cast<std::size_t>(att[j].parent_line);
      segments[piece_of[j][0]].parent =
          piece_ending_at(pj, child_cluster_index[j]);
    }
  }
  return segments;
}

SegmentGraph build_graph(const std::vector<Segment>& segments) {
  const std::size_t n = segments.size();
  SegmentGraph g;
  g.nodes = segments;
  g.adjacency.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const int p = segments[j].parent;
    if (p < 0) continue;
    if (static_cast<std::size_t>(p) >= n)
      throw MalformedTreeError("segment parent index out of range");
    g.adjacency[static_cast<std::size_t>(p) * n + j] = 1.0;
  }
  // a parent chain longer than n nodes implies a cycle
  for (std::size_t j = 0; j < n; ++j) {
    int cur = segments[j].parent;
    std::size_t hops = 0;
    while (cur >= 0) {
      if (++hops > n)
        throw MalformedTreeError("cycle detected in segment parents");
      cur = segments[static_cast<std::size_t>(cur)].parent;
    }
  }
  return g;
}

// --- local frame and SCT-S2 -------------------------------------------------

LocalFrame local_frame(const Segment& seg) {
  if (seg.points.size() < 2)
    throw DegenerateInputError("local_frame: need at least 2 points");
  LocalFrame f;
  f.origin = seg.points.front();
  f.z_axis = (seg.points[1] - seg.points[0]).normalized();
  if (f.z_axis.norm() == 0.0)
    throw DegenerateInputError("local_frame: first two points coincide");

  const Vec3 v = seg.points.back() - seg.points.front();
  Vec3 y = v - f.z_axis * v.dot(f.z_axis);
  if (y.norm() <= 1e-6 * std::max(1.0, v.norm())) {
    // first-last direction (anti)parallel to z: fixed perpendicular fallback
    const Vec3 ref =
        std::abs(f.z_axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    y = ref - f.z_axis * ref.dot(f.z_axis);
  }
  f.y_axis = y.normalized();
  f.x_axis = f.y_axis.cross(f.z_axis);
  return f;
}

SctS2 sct_s2(const Vec3& p) {
  SctS2 out;
  out.r = p.norm();
  if (out.r == 0.0) {
    out.theta = 0.0;
    out.phi = 0.0;
    out.m = {0.0, 0.0, 1.0, 1.0};
    return out;
  }
  double cos_t = std::clamp(p.z / out.r, -1.0, 1.0);
  out.theta = std::acos(cos_t);
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  double sin_p = 0.0, cos_p = 1.0;
  if (sin_t >= 1e-9) {
    sin_p = p.x / (out.r * sin_t);
    cos_p = p.y / (out.r * sin_t);
    const double norm = std::hypot(sin_p, cos_p);
    if (norm > 0.0) {
      sin_p /= norm;
      cos_p /= norm;
    }
  }
  out.phi = std::atan2(sin_p, cos_p);
  if (out.phi < 0.0) out.phi += 2.0 * M_PI;
  out.m = {sin_t, sin_p, cos_t, cos_p};
  return out;
}

namespace {

Vec3 arc_midpoint(const std::vector<Vec3>& points) {
  const double half = polyline_length(points) / 2.0;
  double walked = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double d = (points[i] - points[i - 1]).norm();
    if (walked + d >= half) {
      const double w = d > 0.0 ? (half - walked) / d : 0.0;
      return points[i - 1] + (points[i] - points[i - 1]) * w;
    }
    walked += d;
  }
  return points.back();
}

void emit_point_block(const Vec3& local, double scale, double* out) {
  out[0] = local.x / scale;
  out[1] = local.y / scale;
  out[2] = local.z / scale;
  const SctS2 s = sct_s2(local);
  std::copy(s.m.begin(), s.m.end(), out + 3);
}

void emit_direction_block(const Vec3& dir, double* out) {
  const Vec3 u = dir.normalized();
  out[0] = u.x;
  out[1] = u.y;
  out[2] = u.z;
  const SctS2 s = sct_s2(u);
  std::copy(s.m.begin(), s.m.end(), out + 3);
}

}  // namespace

PositionFeatures position_features(const Segment& seg, const Vec3& origin,
                                   double normalization) {
  if (seg.points.size() < 2)
    throw DegenerateInputError("position_features needs >= 2 points");
  const double scale = normalization > 0.0 ? normalization : 1.0;

  // Global axes, tree-relative origin: translating the whole tree (and with
  // it the origin) leaves the features unchanged, while rotating the tree
  // rotates the encoded positions and directions with it.
  const Vec3 first = seg.points.front() - origin;
  const Vec3 center = arc_midpoint(seg.points) - origin;
  const Vec3 last = seg.points.back() - origin;

  PositionFeatures f{};
  emit_point_block(first, scale, f.data());
  emit_point_block(center, scale, f.data() + 7);
  emit_point_block(last, scale, f.data() + 14);
  emit_direction_block(seg.points.back() - seg.points.front(), f.data() + 21);
  emit_direction_block(seg.points[1] - seg.points[0], f.data() + 28);
  return f;
}

double bounding_box_diagonal(const std::vector<Segment>& segments) {
  Vec3 lo{std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi{std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::lowest()};
  bool any = false;
  for (const auto& s : segments)
    for (const auto& p : s.points) {
      any = true;
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
  if (!any) return 0.0;
  return (hi - lo).norm();
}

Vec3 bounding_box_center(const std::vector<Segment>& segments) {
  Vec3 lo{std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi{std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::lowest()};
  bool any = false;
  for (const auto& s : segments)
    for (const auto& p : s.points) {
      any = true;
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
  if (!any) return {0, 0, 0};
  return (lo + hi) * 0.5;
}

// --- file format -------------------------------------------------------------

void save_centerlines(const std::vector<Centerline>& lines,
                      const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["version"] = 1;
  auto& branches = doc["branches"];
  branches = nlohmann::json::array();
  for (const auto& l : lines) {
    nlohmann::json b;
    b["label"] = l.label;
    auto& pts = b["points"];
    pts = nlohmann::json::array();
    for (const auto& p : l.points) pts.push_back({p.x, p.y, p.z});
    branches.push_back(std::move(b));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os)
    throw std::runtime_error("cannot open centerline file " + path.string());
  os << doc.dump() << "\n";
}

std::vector<Centerline> load_centerlines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open centerline file " + path.string());
  nlohmann::json doc;
  is >> doc;
  if (!doc.contains("version"))
    throw std::runtime_error("centerline file " + path.string() +
                             " is missing the version field");
  std::vector<Centerline> lines;
  for (const auto& b : doc.at("branches")) {
    Centerline l;
    l.label = b.value("label", "");
    for (const auto& p : b.at("points"))
      l.points.push_back(
          {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    lines.push_back(std::move(l));
  }
  return lines;
}

}  // namespace cprgcn
