#pragma once

// Patch standardization: every realized cell becomes exactly M points.
// Oversized cells are reduced by farthest point sampling, undersized cells
// are padded by cyclic replication.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/partition.hpp"
#include "ptk/point_cloud.hpp"

namespace ptk {

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Index of the point closest to the centroid; ties go to the smallest index.
inline std::size_t nearest_to_centroid(std::span<const Vec3> points) {
  if (points.empty()) throw Error(ErrorKind::InvalidArgument, "centroid of an empty set");
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : points)
    for (std::size_t a = 0; a < 3; ++a) c[a] += p[a];
  for (auto& v : c) v /= static_cast<double>(points.size());
  std::size_t best = 0;
  double best_d = squared_distance(points[0], c);
  for (std::size_t i = 1; i < points.size(); ++i) {
    double d = squared_distance(points[i], c);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// Greedy farthest point sampling over xyz. Returns `target` distinct indices
// in selection order starting at `seed_index`. Each step takes the
// candidate whose distance to the selected set is largest, smallest index
// on ties. Distances are compared squared.
inline std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t target, std::size_t seed_index) {
  if (target > points.size()) {
    throw Error(ErrorKind::TargetExceedsInput,
                "fps target " + std::to_string(target) + " exceeds " + std::to_string(points.size()) + " points");
  }
  if (target == 0) throw Error(ErrorKind::InvalidArgument, "fps target must be >= 1");
  if (seed_index >= points.size()) throw Error(ErrorKind::IndexOutOfRange, "fps seed index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(target);
  std::vector<double> min_d(points.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> taken(points.size(), false);

  std::size_t current = seed_index;
  for (;;) {
    selected.push_back(current);
    taken[current] = true;
    if (selected.size() == target) break;
    std::size_t best = points.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(points[i], points[current]));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

struct Patch {
  CellIndex index;
  std::vector<Point> points;
  // Source-cloud index of each entry of `points`; duplicates allowed.
  std::vector<std::size_t> provenance;
};

// Sort key for canonical patch order: (z, y, x, r, g, b) ascending.
inline bool canonical_less(const Point& a, const Point& b) {
  const std::array<double, 6> ka{a.pos[kZ], a.pos[kY], a.pos[kX], a.rgb[0], a.rgb[1], a.rgb[2]};
  const std::array<double, 6> kb{b.pos[kZ], b.pos[kY], b.pos[kX], b.rgb[0], b.rgb[1], b.rgb[2]};
  return ka < kb;
}

// Builds an M-point patch from one cell. `member_indices[i]` is the source
// index of `cell_points[i]`.
inline Patch standardize(std::span<const Point> cell_points, std::span<const std::size_t> member_indices,
                         std::size_t m, CellIndex index = {}) {
  if (cell_points.empty()) throw Error(ErrorKind::InvalidArgument, "cannot standardize an empty cell");
  if (member_indices.size() != cell_points.size()) {
    throw Error(ErrorKind::ShapeMismatch, "member index list does not match cell size");
  }
  if (m == 0) throw Error(ErrorKind::InvalidArgument, "patch size must be >= 1");

  const std::size_t n = cell_points.size();
  std::vector<std::size_t> chosen;
  if (n > m) {
    std::vector<Vec3> xyz(n);
    for (std::size_t i = 0; i < n; ++i) xyz[i] = cell_points[i].pos;
    chosen = fps(xyz, m, nearest_to_centroid(xyz));
  } else {
    chosen.resize(m);
    for (std::size_t i = 0; i < m; ++i) chosen[i] = i % n;
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return canonical_less(cell_points[chosen[a]], cell_points[chosen[b]]);
  });

  Patch patch;
  patch.index = index;
  patch.points.reserve(m);
  patch.provenance.reserve(m);
  for (auto o : order) {
    patch.points.push_back(cell_points[chosen[o]]);
    patch.provenance.push_back(member_indices[chosen[o]]);
  }
  return patch;
}

// Standardizes every realized cell of `grid`, in lexicographic cell order.
inline std::vector<Patch> standardize_grid(const PointCloud& cloud, const PatchGrid& grid, std::size_t m) {
  std::vector<Patch> patches;
  patches.reserve(grid.cells.size());
  std::vector<Point> buf;
  for (const auto& [idx, members] : grid.cells) {
    buf.clear();
    for (auto i : members) buf.push_back(cloud.points[i]);
    patches.push_back(standardize(buf, members, m, idx));
  }
  return patches;
}

// Concatenates (x, y, z, r, g, b) of each point; length M * 6.
inline std::vector<double> flatten(const Patch& patch) {
  std::vector<double> out;
  out.reserve(patch.points.size() * 6);
  for (const auto& p : patch.points) {
    out.insert(out.end(), p.pos.begin(), p.pos.end());
    out.insert(out.end(), p.rgb.begin(), p.rgb.end());
  }
  return out;
}

}  // namespace ptk
