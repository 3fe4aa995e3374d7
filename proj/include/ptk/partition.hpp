#pragma once

// Adaptive Z -> Y -> X grid partitioning.
//
// Split counts per axis are floor(count / target) clamped to [1, K], with the
// target shrinking M*K^2 -> M*K -> M from layers to rows to patches. Each axis
// range is cut into equal half-open intervals; the last interval is closed.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/point_cloud.hpp"

namespace ptk {

struct CellIndex {
  std::uint32_t z = 0;
  std::uint32_t y = 0;
  std::uint32_t x = 0;

  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

inline std::size_t compute_splits(std::size_t n_points, std::size_t n_target, std::size_t k_max) {
  if (n_target == 0 || k_max == 0) {
    throw Error(ErrorKind::InvalidArgument, "compute_splits needs n_target >= 1 and k_max >= 1");
  }
  return std::clamp<std::size_t>(n_points / n_target, 1, k_max);
}

struct SplitPlan {
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t splits_z = 1;
  std::vector<std::size_t> splits_y;               // one per layer
  std::vector<std::vector<std::size_t>> splits_x;  // [layer][row]

  std::size_t max_splits() const {
    std::size_t best = splits_z;
    for (auto s : splits_y) best = std::max(best, s);
    for (const auto& row : splits_x)
      for (auto s : row) best = std::max(best, s);
    return best;
  }
};

struct PatchGrid {
  // Non-empty cells only; member lists preserve source order.
  std::map<CellIndex, std::vector<std::size_t>> cells;
  SplitPlan plan;
  AxisBounds bounds;
};

struct PartitionOptions {
  // Use the whole-cloud count for Y and X splits instead of the parent
  // layer/row count.
  bool global_counts = false;
};

// Interval boundary j of `splits` equal intervals over [lo, hi].
inline double interval_boundary(double lo, double hi, std::size_t splits, std::size_t j) {
  const double width = (hi - lo) / static_cast<double>(splits);
  return lo + width * static_cast<double>(j);
}

// Index of the interval containing `v`. Intervals are [b_j, b_{j+1}) except
// the last one, which also holds `hi`. Zero-width ranges map to 0.
inline std::size_t interval_index(double v, double lo, double hi, std::size_t splits) {
  const double width = (hi - lo) / static_cast<double>(splits);
  if (splits <= 1 || !(width > 0.0)) return 0;
  double guess = std::floor((v - lo) / width);
  std::size_t j = guess <= 0.0 ? 0 : std::min(static_cast<std::size_t>(guess), splits - 1);
  // The floor estimate can be off by one ulp-step; boundaries are authoritative.
  while (j > 0 && v < interval_boundary(lo, hi, splits, j)) --j;
  while (j + 1 < splits && v >= interval_boundary(lo, hi, splits, j + 1)) ++j;
  return j;
}

inline constexpr double kBoundsTolerance = 1e-9;

// Cell of `point` given per-axis split counts ordered (z, y, x).
inline CellIndex cell_of(const Vec3& point, const AxisBounds& bounds, const std::array<std::size_t, 3>& splits_zyx) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (point[a] < bounds.min[a] - kBoundsTolerance || point[a] > bounds.max[a] + kBoundsTolerance) {
      throw Error(ErrorKind::OutOfBounds, "point outside bounds on axis " + std::to_string(a));
    }
  }
  for (auto s : splits_zyx) {
    if (s == 0) throw Error(ErrorKind::InvalidArgument, "split count must be >= 1");
  }
  auto idx = [&](Axis a, std::size_t s) {
    return static_cast<std::uint32_t>(interval_index(point[a], bounds.min[a], bounds.max[a], s));
  };
  return {idx(kZ, splits_zyx[0]), idx(kY, splits_zyx[1]), idx(kX, splits_zyx[2])};
}

inline PatchGrid partition(const PointCloud& cloud, std::size_t m, std::size_t k, PartitionOptions opts = {}) {
  if (m == 0 || k == 0) throw Error(ErrorKind::InvalidArgument, "partition needs m >= 1 and k >= 1");
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "cannot partition an empty cloud");

  PatchGrid grid;
  grid.bounds = compute_bounds(cloud);
  const auto& b = grid.bounds;
  const std::size_t n = cloud.size();
  auto& plan = grid.plan;
  plan.m = m;
  plan.k = k;
  plan.splits_z = compute_splits(n, m * k * k, k);

  std::vector<std::uint32_t> zi(n), yi(n), xi(n);
  std::vector<std::size_t> layer_count(plan.splits_z, 0);
  for (std::size_t i = 0; i < n; ++i) {
    zi[i] = static_cast<std::uint32_t>(interval_index(cloud.points[i].pos[kZ], b.min[kZ], b.max[kZ], plan.splits_z));
    ++layer_count[zi[i]];
  }

  plan.splits_y.resize(plan.splits_z);
  for (std::size_t z = 0; z < plan.splits_z; ++z) {
    std::size_t basis = opts.global_counts ? n : layer_count[z];
    plan.splits_y[z] = basis == 0 ? 1 : compute_splits(basis, m * k, k);
  }

  std::vector<std::vector<std::size_t>> row_count(plan.splits_z);
  for (std::size_t z = 0; z < plan.splits_z; ++z) row_count[z].assign(plan.splits_y[z], 0);
  for (std::size_t i = 0; i < n; ++i) {
    yi[i] = static_cast<std::uint32_t>(
        interval_index(cloud.points[i].pos[kY], b.min[kY], b.max[kY], plan.splits_y[zi[i]]));
    ++row_count[zi[i]][yi[i]];
  }

  plan.splits_x.resize(plan.splits_z);
  for (std::size_t z = 0; z < plan.splits_z; ++z) {
    plan.splits_x[z].resize(plan.splits_y[z]);
    for (std::size_t y = 0; y < plan.splits_y[z]; ++y) {
      std::size_t basis = opts.global_counts ? n : row_count[z][y];
      plan.splits_x[z][y] = basis == 0 ? 1 : compute_splits(basis, m, k);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    xi[i] = static_cast<std::uint32_t>(
        interval_index(cloud.points[i].pos[kX], b.min[kX], b.max[kX], plan.splits_x[zi[i]][yi[i]]));
    grid.cells[{zi[i], yi[i], xi[i]}].push_back(i);
  }
  return grid;
}

// One line per realized cell: `z y x count`, lexicographic order.
inline std::string dump_grid(const PatchGrid& grid) {
  std::string out;
  for (const auto& [idx, members] : grid.cells) {
    out += std::to_string(idx.z) + ' ' + std::to_string(idx.y) + ' ' + std::to_string(idx.x) + ' ' +
           std::to_string(members.size()) + '\n';
  }
  return out;
}

inline std::string describe_plan(const SplitPlan& plan) {
  std::string out = "z=" + std::to_string(plan.splits_z) + " y=[";
  for (std::size_t z = 0; z < plan.splits_y.size(); ++z) {
    if (z) out += ',';
    out += std::to_string(plan.splits_y[z]);
  }
  out += "] x=[";
  for (std::size_t z = 0; z < plan.splits_x.size(); ++z) {
    if (z) out += ';';
    for (std::size_t y = 0; y < plan.splits_x[z].size(); ++y) {
      if (y) out += ',';
      out += std::to_string(plan.splits_x[z][y]);
    }
  }
  out += ']';
  return out;
}

}  // namespace ptk
