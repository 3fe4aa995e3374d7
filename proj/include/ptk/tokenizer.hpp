#pragma once

// End-to-end pipeline: normalize -> partition -> standardize -> sequence.

#include <cstddef>

#include "ptk/partition.hpp"
#include "ptk/patch.hpp"
#include "ptk/point_cloud.hpp"
#include "ptk/sequence.hpp"
#include "ptk/sfc.hpp"

namespace ptk {

struct TokenizerConfig {
  std::size_t m = 512;
  std::size_t k = 5;
  Ordering ordering = Ordering::Zyx;
  bool separators = true;
  bool normalize_input = true;
  // Centers for the FPS baseline; 0 uses the realized grid cell count.
  std::size_t fps_samples = 0;
  PartitionOptions partition;
};

struct TokenizeResult {
  TokenSequence sequence;
  PatchGrid grid;
  std::size_t n_points = 0;
};

inline TokenizeResult tokenize(const PointCloud& input, const TokenizerConfig& cfg) {
  validate(input);
  const PointCloud cloud = cfg.normalize_input ? normalize(input) : input;

  TokenizeResult res;
  res.n_points = cloud.size();
  res.grid = partition(cloud, cfg.m, cfg.k, cfg.partition);

  if (cfg.ordering == Ordering::FpsSampling) {
    std::size_t samples = cfg.fps_samples ? cfg.fps_samples : res.grid.cells.size();
    res.sequence = build_fps_sequence(cloud, cfg.m, samples);
    return res;
  }
  auto patches = standardize_grid(cloud, res.grid, cfg.m);
  OrderingStrategy strategy{cfg.ordering, std::nullopt, 0};
  if (cfg.ordering == Ordering::Hilbert || cfg.ordering == Ordering::Morton) {
    strategy.curve_order = curve_order_for(res.grid.plan.max_splits());
  }
  res.sequence = build_sequence(res.grid, patches, strategy, cfg.separators);
  return res;
}

}  // namespace ptk
