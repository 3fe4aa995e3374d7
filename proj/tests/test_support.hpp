#pragma once

// Fixtures and brute-force oracles shared by the unit and acceptance suites.
// Oracles here deliberately avoid the library's helpers for the thing they
// check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ptk/ptk.hpp"

namespace ptk::testing {

inline double unit(std::mt19937_64& rng) { return std::generate_canonical<double, 53>(rng); }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("ptk-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) { io::write_file_atomic(p, text); }

// Uniform random cloud in [0,1]^3 (optionally normalized), random colors.
inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, bool normalized = true) {
  PointCloud c;
  c.source_id = "random";
  c.points.resize(n);
  for (auto& p : c.points) {
    for (auto& v : p.pos) v = unit(rng);
    for (auto& v : p.rgb) v = unit(rng);
  }
  return normalized ? normalize(c) : c;
}

// Clustered cloud: a few Gaussian blobs, which stresses uneven layer/row
// counts and empty cells.
inline PointCloud clustered_cloud(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 0.05);
  const std::size_t blobs = 1 + rng() % 4;
  std::vector<Vec3> centers(blobs);
  for (auto& c : centers)
    for (auto& v : c) v = unit(rng);
  PointCloud c;
  c.points.resize(n);
  for (auto& p : c.points) {
    const auto& ctr = centers[rng() % blobs];
    for (std::size_t a = 0; a < 3; ++a) p.pos[a] = ctr[a] + g(rng);
    p.rgb = {unit(rng), unit(rng), unit(rng)};
  }
  return normalize(c);
}

// 2 x 3 x 3 lattice of tight clusters with `m` points each. With k = 3 the
// adaptive schedule yields 2 layers, 3 rows per layer, 3 patches per row.
inline PointCloud lattice_cloud(std::size_t m, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  PointCloud c;
  c.source_id = "lattice-2x3x3";
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x)
        for (std::size_t i = 0; i < m; ++i) {
          Point p;
          p.pos = {(2 * x + 1) / 6.0 + 0.04 * (unit(rng) - 0.5), (2 * y + 1) / 6.0 + 0.04 * (unit(rng) - 0.5),
                   (2 * z + 1) / 4.0 + 0.04 * (unit(rng) - 0.5)};
          p.rgb = {x / 2.0, y / 2.0, static_cast<double>(z)};
          c.points.push_back(p);
        }
  return c;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

// Runs a shell command, capturing stdout. stderr is discarded.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* f = ::popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!f) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof(buf), f)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(f);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Value of `key=` in key=value output, empty if absent.
inline std::string kv_value(const std::string& out, const std::string& key) {
  const std::string needle = key + "=";
  std::size_t pos = 0;
  while ((pos = out.find(needle, pos)) != std::string::npos) {
    if (pos == 0 || out[pos - 1] == '\n') {
      const auto end = out.find('\n', pos);
      return out.substr(pos + needle.size(), end - pos - needle.size());
    }
    pos += needle.size();
  }
  return {};
}

// ---------------------------------------------------------------------------
// Oracles

// Interval by linear scan over explicitly listed boundaries.
inline std::size_t oracle_interval(double v, double lo, double hi, std::size_t splits) {
  if (splits <= 1 || !(hi > lo)) return 0;
  std::vector<double> b(splits + 1);
  for (std::size_t j = 0; j <= splits; ++j) b[j] = lo + ((hi - lo) / static_cast<double>(splits)) * static_cast<double>(j);
  for (std::size_t j = 0; j < splits; ++j) {
    const bool last = j + 1 == splits;
    if (v >= b[j] && (last || v < b[j + 1])) return j;
  }
  return v < lo ? 0 : splits - 1;
}

// Recomputes every point's cell from scratch: bounds, split schedule and
// boundary scans.
inline std::vector<CellIndex> oracle_cells(const PointCloud& cloud, std::size_t m, std::size_t k) {
  const std::size_t n = cloud.size();
  Vec3 lo = cloud.points[0].pos, hi = cloud.points[0].pos;
  for (const auto& p : cloud.points)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p.pos[a]);
      hi[a] = std::max(hi[a], p.pos[a]);
    }
  auto splits = [k](std::size_t count, std::size_t target) {
    if (count == 0) return std::size_t{1};
    std::size_t s = count / target;
    return s < 1 ? std::size_t{1} : (s > k ? k : s);
  };
  const std::size_t sz = splits(n, m * k * k);
  std::vector<CellIndex> out(n);
  std::map<std::uint32_t, std::size_t> layer_count;
  for (std::size_t i = 0; i < n; ++i) {
    out[i].z = static_cast<std::uint32_t>(oracle_interval(cloud.points[i].pos[2], lo[2], hi[2], sz));
    ++layer_count[out[i].z];
  }
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> row_count;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t sy = splits(layer_count[out[i].z], m * k);
    out[i].y = static_cast<std::uint32_t>(oracle_interval(cloud.points[i].pos[1], lo[1], hi[1], sy));
    ++row_count[{out[i].z, out[i].y}];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t sx = splits(row_count[{out[i].z, out[i].y}], m);
    out[i].x = static_cast<std::uint32_t>(oracle_interval(cloud.points[i].pos[0], lo[0], hi[0], sx));
  }
  return out;
}

// Greedy FPS recomputing each candidate's distance to the whole selected
// set at every step. Squared distances, smallest index on ties.
inline std::vector<std::size_t> oracle_fps(const std::vector<Vec3>& pts, std::size_t target, std::size_t seed) {
  std::vector<std::size_t> sel{seed};
  while (sel.size() < target) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (auto s : sel) {
        double d = 0.0;
        for (int a = 0; a < 3; ++a) d += (pts[i][a] - pts[s][a]) * (pts[i][a] - pts[s][a]);
        dmin = std::min(dmin, d);
      }
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

// Seed rule by direct search: nearest to the mean, first on ties.
inline std::size_t oracle_centroid_seed(const std::vector<Vec3>& pts) {
  Vec3 c{0, 0, 0};
  for (const auto& p : pts)
    for (int a = 0; a < 3; ++a) c[a] += p[a];
  for (auto& v : c) v /= static_cast<double>(pts.size());
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) d += (pts[i][a] - c[a]) * (pts[i][a] - c[a]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace ptk::testing
