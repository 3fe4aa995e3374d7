#pragma once

// Point cloud container, XYZ / ASCII-PLY loaders and isotropic normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/io.hpp"

namespace ptk {

using Vec3 = std::array<double, 3>;

// Axis indices into `Point::pos`.
enum Axis : std::size_t { kX = 0, kY = 1, kZ = 2 };

struct Point {
  Vec3 pos{};
  Vec3 rgb{0.5, 0.5, 0.5};

  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;
  std::string source_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

struct AxisBounds {
  Vec3 min{};
  Vec3 max{};

  double extent(std::size_t axis) const { return max[axis] - min[axis]; }
};

inline constexpr double kDefaultColor = 0.5;

inline AxisBounds compute_bounds(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "bounds of an empty cloud");
  AxisBounds b;
  b.min = b.max = cloud.points.front().pos;
  for (const auto& p : cloud.points) {
    for (std::size_t a = 0; a < 3; ++a) {
      b.min[a] = std::min(b.min[a], p.pos[a]);
      b.max[a] = std::max(b.max[a], p.pos[a]);
    }
  }
  return b;
}

// Throws if the cloud violates the container invariants (non-empty, finite
// coordinates, colors in [0,1]).
inline void validate(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "cloud '" + cloud.source_id + "' has no points");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    for (double v : p.pos) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::InvalidArgument, "non-finite coordinate at point " + std::to_string(i));
      }
    }
    for (double c : p.rgb) {
      if (!(c >= 0.0 && c <= 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "color outside [0,1] at point " + std::to_string(i));
      }
    }
  }
}

// Maps coordinates by (p - min) / s with s the longest bounding-box side.
// A fully coincident cloud collapses to the cube center. Colors untouched.
inline PointCloud normalize(const PointCloud& cloud) {
  const AxisBounds b = compute_bounds(cloud);
  const double scale = std::max({b.extent(kX), b.extent(kY), b.extent(kZ)});
  PointCloud out = cloud;
  for (auto& p : out.points) {
    for (std::size_t a = 0; a < 3; ++a) {
      p.pos[a] = scale > 0.0 ? (p.pos[a] - b.min[a]) / scale : 0.5;
    }
  }
  return out;
}

namespace detail {

inline double parse_field(std::string_view field, std::size_t line_no) {
  auto v = io::parse_double(field);
  if (!v) throw ParseError(line_no, "not a number: '" + std::string(field) + "'");
  if (!std::isfinite(*v)) throw ParseError(line_no, "non-finite value");
  return *v;
}

inline double parse_color(std::string_view field, std::size_t line_no, double divisor) {
  double c = parse_field(field, line_no) / divisor;
  if (c < 0.0 || c > 1.0) throw ParseError(line_no, "color channel outside range");
  return c;
}

}  // namespace detail

// Parses XYZ text: 3 or 6 whitespace-separated numbers per line, '#' lines
// and blank lines skipped. Line numbers in errors count physical lines.
inline PointCloud parse_xyz(std::string_view text, std::string source_id = {}) {
  PointCloud cloud;
  cloud.source_id = std::move(source_id);
  std::size_t line_no = 0;
  for (auto line : io::split_lines(text)) {
    ++line_no;
    auto fields = io::split_ws(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() != 3 && fields.size() != 6) {
      throw ParseError(line_no, "expected 3 or 6 columns, got " + std::to_string(fields.size()));
    }
    Point p;
    for (std::size_t a = 0; a < 3; ++a) p.pos[a] = detail::parse_field(fields[a], line_no);
    if (fields.size() == 6) {
      for (std::size_t c = 0; c < 3; ++c) p.rgb[c] = detail::parse_color(fields[3 + c], line_no, 1.0);
    }
    cloud.points.push_back(p);
  }
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "no points in '" + cloud.source_id + "'");
  return cloud;
}

inline PointCloud load_xyz(const std::filesystem::path& path) {
  return parse_xyz(io::read_file(path), path.string());
}

// Six columns per line, shortest round-trip formatting.
inline std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  for (const auto& p : cloud.points) {
    for (std::size_t i = 0; i < 6; ++i) {
      if (i) out.push_back(' ');
      io::append_double(out, i < 3 ? p.pos[i] : p.rgb[i - 3]);
    }
    out.push_back('\n');
  }
  return out;
}

inline void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  io::write_file_atomic(path, format_xyz(cloud));
}

// ASCII PLY subset: a `vertex` element with x/y/z and optional
// red/green/blue. Integer color types are scaled by 1/255, floating color
// types are taken as already in [0,1]. Elements other than `vertex` are
// skipped. Binary encodings are rejected with UnsupportedFormat.
inline PointCloud parse_ply_ascii(std::string_view text, std::string source_id = {}) {
  auto lines = io::split_lines(text);
  std::size_t line_no = 0;
  auto next_fields = [&]() -> std::vector<std::string_view> {
    if (line_no >= lines.size()) throw ParseError(line_no, "unexpected end of PLY header");
    return io::split_ws(lines[line_no++]);
  };

  auto magic = next_fields();
  if (magic.size() != 1 || magic[0] != "ply") throw ParseError(1, "missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    std::vector<bool> integer;
  };
  std::vector<Element> elements;
  bool saw_format = false;
  for (;;) {
    auto f = next_fields();
    if (f.empty() || f[0] == "comment" || f[0] == "obj_info") continue;
    if (f[0] == "end_header") break;
    if (f[0] == "format") {
      if (f.size() < 2) throw ParseError(line_no, "malformed format line");
      if (f[1] != "ascii") throw Error(ErrorKind::UnsupportedFormat, "PLY encoding '" + std::string(f[1]) + "' is not supported");
      saw_format = true;
    } else if (f[0] == "element") {
      if (f.size() != 3) throw ParseError(line_no, "malformed element line");
      auto count = io::parse_int<std::size_t>(f[2]);
      if (!count) throw ParseError(line_no, "bad element count");
      elements.push_back({std::string(f[1]), *count, {}, {}});
    } else if (f[0] == "property") {
      if (elements.empty()) throw ParseError(line_no, "property before element");
      if (f.size() >= 2 && f[1] == "list") {
        if (elements.back().name == "vertex") throw ParseError(line_no, "list property on vertex");
        elements.back().props.emplace_back("<list>");
        elements.back().integer.push_back(false);
        continue;
      }
      if (f.size() != 3) throw ParseError(line_no, "malformed property line");
      std::string_view type = f[1];
      bool is_int = !(type == "float" || type == "double" || type == "float32" || type == "float64");
      elements.back().props.emplace_back(f[2]);
      elements.back().integer.push_back(is_int);
    } else {
      throw ParseError(line_no, "unknown header keyword '" + std::string(f[0]) + "'");
    }
  }
  if (!saw_format) throw ParseError(line_no, "missing format line");

  PointCloud cloud;
  cloud.source_id = std::move(source_id);
  bool found_vertex = false;
  for (const auto& el : elements) {
    if (el.name != "vertex") {
      for (std::size_t i = 0; i < el.count; ++i) {
        if (line_no >= lines.size()) throw ParseError(0, "element '" + el.name + "' truncated");
        ++line_no;
      }
      continue;
    }
    found_vertex = true;
    auto find = [&](std::string_view name) -> std::ptrdiff_t {
      auto it = std::find(el.props.begin(), el.props.end(), name);
      return it == el.props.end() ? -1 : it - el.props.begin();
    };
    const std::array<std::ptrdiff_t, 3> xyz{find("x"), find("y"), find("z")};
    const std::array<std::ptrdiff_t, 3> col{find("red"), find("green"), find("blue")};
    if (std::any_of(xyz.begin(), xyz.end(), [](auto i) { return i < 0; })) {
      throw ParseError(0, "vertex element lacks x/y/z properties");
    }
    const bool has_color = std::all_of(col.begin(), col.end(), [](auto i) { return i >= 0; });
    cloud.points.reserve(el.count);
    for (std::size_t i = 0; i < el.count; ++i) {
      // skip blank lines inside the body
      while (line_no < lines.size() && io::split_ws(lines[line_no]).empty()) ++line_no;
      if (line_no >= lines.size()) {
        throw ParseError(0, "header declares " + std::to_string(el.count) + " vertices, body has " +
                                std::to_string(i));
      }
      auto f = io::split_ws(lines[line_no++]);
      if (f.size() != el.props.size()) {
        throw ParseError(line_no, "expected " + std::to_string(el.props.size()) + " values");
      }
      Point p;
      for (std::size_t a = 0; a < 3; ++a) p.pos[a] = detail::parse_field(f[static_cast<std::size_t>(xyz[a])], line_no);
      if (has_color) {
        for (std::size_t c = 0; c < 3; ++c) {
          auto idx = static_cast<std::size_t>(col[c]);
          p.rgb[c] = detail::parse_color(f[idx], line_no, el.integer[idx] ? 255.0 : 1.0);
        }
      }
      cloud.points.push_back(p);
    }
  }
  if (!found_vertex) throw ParseError(0, "no vertex element");
  for (; line_no < lines.size(); ++line_no) {
    if (!io::split_ws(lines[line_no]).empty()) throw ParseError(line_no + 1, "data beyond declared element counts");
  }
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "no points in '" + cloud.source_id + "'");
  return cloud;
}

inline PointCloud load_ply_ascii(const std::filesystem::path& path) {
  return parse_ply_ascii(io::read_file(path), path.string());
}

// Dispatches on the file's first bytes: "ply" selects the PLY reader,
// anything else is read as XYZ text.
inline PointCloud load_point_cloud(const std::filesystem::path& path) {
  auto text = io::read_file(path);
  std::string_view head(text);
  if (head.substr(0, 3) == "ply") return parse_ply_ascii(text, path.string());
  return parse_xyz(text, path.string());
}

}  // namespace ptk
