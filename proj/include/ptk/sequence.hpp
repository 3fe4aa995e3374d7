#pragma once

// Token sequence construction, the on-disk token/matrix format and grammar
// validation.
//
// Token text format, one token per line:
//   PCSTART | PCEND | PATCH <slot> | LSEP | RSEP | TEXT <id>
// Lines starting with '#' carry metadata (`# ordering <tag>`,
// `# cell <slot> <z> <y> <x>`) and are otherwise ignored.
//
// Matrix sidecar (`<token file>.ptkm`): "PTKM", u32 rows, u32 cols,
// u32 reserved (0), then rows*cols little-endian f64, row-major.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/io.hpp"
#include "ptk/partition.hpp"
#include "ptk/patch.hpp"
#include "ptk/point_cloud.hpp"
#include "ptk/sfc.hpp"

namespace ptk {

enum class TokenKind : std::uint8_t { PcStart, PcEnd, PointPatch, LayerSep, RowSep, Text };

struct Token {
  TokenKind kind = TokenKind::PcStart;
  // Slot for PointPatch, vocabulary id for Text, unused otherwise.
  std::uint32_t value = 0;

  static Token pc_start() { return {TokenKind::PcStart, 0}; }
  static Token pc_end() { return {TokenKind::PcEnd, 0}; }
  static Token patch(std::uint32_t slot) { return {TokenKind::PointPatch, slot}; }
  static Token layer_sep() { return {TokenKind::LayerSep, 0}; }
  static Token row_sep() { return {TokenKind::RowSep, 0}; }
  static Token text(std::uint32_t id) { return {TokenKind::Text, id}; }

  friend bool operator==(const Token&, const Token&) = default;
};

enum class Ordering : std::uint8_t { Zyx, Hilbert, Morton, FpsSampling };

inline std::string_view to_string(Ordering o) {
  switch (o) {
    case Ordering::Zyx: return "zyx";
    case Ordering::Hilbert: return "hilbert";
    case Ordering::Morton: return "morton";
    case Ordering::FpsSampling: return "fps";
  }
  return "?";
}

inline std::optional<Ordering> parse_ordering(std::string_view s) {
  if (s == "zyx") return Ordering::Zyx;
  if (s == "hilbert") return Ordering::Hilbert;
  if (s == "morton") return Ordering::Morton;
  if (s == "fps") return Ordering::FpsSampling;
  return std::nullopt;
}

struct OrderingStrategy {
  Ordering tag = Ordering::Zyx;
  // Required for Hilbert and Morton.
  std::optional<unsigned> curve_order;
  // Patch centers for FpsSampling; 0 means "one per realized grid cell".
  std::size_t sample_count = 0;
};

// Row-major P x (M*6) matrix of flattened patches.
struct PatchMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const PatchMatrix&, const PatchMatrix&) = default;
};

struct TokenSequence {
  std::vector<Token> tokens;
  PatchMatrix patch_matrix;
  Ordering ordering = Ordering::Zyx;
  // Grid cell of each patch slot; empty for the FPS baseline.
  std::vector<CellIndex> cells;

  std::size_t count(TokenKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(tokens.begin(), tokens.end(), [&](const Token& t) { return t.kind == kind; }));
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

namespace detail {

inline void append_patch_rows(PatchMatrix& mat, const Patch& patch) {
  auto flat = flatten(patch);
  if (mat.rows == 0) mat.cols = flat.size();
  if (flat.size() != mat.cols) throw Error(ErrorKind::ShapeMismatch, "patches have differing sizes");
  mat.data.insert(mat.data.end(), flat.begin(), flat.end());
  ++mat.rows;
}

}  // namespace detail

// Orders the realized patches and emits the point-cloud envelope. Under ZYX
// a LayerSep sits between consecutive patches whose z differs, a RowSep
// where only y differs. Curve orderings emit no separators.
inline TokenSequence build_sequence(const PatchGrid& grid, std::span<const Patch> patches,
                                    const OrderingStrategy& strategy, bool emit_separators) {
  if (strategy.tag == Ordering::FpsSampling) {
    throw Error(ErrorKind::InvalidArgument, "FPS sampling ignores the grid; use build_fps_sequence");
  }
  if (patches.size() != grid.cells.size()) {
    throw Error(ErrorKind::ShapeMismatch, "patch count does not match realized cell count");
  }
  if (patches.empty()) throw Error(ErrorKind::EmptyCloud, "no patches to sequence");
  for (const auto& p : patches) {
    if (!grid.cells.contains(p.index)) throw Error(ErrorKind::ShapeMismatch, "patch index not in grid");
  }

  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto by_key = [&](auto key) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      auto ka = key(patches[a].index), kb = key(patches[b].index);
      return ka != kb ? ka < kb : patches[a].index < patches[b].index;
    });
  };
  switch (strategy.tag) {
    case Ordering::Zyx:
      by_key([](const CellIndex& c) { return c; });
      break;
    case Ordering::Morton:
    case Ordering::Hilbert: {
      if (!strategy.curve_order) {
        throw Error(ErrorKind::StrategyParamMissing, std::string(to_string(strategy.tag)) + " needs a curve order");
      }
      const unsigned order_bits = *strategy.curve_order;
      if (strategy.tag == Ordering::Morton) {
        by_key([&](const CellIndex& c) { return morton_rank(c, order_bits); });
      } else {
        by_key([&](const CellIndex& c) { return hilbert_rank(c, order_bits); });
      }
      break;
    }
    case Ordering::FpsSampling:
      break;
  }

  const bool separators = emit_separators && strategy.tag == Ordering::Zyx;
  TokenSequence seq;
  seq.ordering = strategy.tag;
  seq.tokens.push_back(Token::pc_start());
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const Patch& p = patches[order[slot]];
    if (slot > 0 && separators) {
      const CellIndex& prev = seq.cells.back();
      if (prev.z != p.index.z) {
        seq.tokens.push_back(Token::layer_sep());
      } else if (prev.y != p.index.y) {
        seq.tokens.push_back(Token::row_sep());
      }
    }
    seq.tokens.push_back(Token::patch(static_cast<std::uint32_t>(slot)));
    seq.cells.push_back(p.index);
    detail::append_patch_rows(seq.patch_matrix, p);
  }
  seq.tokens.push_back(Token::pc_end());
  return seq;
}

// Indices of the `k` nearest points to `center` (squared xyz distance,
// smallest index on ties), nearest first.
inline std::vector<std::size_t> nearest_neighbors(const PointCloud& cloud, const Vec3& center, std::size_t k) {
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> d(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) d[i] = squared_distance(cloud.points[i].pos, center);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return d[a] != d[b] ? d[a] < d[b] : a < b; });
  idx.resize(k);
  return idx;
}

// Grid-free baseline: `samples` centers by global FPS, each grouped with its
// m nearest neighbors. Tokens follow FPS selection order; no separators.
inline TokenSequence build_fps_sequence(const PointCloud& cloud, std::size_t m, std::size_t samples) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyCloud, "cannot sequence an empty cloud");
  if (m == 0 || samples == 0) throw Error(ErrorKind::InvalidArgument, "fps baseline needs m >= 1 and samples >= 1");
  std::vector<Vec3> xyz(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) xyz[i] = cloud.points[i].pos;
  auto centers = fps(xyz, std::min(samples, xyz.size()), nearest_to_centroid(xyz));

  TokenSequence seq;
  seq.ordering = Ordering::FpsSampling;
  seq.tokens.push_back(Token::pc_start());
  std::vector<Point> buf;
  for (std::size_t slot = 0; slot < centers.size(); ++slot) {
    auto group = nearest_neighbors(cloud, xyz[centers[slot]], m);
    buf.clear();
    for (auto i : group) buf.push_back(cloud.points[i]);
    detail::append_patch_rows(seq.patch_matrix, standardize(buf, group, m));
    seq.tokens.push_back(Token::patch(static_cast<std::uint32_t>(slot)));
  }
  seq.tokens.push_back(Token::pc_end());
  return seq;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::string_view kMatrixMagic = "PTKM";
inline constexpr std::size_t kMatrixHeaderBytes = 16;

inline std::filesystem::path matrix_path_for(const std::filesystem::path& token_path) {
  auto p = token_path;
  p += ".ptkm";
  return p;
}

inline std::string format_tokens(const TokenSequence& seq) {
  std::string out = "# ordering ";
  out += to_string(seq.ordering);
  out += '\n';
  for (std::size_t s = 0; s < seq.cells.size(); ++s) {
    const auto& c = seq.cells[s];
    out += "# cell " + std::to_string(s) + ' ' + std::to_string(c.z) + ' ' + std::to_string(c.y) + ' ' +
           std::to_string(c.x) + '\n';
  }
  for (const auto& t : seq.tokens) {
    switch (t.kind) {
      case TokenKind::PcStart: out += "PCSTART\n"; break;
      case TokenKind::PcEnd: out += "PCEND\n"; break;
      case TokenKind::PointPatch: out += "PATCH " + std::to_string(t.value) + '\n'; break;
      case TokenKind::LayerSep: out += "LSEP\n"; break;
      case TokenKind::RowSep: out += "RSEP\n"; break;
      case TokenKind::Text: out += "TEXT " + std::to_string(t.value) + '\n'; break;
    }
  }
  return out;
}

inline std::string encode_matrix(const PatchMatrix& mat) {
  std::string out(kMatrixMagic);
  io::put_u32(out, static_cast<std::uint32_t>(mat.rows));
  io::put_u32(out, static_cast<std::uint32_t>(mat.cols));
  io::put_u32(out, 0);
  out.reserve(kMatrixHeaderBytes + mat.data.size() * 8);
  for (double v : mat.data) io::put_f64(out, v);
  return out;
}

// Writes `path` (token text) and its `.ptkm` sidecar, each atomically.
inline void export_sequence(const TokenSequence& seq, const std::filesystem::path& path) {
  if (seq.patch_matrix.rows == 0) throw Error(ErrorKind::Io, "refusing to export a sequence with no patches");
  if (seq.patch_matrix.data.size() != seq.patch_matrix.rows * seq.patch_matrix.cols) {
    throw Error(ErrorKind::ShapeMismatch, "patch matrix storage does not match its shape");
  }
  io::write_file_atomic(matrix_path_for(path), encode_matrix(seq.patch_matrix));
  io::write_file_atomic(path, format_tokens(seq));
}

inline PatchMatrix decode_matrix(std::string_view bytes) {
  if (bytes.size() < kMatrixHeaderBytes || bytes.substr(0, 4) != kMatrixMagic) {
    throw Error(ErrorKind::Io, "matrix sidecar has a bad header");
  }
  io::ByteReader r(bytes.substr(4));
  PatchMatrix mat;
  mat.rows = r.u32();
  mat.cols = r.u32();
  r.u32();
  const std::size_t n = mat.rows * mat.cols;
  if (r.remaining() != n * 8) {
    throw Error(ErrorKind::Io, "matrix sidecar holds " + std::to_string(r.remaining()) + " payload bytes, expected " +
                                   std::to_string(n * 8));
  }
  mat.data.resize(n);
  for (auto& v : mat.data) v = r.f64();
  return mat;
}

// Parses token text. Cell metadata must list slots 0..P-1 in order.
inline TokenSequence parse_tokens(std::string_view text) {
  TokenSequence seq;
  std::size_t line_no = 0;
  for (auto line : io::split_lines(text)) {
    ++line_no;
    auto f = io::split_ws(line);
    if (f.empty()) continue;
    if (f[0].front() == '#') {
      if (f.size() == 3 && f[1] == "ordering") {
        auto o = parse_ordering(f[2]);
        if (!o) throw ParseError(line_no, "unknown ordering '" + std::string(f[2]) + "'");
        seq.ordering = *o;
      } else if (f.size() == 6 && f[1] == "cell") {
        auto slot = io::parse_int<std::size_t>(f[2]);
        auto z = io::parse_int<std::uint32_t>(f[3]);
        auto y = io::parse_int<std::uint32_t>(f[4]);
        auto x = io::parse_int<std::uint32_t>(f[5]);
        if (!slot || !z || !y || !x || *slot != seq.cells.size()) throw ParseError(line_no, "malformed cell line");
        seq.cells.push_back({*z, *y, *x});
      }
      continue;
    }
    auto need = [&](std::size_t n) {
      if (f.size() != n) throw ParseError(line_no, "wrong field count for " + std::string(f[0]));
    };
    auto number = [&]() {
      auto v = io::parse_int<std::uint32_t>(f[1]);
      if (!v) throw ParseError(line_no, "bad number '" + std::string(f[1]) + "'");
      return *v;
    };
    if (f[0] == "PCSTART") {
      need(1);
      seq.tokens.push_back(Token::pc_start());
    } else if (f[0] == "PCEND") {
      need(1);
      seq.tokens.push_back(Token::pc_end());
    } else if (f[0] == "LSEP") {
      need(1);
      seq.tokens.push_back(Token::layer_sep());
    } else if (f[0] == "RSEP") {
      need(1);
      seq.tokens.push_back(Token::row_sep());
    } else if (f[0] == "PATCH") {
      need(2);
      seq.tokens.push_back(Token::patch(number()));
    } else if (f[0] == "TEXT") {
      need(2);
      seq.tokens.push_back(Token::text(number()));
    } else {
      throw ParseError(line_no, "unknown token '" + std::string(f[0]) + "'");
    }
  }
  return seq;
}

inline TokenSequence import_sequence(const std::filesystem::path& path) {
  auto seq = parse_tokens(io::read_file(path));
  seq.patch_matrix = decode_matrix(io::read_file(matrix_path_for(path)));
  if (seq.patch_matrix.rows != seq.count(TokenKind::PointPatch)) {
    throw Error(ErrorKind::Io, "matrix rows do not match PATCH token count");
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Grammar

struct GrammarReport {
  bool valid = true;
  std::string reason;
  std::size_t patches = 0;
  std::size_t layer_seps = 0;
  std::size_t row_seps = 0;
};

// Checks the point-cloud envelope: one PCSTART ... PCEND block holding only
// PATCH/LSEP/RSEP, starting and ending with a PATCH, no doubled separators,
// slots 0..P-1 in order. With cell metadata under ZYX ordering, cells must
// be strictly increasing and every separator must match its index change.
// Non-ZYX orderings carry no separators.
inline GrammarReport validate_grammar(const TokenSequence& seq) {
  GrammarReport rep;
  rep.patches = seq.count(TokenKind::PointPatch);
  rep.layer_seps = seq.count(TokenKind::LayerSep);
  rep.row_seps = seq.count(TokenKind::RowSep);
  auto fail = [&](std::string why) {
    if (rep.valid) {
      rep.valid = false;
      rep.reason = std::move(why);
    }
  };

  if (seq.count(TokenKind::PcStart) != 1 || seq.count(TokenKind::PcEnd) != 1) {
    fail("expected exactly one PCSTART and one PCEND");
    return rep;
  }
  auto begin = std::find_if(seq.tokens.begin(), seq.tokens.end(),
                            [](const Token& t) { return t.kind == TokenKind::PcStart; });
  auto end = std::find_if(seq.tokens.begin(), seq.tokens.end(),
                          [](const Token& t) { return t.kind == TokenKind::PcEnd; });
  if (end < begin) {
    fail("PCEND precedes PCSTART");
    return rep;
  }
  for (auto it = seq.tokens.begin(); it != seq.tokens.end(); ++it) {
    if ((it < begin || it > end) &&
        (it->kind == TokenKind::PointPatch || it->kind == TokenKind::LayerSep || it->kind == TokenKind::RowSep)) {
      fail("point-cloud token outside the envelope");
    }
  }
  std::span<const Token> body(begin + 1, end);
  if (body.empty()) {
    fail("empty point-cloud envelope");
    return rep;
  }
  auto is_sep = [](const Token& t) { return t.kind == TokenKind::LayerSep || t.kind == TokenKind::RowSep; };
  if (is_sep(body.front())) fail("leading separator");
  if (is_sep(body.back())) fail("trailing separator");

  std::uint32_t next_slot = 0;
  const Token* prev = nullptr;
  for (const auto& t : body) {
    if (t.kind == TokenKind::Text) fail("text token inside the envelope");
    if (t.kind == TokenKind::PointPatch) {
      if (t.value != next_slot) fail("patch slots not consecutive from 0");
      ++next_slot;
    } else if (prev && is_sep(*prev) && is_sep(t)) {
      fail("consecutive separators");
    }
    prev = &t;
  }
  if (seq.ordering != Ordering::Zyx && (rep.layer_seps || rep.row_seps)) {
    fail("separators under a non-ZYX ordering");
  }

  if (!seq.cells.empty()) {
    if (seq.cells.size() != rep.patches) {
      fail("cell metadata count differs from patch count");
    } else if (seq.ordering == Ordering::Zyx) {
      const bool has_separators = rep.layer_seps + rep.row_seps > 0;
      std::size_t slot = 0;
      std::optional<TokenKind> pending;
      for (const auto& t : body) {
        if (is_sep(t)) {
          pending = t.kind;
          continue;
        }
        if (slot > 0) {
          const auto& a = seq.cells[slot - 1];
          const auto& b = seq.cells[slot];
          if (!(a < b)) fail("cells not in (z,y,x) order");
          std::optional<TokenKind> expected;
          if (a.z != b.z) {
            expected = TokenKind::LayerSep;
          } else if (a.y != b.y) {
            expected = TokenKind::RowSep;
          }
          if (has_separators && pending != expected) fail("separator does not match index change at slot " + std::to_string(slot));
        }
        pending.reset();
        ++slot;
      }
    }
  }
  if (seq.patch_matrix.rows != 0 && seq.patch_matrix.rows != rep.patches) {
    fail("patch matrix rows differ from patch count");
  }
  return rep;
}

}  // namespace ptk
