#pragma once

// Morton (Z-order) and Hilbert ranks over (z, y, x) cell indices.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>

#include "ptk/error.hpp"
#include "ptk/partition.hpp"

namespace ptk {

inline constexpr unsigned kMaxCurveOrder = 21;  // 3 * 21 bits fit in uint64

namespace detail {

inline void check_curve_args(const CellIndex& c, unsigned order) {
  if (order == 0 || order > kMaxCurveOrder) {
    throw Error(ErrorKind::InvalidArgument, "curve order must be in [1, 21]");
  }
  const std::uint64_t limit = std::uint64_t{1} << order;
  if (c.z >= limit || c.y >= limit || c.x >= limit) {
    throw Error(ErrorKind::IndexOutOfRange, "cell index exceeds 2^" + std::to_string(order));
  }
}

// Interleaves bits, most significant bit group first, `a` highest within a group.
inline std::uint64_t interleave3(std::uint32_t a, std::uint32_t b, std::uint32_t c, unsigned order) {
  std::uint64_t code = 0;
  for (unsigned bit = order; bit-- > 0;) {
    code = (code << 3) | (std::uint64_t((a >> bit) & 1u) << 2) | (std::uint64_t((b >> bit) & 1u) << 1) |
           std::uint64_t((c >> bit) & 1u);
  }
  return code;
}

}  // namespace detail

inline std::uint64_t morton_rank(const CellIndex& c, unsigned order) {
  detail::check_curve_args(c, order);
  return detail::interleave3(c.z, c.y, c.x, order);
}

// 3D Hilbert rank via Skilling's axes-to-transpose construction
// (AIP Conf. Proc. 707, 2004), z taking the role of the first axis.
inline std::uint64_t hilbert_rank(const CellIndex& c, unsigned order) {
  detail::check_curve_args(c, order);
  std::array<std::uint32_t, 3> x{c.z, c.y, c.x};
  const std::uint32_t top = std::uint32_t{1} << (order - 1);

  for (std::uint32_t q = top; q > 1; q >>= 1) {
    const std::uint32_t p = q - 1;
    for (std::size_t i = 0; i < 3; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint32_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  for (std::size_t i = 1; i < 3; ++i) x[i] ^= x[i - 1];
  std::uint32_t t = 0;
  for (std::uint32_t q = top; q > 1; q >>= 1) {
    if (x[2] & q) t ^= q - 1;
  }
  for (auto& v : x) v ^= t;

  return detail::interleave3(x[0], x[1], x[2], order);
}

// Smallest order whose cube side 2^order holds `max_split` cells per axis.
inline unsigned curve_order_for(std::size_t max_split) {
  if (max_split <= 2) return 1;
  return static_cast<unsigned>(std::bit_width(max_split - 1));
}

}  // namespace ptk
