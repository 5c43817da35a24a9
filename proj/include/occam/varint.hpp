#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "occam/errors.hpp"

namespace occam {

/// Unsigned LEB128: 7-bit groups, least significant first, high bit set on
/// every byte but the last.
inline void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

/// Reads one varint at `pos` and advances it. Rejects overlong and
/// non-canonical (trailing zero group) encodings.
inline std::uint64_t get_varint(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw DecodeError("truncated varint");
    const std::uint8_t b = in[pos++];
    if (shift == 63 && b > 1) throw DecodeError("varint overflows 64 bits");
    v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
    if (!(b & 0x80)) {
      if (b == 0 && shift > 0) throw DecodeError("non-canonical varint");
      return v;
    }
  }
  throw DecodeError("varint overflows 64 bits");
}

}  // namespace occam
