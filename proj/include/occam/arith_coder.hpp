#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace occam {

/// Adaptive order-0 model over bytes: count(s) = 1 + occurrences so far.
/// Counts are halved (rounding up) before the total would exceed 2^30.
class AdaptiveByteModel {
public:
  static constexpr std::uint32_t kSymbols = 256;
  static constexpr std::uint32_t kMaxTotal = 1u << 30;

  AdaptiveByteModel();

  std::uint32_t total() const noexcept { return total_; }
  std::uint32_t count(std::uint8_t s) const noexcept { return counts_[s]; }
  /// Sum of counts of symbols below `s`.
  std::uint32_t cumulative(std::uint32_t s) const noexcept;
  /// Symbol whose cumulative interval contains `target` (< total).
  std::uint8_t find(std::uint32_t target) const noexcept;
  void update(std::uint8_t s);

private:
  void rebuild();
  std::uint32_t counts_[kSymbols];
  std::uint32_t tree_[kSymbols + 1];  // Fenwick tree over counts
  std::uint32_t total_ = 0;
};

/// Bit-level 32-bit integer arithmetic coder (low/high with pending
/// opposite bits). Output bits are packed MSB-first; the last byte is padded
/// with zero bits.
class ArithEncoder {
public:
  void encode(std::uint8_t symbol);
  /// Flushes the two disambiguating bits plus pending bits.
  std::vector<std::uint8_t> finish();

private:
  void emit(int bit);
  void emit_with_pending(int bit);

  AdaptiveByteModel model_;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xFFFFFFFFull;
  std::uint64_t pending_ = 0;
  std::vector<std::uint8_t> out_;
  std::uint8_t acc_ = 0;
  int nbits_ = 0;
  bool finished_ = false;
};

/// Reads past the end of the stream as zero bits.
class ArithDecoder {
public:
  explicit ArithDecoder(std::span<const std::uint8_t> bytes);
  std::uint8_t decode();

private:
  int next_bit();

  AdaptiveByteModel model_;
  std::span<const std::uint8_t> in_;
  std::size_t bit_pos_ = 0;
  std::uint64_t low_ = 0;
  std::uint64_t high_ = 0xFFFFFFFFull;
  std::uint64_t value_ = 0;
};

std::vector<std::uint8_t> arith_encode(std::span<const std::uint8_t> symbols);

/// Decodes exactly `count` symbols. The stream must be the canonical encoding
/// of its output (re-encoding reproduces it byte for byte); otherwise throws
/// DecodeError, which catches wrong counts and most corruptions.
std::vector<std::uint8_t> arith_decode(std::span<const std::uint8_t> bytes, std::size_t count);

/// Ideal adaptive code length sum_i -log2 P(symbol_i | prefix), in bits.
double adaptive_code_length(std::span<const std::uint8_t> symbols);

}  // namespace occam
