#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "occam/model.hpp"

namespace occam {

/// Payload sizes that enter the bound. Container headers are not counted.
struct LayerSizes {
  std::string name;
  std::uint64_t k = 0;
  std::uint64_t r = 0;
  std::uint64_t support_bits = 0;     // 8 x arithmetic-coded support bytes
  std::uint64_t codebook_bits = 0;    // 32 r
  std::uint64_t assignment_bits = 0;  // k ceil(log2 r), before byte padding

  std::uint64_t raw_bits() const noexcept { return support_bits + codebook_bits + assignment_bits; }
};

struct CodedSizes {
  std::vector<LayerSizes> layers;

  std::uint64_t support_bits() const noexcept;
  std::uint64_t codebook_bits() const noexcept;
  std::uint64_t assignment_bits() const noexcept;
  std::uint64_t raw_compressed_bits() const noexcept;
};

/// ceil(log2 r); 0 for r <= 1.
unsigned index_width(std::uint64_t r) noexcept;

/// Varint bytes of the support deltas d_1 = s_1 + 1, d_j = s_j - s_{j-1}
/// (1-based first index, so every delta is >= 1).
std::vector<std::uint8_t> support_delta_bytes(std::span<const std::uint64_t> support);
std::vector<std::uint64_t> support_from_delta_bytes(std::span<const std::uint8_t> bytes, std::size_t k);

std::vector<std::uint8_t> pack_assignments(std::span<const std::uint32_t> q, unsigned width);
std::vector<std::uint32_t> unpack_assignments(std::span<const std::uint8_t> bytes, std::size_t k,
                                              unsigned width);

struct EncodedTriplet {
  std::vector<std::uint8_t> bytes;  // CMP1 container
  CodedSizes sizes;
};

/// Layer records in CMP1:
///   name_len u16, name, p u64, k u64, b u8, r u32, zero_cluster u8
///   (0xFF = none), codebook r x f32, packed assignments
///   (ceil(k ceil(log2 r) / 8) bytes), support_len u32, support stream.
/// Throws MalformedTriplet when the triplet is invalid.
EncodedTriplet encode_triplet(const CompressedTriplet& t);
/// Throws FormatError on container damage and DecodeError on a bad stream.
CompressedTriplet decode_triplet(std::span<const std::uint8_t> bytes);

/// Same sizes encode_triplet reports.
CodedSizes coded_sizes(const CompressedTriplet& t);

void save_triplet(const CompressedTriplet& t, const std::filesystem::path& path);
CompressedTriplet load_triplet(const std::filesystem::path& path);

}  // namespace occam
