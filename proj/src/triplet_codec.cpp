#include "occam/triplet_codec.hpp"

#include <bit>
#include <limits>

#include "occam/arith_coder.hpp"
#include "occam/bytes.hpp"
#include "occam/errors.hpp"
#include "occam/varint.hpp"

namespace occam {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', '1'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kNoZeroCluster = 0xFF;

std::uint64_t sum_of(const CodedSizes& s, std::uint64_t LayerSizes::*field) {
  std::uint64_t total = 0;
  for (const auto& l : s.layers) total += l.*field;
  return total;
}

}  // namespace

std::uint64_t CodedSizes::support_bits() const noexcept { return sum_of(*this, &LayerSizes::support_bits); }
std::uint64_t CodedSizes::codebook_bits() const noexcept { return sum_of(*this, &LayerSizes::codebook_bits); }
std::uint64_t CodedSizes::assignment_bits() const noexcept {
  return sum_of(*this, &LayerSizes::assignment_bits);
}
std::uint64_t CodedSizes::raw_compressed_bits() const noexcept {
  return support_bits() + codebook_bits() + assignment_bits();
}

unsigned index_width(std::uint64_t r) noexcept {
  return r <= 1 ? 0u : static_cast<unsigned>(std::bit_width(r - 1));
}

std::vector<std::uint8_t> support_delta_bytes(std::span<const std::uint64_t> support) {
  std::vector<std::uint8_t> out;
  std::uint64_t prev = 0;
  for (std::size_t j = 0; j < support.size(); ++j) {
    const std::uint64_t one_based = support[j] + 1;
    if (j > 0 && support[j] <= support[j - 1]) throw MalformedTriplet("support is not strictly increasing");
    put_varint(out, one_based - prev);
    prev = one_based;
  }
  return out;
}

std::vector<std::uint64_t> support_from_delta_bytes(std::span<const std::uint8_t> bytes, std::size_t k) {
  std::vector<std::uint64_t> support;
  support.reserve(k);
  std::size_t pos = 0;
  std::uint64_t prev = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::uint64_t d = get_varint(bytes, pos);
    if (d == 0) throw DecodeError("zero support delta");
    if (d > std::numeric_limits<std::uint64_t>::max() - prev) throw DecodeError("support index overflows");
    prev += d;
    support.push_back(prev - 1);
  }
  if (pos != bytes.size()) throw DecodeError("trailing bytes after support deltas");
  return support;
}

std::vector<std::uint8_t> pack_assignments(std::span<const std::uint32_t> q, unsigned width) {
  std::vector<std::uint8_t> out((q.size() * width + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t v : q) {
    for (unsigned i = width; i-- > 0; ++bit)
      if ((v >> i) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(0x80 >> (bit % 8));
  }
  return out;
}

std::vector<std::uint32_t> unpack_assignments(std::span<const std::uint8_t> bytes, std::size_t k,
                                              unsigned width) {
  if (bytes.size() != (k * width + 7) / 8) throw DecodeError("assignment payload has the wrong length");
  std::vector<std::uint32_t> q(k, 0);
  std::size_t bit = 0;
  for (auto& v : q)
    for (unsigned i = 0; i < width; ++i, ++bit) v = (v << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
  for (; bit < bytes.size() * 8; ++bit)
    if ((bytes[bit / 8] >> (7 - bit % 8)) & 1u) throw DecodeError("nonzero assignment padding");
  return q;
}

EncodedTriplet encode_triplet(const CompressedTriplet& t) {
  t.validate();
  if (t.layers.size() > std::numeric_limits<std::uint16_t>::max()) throw MalformedTriplet("too many layers");
  ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u16(kVersion);
  w.u16(static_cast<std::uint16_t>(t.layers.size()));
  EncodedTriplet out;
  for (const TripletLayer& l : t.layers) {
    if (l.name.size() > std::numeric_limits<std::uint16_t>::max()) throw MalformedTriplet("layer name too long");
    if (l.r() > std::numeric_limits<std::uint32_t>::max()) throw MalformedTriplet("codebook too large");
    if (l.zero_cluster && *l.zero_cluster >= kNoZeroCluster)
      throw MalformedTriplet(l.name + ": zero cluster index does not fit the container");
    const unsigned width = index_width(l.r());
    const auto assignments = pack_assignments(l.assignments, width);
    const auto support = arith_encode(support_delta_bytes(l.support));
    if (support.size() > std::numeric_limits<std::uint32_t>::max()) throw MalformedTriplet("support too large");

    w.u16(static_cast<std::uint16_t>(l.name.size()));
    w.text(l.name);
    w.u64(l.p);
    w.u64(l.k());
    w.u8(l.bits);
    w.u32(static_cast<std::uint32_t>(l.r()));
    w.u8(l.zero_cluster ? static_cast<std::uint8_t>(*l.zero_cluster) : kNoZeroCluster);
    for (float c : l.codebook) w.f32(c);
    w.bytes(assignments);
    w.u32(static_cast<std::uint32_t>(support.size()));
    w.bytes(support);

    LayerSizes s;
    s.name = l.name;
    s.k = l.k();
    s.r = l.r();
    s.support_bits = 8 * static_cast<std::uint64_t>(support.size());
    s.codebook_bits = 32 * s.r;
    s.assignment_bits = s.k * width;
    out.sizes.layers.push_back(std::move(s));
  }
  out.bytes = w.take();
  return out;
}

CompressedTriplet decode_triplet(std::span<const std::uint8_t> bytes) {
  ByteReader rd(bytes);
  const auto magic = rd.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad magic, expected CMP1", 0);
  const std::size_t version_at = rd.offset();
  if (rd.u16("version") != kVersion) throw FormatError("unsupported CMP1 version", version_at);
  const std::uint16_t count = rd.u16("layer count");
  CompressedTriplet t;
  for (std::uint16_t i = 0; i < count; ++i) {
    TripletLayer l;
    l.name = rd.text(rd.u16("layer name length"), "layer name");
    l.p = rd.u64("layer size p");
    const std::size_t k_at = rd.offset();
    const std::uint64_t k = rd.u64("support size k");
    if (k > l.p) throw FormatError(l.name + ": k exceeds p", k_at);
    l.bits = rd.u8("codebook bits");
    const std::size_t r_at = rd.offset();
    const std::uint32_t r = rd.u32("codebook size r");
    if (r / 4 > rd.remaining()) throw FormatError(l.name + ": codebook larger than the file", r_at);
    const std::uint8_t zero = rd.u8("zero cluster");
    if (zero != kNoZeroCluster) l.zero_cluster = zero;
    l.codebook.reserve(r);
    for (std::uint32_t j = 0; j < r; ++j) l.codebook.push_back(rd.f32("codebook"));
    const unsigned width = index_width(r);
    if (width > 0 && k > rd.remaining() * 8 / width) throw FormatError(l.name + ": k larger than the file", k_at);
    const auto packed = rd.bytes((static_cast<std::size_t>(k) * width + 7) / 8, "assignments");
    l.assignments = unpack_assignments(packed, static_cast<std::size_t>(k), width);
    const auto stream = rd.bytes(rd.u32("support length"), "support stream");
    // A varint is at most 10 bytes.
    std::vector<std::uint8_t> deltas;
    {
      ArithDecoder dec(stream);
      std::size_t ended = 0;
      while (ended < k) {
        const std::uint8_t b = dec.decode();
        deltas.push_back(b);
        if (!(b & 0x80)) ++ended;
        if (deltas.size() > 10 * k) throw DecodeError(l.name + ": support stream is corrupt");
      }
    }
    const auto again = arith_encode(deltas);
    if (!std::equal(again.begin(), again.end(), stream.begin(), stream.end()))
      throw DecodeError(l.name + ": support stream is not canonical");
    l.support = support_from_delta_bytes(deltas, static_cast<std::size_t>(k));
    t.layers.push_back(std::move(l));
  }
  if (rd.remaining() != 0) throw FormatError("trailing bytes after the last layer", rd.offset());
  t.validate();
  return t;
}

CodedSizes coded_sizes(const CompressedTriplet& t) { return encode_triplet(t).sizes; }

void save_triplet(const CompressedTriplet& t, const std::filesystem::path& path) {
  write_file(path, encode_triplet(t).bytes);
}

CompressedTriplet load_triplet(const std::filesystem::path& path) { return decode_triplet(read_file(path)); }

}  // namespace occam
