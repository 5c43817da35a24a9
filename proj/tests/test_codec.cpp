#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "occam/arith_coder.hpp"
#include "occam/errors.hpp"
#include "occam/prune.hpp"
#include "occam/quantize.hpp"
#include "occam/rng.hpp"
#include "occam/triplet_codec.hpp"
#include "occam/varint.hpp"

using namespace occam;

namespace {

std::vector<std::uint8_t> random_bytes(std::size_t n, std::uint64_t seed, int alphabet = 256) {
  Rng rng(seed);
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.below(static_cast<std::uint64_t>(alphabet)));
  return out;
}

double empirical_entropy_bits(std::span<const std::uint8_t> bytes) {
  std::map<std::uint8_t, double> counts;
  for (auto b : bytes) counts[b] += 1.0;
  double h = 0.0;
  const double n = static_cast<double>(bytes.size());
  for (const auto& [_, c] : counts) h -= c * std::log2(c / n);
  return h;
}

TripletLayer random_layer(Rng& rng, std::string name) {
  TripletLayer l;
  l.name = std::move(name);
  l.p = 1 + rng.below(5000);
  l.bits = static_cast<std::uint8_t>(1 + rng.below(8));
  const std::size_t r = 1 + rng.below(std::size_t{1} << l.bits);
  for (std::size_t j = 0; j < r; ++j) l.codebook.push_back(static_cast<float>(rng.normal()));
  if (rng.below(2) == 0) {
    l.codebook[0] = 0.0f;
    l.zero_cluster = 0;
  }
  const double density = rng.uniform();
  for (std::uint64_t i = 0; i < l.p; ++i)
    if (rng.uniform() < density) {
      l.support.push_back(i);
      l.assignments.push_back(static_cast<std::uint32_t>(rng.below(r)));
    }
  return l;
}

}  // namespace

TEST_CASE("adaptive model cumulative counts and search") {
  AdaptiveByteModel m;
  CHECK(m.total() == 256);
  CHECK(m.cumulative(10) == 10);
  m.update(7);
  m.update(7);
  CHECK(m.count(7) == 3);
  CHECK(m.cumulative(8) == 10);
  CHECK(m.find(6) == 6);
  CHECK(m.find(7) == 7);
  CHECK(m.find(9) == 7);
  CHECK(m.find(10) == 8);
  CHECK(m.find(257) == 255);
}

TEST_CASE("arithmetic coder round trips") {
  SUBCASE("empty input") {
    const auto enc = arith_encode({});
    CHECK(enc.size() * 8 <= 16);
    CHECK(arith_decode(enc, 0).empty());
  }
  SUBCASE("random streams") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto x = random_bytes(10'000, seed);
      CHECK(arith_decode(arith_encode(x), x.size()) == x);
    }
  }
  SUBCASE("skewed and constant streams") {
    for (int alphabet : {1, 2, 3, 17}) {
      const auto x = random_bytes(20'000, 99, alphabet);
      const auto enc = arith_encode(x);
      CHECK(arith_decode(enc, x.size()) == x);
      CHECK(static_cast<double>(enc.size() * 8) <= adaptive_code_length(x) + 16.0);
    }
  }
}

TEST_CASE("constant stream costs the adaptive code length") {
  const std::vector<std::uint8_t> x(10'000, 42);
  // The i-th symbol (0-based) has probability (i + 1) / (i + 256).
  double oracle = 0.0;
  for (int i = 0; i < 10'000; ++i) oracle -= std::log2((i + 1.0) / (i + 256.0));
  CHECK(adaptive_code_length(x) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(oracle == doctest::Approx(1717.0).epsilon(1e-3));
  const auto enc = arith_encode(x);
  CHECK(static_cast<double>(enc.size() * 8) <= oracle + 16.0);
}

TEST_CASE("arithmetic decode rejects a wrong count or a damaged stream") {
  const auto x = random_bytes(1000, 5);
  auto enc = arith_encode(x);
  CHECK_THROWS_AS(arith_decode(enc, x.size() + 50), DecodeError);
  CHECK_THROWS_AS(arith_decode(enc, x.size() - 50), DecodeError);
  enc[enc.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(arith_decode(enc, x.size()), DecodeError);
}

TEST_CASE("model counts grow by one per symbol") {
  AdaptiveByteModel m;
  for (int i = 0; i < 3000; ++i) m.update(static_cast<std::uint8_t>(i % 3));
  CHECK(m.total() == 3256);
  CHECK(m.count(0) == 1001);
  CHECK(m.count(3) == 1);
}

TEST_CASE("varint encoding") {
  std::vector<std::uint8_t> out;
  put_varint(out, 0);
  put_varint(out, 127);
  put_varint(out, 128);
  put_varint(out, 300);
  put_varint(out, ~std::uint64_t{0});
  CHECK(out.size() == 1 + 1 + 2 + 2 + 10);
  CHECK(out[2] == 0x80);
  CHECK(out[3] == 0x01);
  std::size_t pos = 0;
  CHECK(get_varint(out, pos) == 0);
  CHECK(get_varint(out, pos) == 127);
  CHECK(get_varint(out, pos) == 128);
  CHECK(get_varint(out, pos) == 300);
  CHECK(get_varint(out, pos) == ~std::uint64_t{0});
  CHECK(pos == out.size());
  const std::vector<std::uint8_t> overlong{0x80, 0x00};
  pos = 0;
  CHECK_THROWS_AS(get_varint(overlong, pos), DecodeError);
  const std::vector<std::uint8_t> truncated{0x80};
  pos = 0;
  CHECK_THROWS_AS(get_varint(truncated, pos), DecodeError);
}

TEST_CASE("support deltas are 1-based first index then differences") {
  const std::vector<std::uint64_t> s{0, 4, 5, 300};
  const auto bytes = support_delta_bytes(s);
  CHECK(bytes == std::vector<std::uint8_t>{1, 4, 1, 0xA7, 0x02});
  CHECK(support_from_delta_bytes(bytes, 4) == s);
  CHECK_THROWS_AS(support_delta_bytes(std::vector<std::uint64_t>{3, 3}), MalformedTriplet);
}

TEST_CASE("assignment packing") {
  CHECK(index_width(1) == 0);
  CHECK(index_width(2) == 1);
  CHECK(index_width(3) == 2);
  CHECK(index_width(16) == 4);
  CHECK(index_width(17) == 5);
  const std::vector<std::uint32_t> q{1, 0, 3, 2, 3};
  const auto packed = pack_assignments(q, 2);
  CHECK(packed == std::vector<std::uint8_t>{0b01001110, 0b11000000});
  CHECK(unpack_assignments(packed, q.size(), 2) == q);
  CHECK(pack_assignments(q, 0).empty());
}

TEST_CASE("triplet sizes") {
  TripletLayer l;
  l.name = "fc";
  l.p = 100'000;
  l.bits = 4;
  l.codebook.assign(16, 0.5f);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    l.support.push_back(i * 97);
    l.assignments.push_back(static_cast<std::uint32_t>(i % 16));
  }
  CompressedTriplet t{{l}};
  const auto enc = encode_triplet(t);
  const LayerSizes& s = enc.sizes.layers.at(0);
  CHECK(s.assignment_bits == 4000);
  CHECK(s.codebook_bits == 32 * 16);
  CHECK(s.support_bits % 8 == 0);
  CHECK(enc.sizes.raw_compressed_bits() == s.support_bits + s.codebook_bits + s.assignment_bits);

  TripletLayer empty;
  empty.name = "e";
  empty.p = 10;
  empty.bits = 2;
  empty.codebook = {0.0f};
  empty.zero_cluster = 0;
  const auto e = encode_triplet(CompressedTriplet{{empty}});
  CHECK(e.sizes.layers[0].assignment_bits == 0);
  CHECK(e.sizes.layers[0].support_bits == 8 * arith_encode({}).size());
  CHECK(decode_triplet(e.bytes) == CompressedTriplet{{empty}});
}

TEST_CASE("triplet round trip on randomized triplets") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    CompressedTriplet t;
    const auto layers = 1 + rng.below(4);
    for (std::uint64_t i = 0; i < layers; ++i) t.layers.push_back(random_layer(rng, "layer" + std::to_string(i)));
    const auto enc = encode_triplet(t);
    REQUIRE(decode_triplet(enc.bytes) == t);
  }
}

TEST_CASE("triplet container errors") {
  Rng rng(7);
  CompressedTriplet t{{random_layer(rng, "a"), random_layer(rng, "b")}};
  auto bytes = encode_triplet(t).bytes;
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_triplet(bytes), FormatError);
  }
  SUBCASE("truncation") {
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_triplet(bytes), Error);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_triplet(bytes), FormatError);
  }
  SUBCASE("malformed support") {
    TripletLayer bad = t.layers[0];
    bad.support = {3, 2};
    bad.assignments = {0, 0};
    CHECK_THROWS_AS(encode_triplet(CompressedTriplet{{bad}}), MalformedTriplet);
  }
}

TEST_CASE("support coding is close to the varint byte entropy on random supports") {
  Rng rng(31);
  TripletLayer l;
  l.name = "fc";
  l.p = 1'000'000;
  l.bits = 1;
  l.codebook = {1.0f};
  for (std::uint64_t i = 0; i < l.p; ++i)
    if (rng.uniform() < 0.02) {
      l.support.push_back(i);
      l.assignments.push_back(0);
    }
  const auto bytes = support_delta_bytes(l.support);
  const auto enc = encode_triplet(CompressedTriplet{{l}});
  CHECK(static_cast<double>(enc.sizes.layers[0].support_bits) <= 1.05 * empirical_entropy_bits(bytes) + 16.0);
}

TEST_CASE("magnitude pruning") {
  const std::vector<float> v{3.0f, -1.0f, 4.0f, 0.5f, -2.0f};
  CHECK(zeros_for(0.4, 5) == 2);
  CHECK(zeros_for(0.0, 5) == 0);
  CHECK(zeros_for(0.41, 5) == 3);
  CHECK(zeros_for(0.985, 431'080) == 424'614);
  const auto mask = magnitude_mask(v, 2);
  CHECK(mask == std::vector<std::uint8_t>{1, 0, 1, 0, 1});
  // Equal magnitudes: the lower index goes first.
  const std::vector<float> tie{1.0f, -1.0f, 1.0f};
  CHECK(magnitude_mask(tie, 2) == std::vector<std::uint8_t>{0, 0, 1});
  // Locked entries are pruned before any free one.
  const std::vector<std::uint8_t> locked{1, 1, 1, 1, 0};
  CHECK(magnitude_mask(v, 2, locked) == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
}

TEST_CASE("kmeans recovers exact values and never increases distortion") {
  SUBCASE("r - 1 distinct values") {
    std::vector<float> v;
    for (int i = 0; i < 40; ++i) v.push_back(static_cast<float>((i % 3) - 1) * 0.25f + 0.5f);
    const auto km = kmeans_1d(v, 3, 100, 1);
    CHECK(km.converged);
    CHECK(km.distortion.back() == 0.0);
    CHECK(km.centers == std::vector<double>{0.25, 0.5, 0.75});
  }
  SUBCASE("monotone distortion") {
    Rng rng(5);
    std::vector<float> v(2000);
    for (auto& x : v) x = static_cast<float>(rng.normal() * (rng.uniform() < 0.5 ? 1.0 : 0.1));
    const auto km = kmeans_1d(v, 15, 200, 3);
    for (std::size_t i = 1; i < km.distortion.size(); ++i) CHECK(km.distortion[i] <= km.distortion[i - 1]);
    CHECK(std::is_sorted(km.centers.begin(), km.centers.end()));
  }
  SUBCASE("nearest-center tie rule") {
    const std::vector<double> c{0.0, 1.0};
    CHECK(nearest_center(c, 0.5) == 0);
    CHECK(nearest_center(c, 0.5000001) == 1);
  }
}

TEST_CASE("kmeans matches the optimal 3-cluster quantizer on 12 points") {
  Rng rng(12);
  std::vector<float> v(12);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  // Optimal 1-D clusters are contiguous in sorted order: try every split.
  auto sse = [&](std::size_t a, std::size_t b) {
    double mean = 0.0;
    for (std::size_t i = a; i < b; ++i) mean += s[i];
    mean /= static_cast<double>(b - a);
    double e = 0.0;
    for (std::size_t i = a; i < b; ++i) e += (s[i] - mean) * (s[i] - mean);
    return e;
  };
  double best = INFINITY;
  for (std::size_t i = 1; i < 12; ++i)
    for (std::size_t j = i + 1; j < 12; ++j) best = std::min(best, sse(0, i) + sse(i, j) + sse(j, 12));
  const auto km = kmeans_1d(v, 3, 100, 1);
  REQUIRE(km.converged);
  CHECK(km.distortion.back() == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("quantize builds a zero cluster and shrinks the codebook") {
  ArchSpec arch = named_arch("mlp-2d");
  Model m = zero_model(arch);
  Rng rng(1);
  for (auto& x : m.weight(0).values) x = static_cast<float>(rng.normal());
  for (std::size_t j = 0; j < m.weight(1).values.size(); ++j) m.weight(1).values[j] = j % 2 ? 0.5f : -0.5f;
  LayerMasks masks{std::vector<std::uint8_t>(32, 1), std::vector<std::uint8_t>(32, 1)};
  masks[0][3] = 0;
  m.weight(0).values[3] = 0.0f;
  QuantizeConfig qc;
  qc.bits = {2};
  const Dataset none;
  const auto q = quantize(m, masks, qc, none);
  const TripletLayer& l0 = q.triplet.layers[0];
  CHECK(l0.zero_cluster == std::optional<std::uint32_t>{0});
  CHECK(l0.r() == 4);
  CHECK(l0.k() == 31);
  CHECK(std::find(l0.support.begin(), l0.support.end(), 3u) == l0.support.end());
  const TripletLayer& l1 = q.triplet.layers[1];
  CHECK(!l1.zero_cluster);
  CHECK(l1.codebook == std::vector<float>{-0.5f, 0.5f});
  CHECK(q.model.weight(1).values == m.weight(1).values);

  masks[1].assign(32, 0);
  const auto all = quantize(m, masks, qc, none);
  CHECK(all.triplet.layers[1].k() == 0);
  CHECK(all.triplet.layers[1].codebook == std::vector<float>{0.0f});
}
