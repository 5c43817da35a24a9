#include "occam/arith_coder.hpp"

#include <algorithm>
#include <cmath>

#include "occam/errors.hpp"

namespace occam {

namespace {

constexpr std::uint64_t kTop = 0xFFFFFFFFull;
constexpr std::uint64_t kHalf = 0x80000000ull;
constexpr std::uint64_t kQuarter = 0x40000000ull;
constexpr std::uint64_t kThreeQuarters = 0xC0000000ull;

}  // namespace

AdaptiveByteModel::AdaptiveByteModel() {
  std::fill(std::begin(counts_), std::end(counts_), 1u);
  rebuild();
}

void AdaptiveByteModel::rebuild() {
  std::fill(std::begin(tree_), std::end(tree_), 0u);
  total_ = 0;
  for (std::uint32_t s = 0; s < kSymbols; ++s) {
    total_ += counts_[s];
    for (std::uint32_t i = s + 1; i <= kSymbols; i += i & (~i + 1)) tree_[i] += counts_[s];
  }
}

std::uint32_t AdaptiveByteModel::cumulative(std::uint32_t s) const noexcept {
  std::uint32_t sum = 0;
  for (std::uint32_t i = s; i > 0; i -= i & (~i + 1)) sum += tree_[i];
  return sum;
}

std::uint8_t AdaptiveByteModel::find(std::uint32_t target) const noexcept {
  // Largest prefix with cumulative <= target; the symbol is the next one.
  std::uint32_t pos = 0;
  for (std::uint32_t step = kSymbols; step > 0; step >>= 1) {
    const std::uint32_t next = pos + step;
    if (next <= kSymbols && tree_[next] <= target) {
      pos = next;
      target -= tree_[next];
    }
  }
  return static_cast<std::uint8_t>(pos);
}

void AdaptiveByteModel::update(std::uint8_t s) {
  if (total_ + 1 > kMaxTotal) {
    for (auto& c : counts_) c = (c + 1) / 2;
    rebuild();
  }
  ++counts_[s];
  ++total_;
  for (std::uint32_t i = s + 1u; i <= kSymbols; i += i & (~i + 1)) ++tree_[i];
}

void ArithEncoder::emit(int bit) {
  acc_ = static_cast<std::uint8_t>((acc_ << 1) | bit);
  if (++nbits_ == 8) {
    out_.push_back(acc_);
    acc_ = 0;
    nbits_ = 0;
  }
}

void ArithEncoder::emit_with_pending(int bit) {
  emit(bit);
  for (; pending_ > 0; --pending_) emit(1 - bit);
}

void ArithEncoder::encode(std::uint8_t symbol) {
  if (finished_) throw InvalidInput("encoder already finished");
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t total = model_.total();
  const std::uint64_t lo = model_.cumulative(symbol);
  const std::uint64_t hi = lo + model_.count(symbol);
  high_ = low_ + range * hi / total - 1;
  low_ = low_ + range * lo / total;
  for (;;) {
    if (high_ < kHalf) {
      emit_with_pending(0);
    } else if (low_ >= kHalf) {
      emit_with_pending(1);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ = 2 * low_;
    high_ = 2 * high_ + 1;
  }
  model_.update(symbol);
}

std::vector<std::uint8_t> ArithEncoder::finish() {
  if (finished_) throw InvalidInput("encoder already finished");
  finished_ = true;
  ++pending_;
  emit_with_pending(low_ < kQuarter ? 0 : 1);
  if (nbits_ > 0) {
    out_.push_back(static_cast<std::uint8_t>(acc_ << (8 - nbits_)));
    acc_ = 0;
    nbits_ = 0;
  }
  return std::move(out_);
}

ArithDecoder::ArithDecoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
  for (int i = 0; i < 32; ++i) value_ = (value_ << 1) | static_cast<std::uint64_t>(next_bit());
}

int ArithDecoder::next_bit() {
  const std::size_t byte = bit_pos_ / 8;
  const int bit = byte < in_.size() ? (in_[byte] >> (7 - bit_pos_ % 8)) & 1 : 0;
  ++bit_pos_;
  return bit;
}

std::uint8_t ArithDecoder::decode() {
  const std::uint64_t range = high_ - low_ + 1;
  const std::uint64_t total = model_.total();
  const std::uint64_t target = ((value_ - low_ + 1) * total - 1) / range;
  if (target >= total) throw DecodeError("arithmetic stream is corrupt");
  const std::uint8_t s = model_.find(static_cast<std::uint32_t>(target));
  const std::uint64_t lo = model_.cumulative(s);
  const std::uint64_t hi = lo + model_.count(s);
  high_ = low_ + range * hi / total - 1;
  low_ = low_ + range * lo / total;
  for (;;) {
    if (high_ < kHalf) {
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      value_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      value_ -= kQuarter;
    } else {
      break;
    }
    low_ = 2 * low_;
    high_ = 2 * high_ + 1;
    value_ = ((value_ << 1) | static_cast<std::uint64_t>(next_bit())) & kTop;
  }
  model_.update(s);
  return s;
}

std::vector<std::uint8_t> arith_encode(std::span<const std::uint8_t> symbols) {
  ArithEncoder enc;
  for (std::uint8_t s : symbols) enc.encode(s);
  return enc.finish();
}

std::vector<std::uint8_t> arith_decode(std::span<const std::uint8_t> bytes, std::size_t count) {
  ArithDecoder dec(bytes);
  std::vector<std::uint8_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(dec.decode());
  const auto again = arith_encode(out);
  if (!std::equal(again.begin(), again.end(), bytes.begin(), bytes.end()))
    throw DecodeError("arithmetic stream does not match the requested symbol count");
  return out;
}

double adaptive_code_length(std::span<const std::uint8_t> symbols) {
  AdaptiveByteModel model;
  double bits = 0.0;
  for (std::uint8_t s : symbols) {
    bits -= std::log2(static_cast<double>(model.count(s)) / static_cast<double>(model.total()));
    model.update(s);
  }
  return bits;
}

}  // namespace occam
