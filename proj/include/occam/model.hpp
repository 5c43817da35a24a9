#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "occam/arch.hpp"

namespace occam {

/// Named dense tensor, row-major, 32-bit float storage.
struct LayerTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t size() const noexcept { return values.size(); }
  /// Throws ShapeMismatch / InvalidInput when product(shape) != size or a
  /// value is not finite.
  void validate() const;

  friend bool operator==(const LayerTensor&, const LayerTensor&) = default;
};

/// A hypothesis: architecture plus, for every parametric stage in order, a
/// `<name>.weight` tensor followed by a `<name>.bias` tensor.
struct Model {
  ArchSpec arch;
  std::vector<LayerTensor> layers;

  /// Throws ArchError if the tensors do not match `arch`.
  void validate() const;

  LayerTensor& weight(std::size_t i) { return layers.at(2 * i); }
  const LayerTensor& weight(std::size_t i) const { return layers.at(2 * i); }
  LayerTensor& bias(std::size_t i) { return layers.at(2 * i + 1); }
  const LayerTensor& bias(std::size_t i) const { return layers.at(2 * i + 1); }
  std::size_t weight_layer_count() const noexcept { return layers.size() / 2; }

  friend bool operator==(const Model&, const Model&) = default;
};

/// All-zero model with the tensor layout of `arch`.
Model zero_model(const ArchSpec& arch);

/// Bit-exact comparison of the float representation (distinguishes -0.0f).
bool bit_equal(const Model& a, const Model& b);

/// One layer of a compressed (S, C, Q) triplet. Indices are 0-based in memory
/// and on the wire: support[j] is the flat row-major position of the j-th
/// nonzero weight, assignments[j] indexes the codebook.
struct TripletLayer {
  std::string name;
  std::uint64_t p = 0;                      // weights in the layer
  std::uint8_t bits = 0;                    // configured codebook width b
  std::vector<std::uint64_t> support;       // strictly increasing
  std::vector<float> codebook;              // r entries
  std::vector<std::uint32_t> assignments;   // one per support entry
  std::optional<std::uint32_t> zero_cluster;

  std::size_t k() const noexcept { return support.size(); }
  std::size_t r() const noexcept { return codebook.size(); }
  /// Throws MalformedTriplet on any invariant violation.
  void validate() const;

  friend bool operator==(const TripletLayer&, const TripletLayer&) = default;
};

struct CompressedTriplet {
  std::vector<TripletLayer> layers;

  std::size_t total_k() const noexcept;
  void validate() const;
  friend bool operator==(const CompressedTriplet&, const CompressedTriplet&) = default;
};

/// w_i = c[q_j] if i = s_j, else 0. Biases of the result are zero; use
/// `copy_biases` to carry the (unbounded) biases of a source model.
Model decode_weights(const CompressedTriplet& t, const ArchSpec& arch);
std::vector<float> decode_layer(const TripletLayer& layer);
void copy_biases(Model& dst, const Model& src);

enum class RangeGranularity { per_layer, per_filter };

/// Exact (min, max) of the layer, or of every output filter of a conv tensor.
std::vector<std::pair<float, float>> weight_range(const LayerTensor& layer,
                                                  RangeGranularity granularity);

/// Posterior noise of one weight layer. `sigma` holds one scale per unit of
/// `unit_size` consecutive weights (a single entry for per-layer noise).
struct LayerNoise {
  std::size_t unit_size = 0;
  std::vector<double> sigma;

  double sigma_at(std::size_t flat_index) const {
    return sigma[unit_size == 0 ? 0 : flat_index / unit_size];
  }
};

/// rho = N(w, sigma^2 J): decoded weights, per-layer noise, and the support
/// masks (diagonal of J).
struct StochasticPosterior {
  Model base;
  std::vector<LayerNoise> noise;
  std::vector<std::vector<std::uint8_t>> support_mask;

  void validate() const;
};

/// Posterior over the decoded triplet with sigma = fraction * (max - min) per
/// range unit. Per-filter granularity applies to conv layers; dense layers
/// always use the whole-layer range.
StochasticPosterior make_posterior(const CompressedTriplet& t, Model decoded, double fraction,
                                   RangeGranularity granularity);

// MDL1 container.
std::vector<std::uint8_t> serialize_model(const Model& m);
Model deserialize_model(std::span<const std::uint8_t> bytes, const ArchSpec& arch);
/// Writes the MDL1 file at `path` and the architecture descriptor next to it
/// at `path` + ".arch".
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path, const ArchSpec& arch);
std::filesystem::path arch_path_for(const std::filesystem::path& model_path);
/// Raw tensors without architecture validation.
std::vector<LayerTensor> read_mdl1_tensors(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace occam
