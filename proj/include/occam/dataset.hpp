#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "occam/arch.hpp"

namespace occam {

/// Labelled examples; feature column i is example i, laid out channel-major.
struct Dataset {
  Shape3 shape;
  int classes = 0;
  Eigen::MatrixXf features;  // [shape.size() x n]
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

/// IDX ubyte pair (magic 0x00000803 images / 0x00000801 labels), pixels scaled
/// to [0,1]. `limit` keeps the first examples only.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit = std::nullopt);

/// `dir`/train-images-idx3-ubyte etc.; `train` selects the 60k split.
Dataset load_mnist(const std::filesystem::path& dir, bool train,
                   std::optional<std::size_t> limit = std::nullopt);

/// Isotropic Gaussian blobs with class means on a circle of radius
/// `separation` in the first two coordinates.
Dataset make_blobs(std::size_t n, int classes, int dim, double separation, double spread,
                   std::uint64_t seed);

/// Exactly floor(fraction * n) examples, chosen uniformly without
/// replacement, get a label drawn uniformly from all classes.
Dataset randomize_labels(const Dataset& data, double fraction, std::uint64_t seed);

/// The indices randomize_labels(data, fraction, seed) relabels, in draw order.
std::vector<std::size_t> randomization_subset(std::size_t n, double fraction, std::uint64_t seed);

}  // namespace occam
