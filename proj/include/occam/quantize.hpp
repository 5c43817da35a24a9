#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "occam/dataset.hpp"
#include "occam/model.hpp"
#include "occam/trainer.hpp"

namespace occam {

struct QuantizeConfig {
  std::vector<int> bits;  // per weight layer, 1..16; a single entry applies to all
  int kmeans_iters = 100;
  TrainConfig fine_tune;  // steps == 0 disables center fine-tuning
  std::uint64_t seed = 1;

  void validate(std::size_t layers) const;
  int bits_for(std::size_t layer) const { return bits.size() == 1 ? bits[0] : bits.at(layer); }
};

/// One-dimensional k-means result. Centers are sorted ascending, so the
/// smallest-index tie rule also picks the smaller center.
struct KMeans1d {
  std::vector<double> centers;
  std::vector<std::uint32_t> assignments;
  std::vector<double> distortion;  // sum of squared errors after each Lloyd step
  int iterations = 0;
  bool converged = false;
};

/// k-means++ seeding from `seed`, then Lloyd iterations until the assignment
/// is a fixpoint or `max_iters` is reached. Requires clusters <= number of
/// distinct values.
KMeans1d kmeans_1d(std::span<const float> values, std::size_t clusters, int max_iters, std::uint64_t seed);

/// Index of the nearest sorted center; ties go to the smaller index.
std::uint32_t nearest_center(std::span<const double> sorted_centers, double v);

struct QuantizeResult {
  CompressedTriplet triplet;
  Model model;  // decoded weights plus the biases of the input model
  std::vector<KMeans1d> clustering;
};

/// Codebook quantization of the weights kept by `masks`. Layers with pruned
/// weights reserve codebook entry 0 as the exact-zero cluster; it holds no
/// support entries since pruned weights lie outside the support. The other
/// 2^b - 1 entries (2^b for unpruned layers) come from kmeans_1d on the kept
/// values, shrunk to the number of distinct values when there are fewer.
/// Optional fine-tuning moves the nonzero centers by the summed gradient of
/// their members, assignments frozen.
QuantizeResult quantize(const Model& m, const LayerMasks& masks, const QuantizeConfig& cfg,
                        const Dataset& data);

}  // namespace occam
