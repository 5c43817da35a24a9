#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "occam/dataset.hpp"
#include "occam/model.hpp"
#include "occam/trainer.hpp"

namespace occam {

/// Ramp point: from `step` on, every layer is pruned to `fraction` of its
/// target sparsity.
struct RampPoint {
  long step = 0;
  double fraction = 1.0;
};

struct PruneConfig {
  std::vector<double> target_sparsity;  // per weight layer, in [0, 1)
  std::vector<RampPoint> schedule;      // empty: prune once at step 0
  bool splicing = false;
  TrainConfig fine_tune;

  /// Checks ranges and that the schedule is nondecreasing and ends at 1.
  void validate(std::size_t layers) const;
};

struct PruneResult {
  Model model;
  LayerMasks masks;
  std::vector<std::string> warnings;  // degenerate (fully pruned) layers
};

/// Zeros needed for sparsity s on p weights: ceil(s p), computed so that
/// representation error in s cannot add a weight.
std::size_t zeros_for(double sparsity, std::size_t p);

/// Magnitude mask keeping all but `zeros` entries; among equal magnitudes the
/// lower flat index is pruned first. Entries with candidate == 0 are pruned
/// before any other.
std::vector<std::uint8_t> magnitude_mask(std::span<const float> values, std::size_t zeros,
                                         std::span<const std::uint8_t> candidates = {});

/// Magnitude pruning on a ramp schedule with masked fine-tuning.
///
/// Without splicing a pruned weight stays exactly zero. With splicing the
/// optimizer keeps updating a dense shadow copy from gradients of the masked
/// network, and each ramp point re-selects the mask from the shadow
/// magnitudes, so pruned weights can come back.
PruneResult prune(const Model& m, const Dataset& data, const PruneConfig& cfg);

}  // namespace occam
