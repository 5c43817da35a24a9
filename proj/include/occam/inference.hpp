#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/SparseCore>

#include "occam/dataset.hpp"
#include "occam/network.hpp"
#include "occam/trainer.hpp"

namespace occam {

/// Forward-only evaluator for pruned networks. Every weighted stage is
/// unrolled into a sparse [inputs x outputs] operator over a batch-major
/// activation layout, so the cost scales with the support size rather than
/// with the dense parameter count. The sparsity pattern is fixed at
/// construction; `set_params` only refreshes values, which makes repeated
/// noisy draws cheap.
class SparseEvaluator {
public:
  SparseEvaluator(const ArchSpec& arch, const LayerMasks& pattern);

  /// Weights outside the pattern are ignored.
  void set_params(const Params<float>& p);

  /// Logits [batch x classes] for features [inputs x batch].
  Mat<float> logits(const Mat<float>& x) const;

  std::size_t count_errors(const Dataset& data, int threads = 0) const;

  std::size_t operator_nonzeros() const;

private:
  struct Op {
    int stage = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::vector<int> outer;
    std::vector<int> inner;
    std::vector<float> values;
    std::vector<std::uint32_t> source;  // flat weight index feeding values[i]
    std::vector<int> bias_unit;         // output column -> bias entry
    Vec<float> bias;
    std::size_t weight_layer = 0;
  };

  ArchSpec arch_;
  std::vector<Shape3> shapes_;
  std::vector<Op> ops_;
  std::vector<int> op_of_stage_;
};

/// Support pattern of a model: 1 where the weight is nonzero.
LayerMasks nonzero_pattern(const Model& m);

/// Fraction of weights inside the pattern.
double pattern_density(const LayerMasks& pattern);

}  // namespace occam
