#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "occam/dataset.hpp"
#include "occam/model.hpp"
#include "occam/network.hpp"
#include "occam/rng.hpp"

namespace occam {

/// Momentum SGD with inverse-time decay:
/// lr(step) = learning_rate / (1 + decay_rate * floor(step / decay_steps)).
struct TrainConfig {
  long steps = 0;
  int batch_size = 64;
  double learning_rate = 0.01;
  double decay_rate = 0.0;
  long decay_steps = 1;
  double momentum = 0.9;
  double l2 = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  double learning_rate_at(long step) const;
};

/// One 0/1 flag per weight of every weight layer; 1 keeps the weight.
using LayerMasks = std::vector<std::vector<std::uint8_t>>;

struct ErrorEstimate {
  double point_estimate = 0.0;
  std::vector<double> per_draw_errors;  // stochastic evaluation only
  std::size_t draws = 0;
  std::uint64_t seed = 0;
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases.
Model init_model(const ArchSpec& arch, std::uint64_t seed);

/// Deterministic minibatches: examples are first put in a canonical
/// content-hash order, then reshuffled every epoch from `seed`. The stream is
/// therefore independent of the order of the dataset.
class BatchStream {
public:
  BatchStream(const Dataset& data, std::uint64_t seed, int batch_size);
  void next(Mat<float>& x, std::vector<int>& y);

private:
  const Dataset& data_;
  std::vector<std::size_t> canonical_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
  int batch_;
};

/// Momentum state; masked weights are pinned at zero together with their
/// velocity.
class MomentumSgd {
public:
  MomentumSgd(const ArchSpec& arch, double momentum, double l2);
  void step(Params<float>& p, const Params<float>& grad, double lr, const LayerMasks* masks = nullptr);

private:
  Params<float> velocity_;
  double momentum_;
  double l2_;
};

void apply_masks(Params<float>& p, const LayerMasks& masks);

/// Called before every step with (step, params); may edit params. Returning
/// false ends training before that step.
using StepHook = std::function<bool(long, Params<float>&)>;

/// Trains from the seeded initialization. Throws TrainingDiverged.
Model train(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg);

/// Continues from `start`. When `masks` is given, masked weights stay zero.
Model train_from(Model start, const Dataset& data, const TrainConfig& cfg,
                 const LayerMasks* masks = nullptr, const StepHook& hook = {});

/// Fraction of examples whose argmax prediction differs from the label.
ErrorEstimate evaluate_01(const Model& m, const Dataset& data, int threads = 0);

/// Number of misclassified examples; argmax ties go to the smallest class.
std::size_t count_errors(const Network<float>& net, const Params<float>& p, const Dataset& data,
                         int threads = 0);

/// M draws of w ~ N(w, sigma^2 J), one noise sample per full pass over the
/// data. Draw j uses derive_seed(seed, j), so draws are reproducible in
/// isolation.
ErrorEstimate evaluate_stochastic(const StochasticPosterior& post, const Dataset& data,
                                  std::size_t draws, std::uint64_t seed, int threads = 0);

/// The noisy weights of draw `draw`.
Params<float> sample_posterior(const StochasticPosterior& post, std::uint64_t seed, std::size_t draw);

}  // namespace occam
