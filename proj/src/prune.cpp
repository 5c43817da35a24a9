#include "occam/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <tuple>

#include "occam/errors.hpp"

namespace occam {

void PruneConfig::validate(std::size_t layers) const {
  if (target_sparsity.size() != layers)
    throw ConfigError("prune: expected " + std::to_string(layers) + " target sparsities, got " +
                      std::to_string(target_sparsity.size()));
  for (double s : target_sparsity)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("prune: target sparsity must lie in [0, 1)");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const RampPoint& r = schedule[i];
    if (r.step < 0 || !(r.fraction >= 0.0 && r.fraction <= 1.0))
      throw ConfigError("prune: ramp points need step >= 0 and fraction in [0, 1]");
    if (i > 0 && (r.step <= schedule[i - 1].step || r.fraction < schedule[i - 1].fraction))
      throw ConfigError("prune: schedule must be increasing in step and nondecreasing in sparsity");
  }
  if (!schedule.empty() && schedule.back().fraction != 1.0)
    throw ConfigError("prune: schedule must end at the target sparsity");
  fine_tune.validate();
}

std::size_t zeros_for(double sparsity, std::size_t p) {
  const double exact = sparsity * static_cast<double>(p);
  const double nearest = std::round(exact);
  // Treat values within rounding noise of an integer as that integer.
  const double z = std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact) ? nearest : std::ceil(exact);
  return std::min(p, static_cast<std::size_t>(z));
}

std::vector<std::uint8_t> magnitude_mask(std::span<const float> values, std::size_t zeros,
                                         std::span<const std::uint8_t> candidates) {
  if (!candidates.empty() && candidates.size() != values.size()) throw ShapeMismatch("mask size mismatch");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) {
    const bool locked = !candidates.empty() && !candidates[i];
    return std::make_tuple(!locked, std::fabs(values[i]), i);
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<std::uint8_t> mask(values.size(), 1);
  for (std::size_t j = 0; j < std::min(zeros, order.size()); ++j) mask[order[j]] = 0;
  return mask;
}

namespace {

LayerMasks masks_at(const Params<float>& shadow, const std::vector<double>& target, double fraction,
                    const LayerMasks* previous) {
  LayerMasks out;
  for (std::size_t i = 0; i < shadow.weights.size(); ++i) {
    const auto& w = shadow.weights[i];
    const std::span<const float> values(w.data(), static_cast<std::size_t>(w.size()));
    const std::size_t zeros = zeros_for(target[i] * fraction, values.size());
    std::span<const std::uint8_t> locked;
    if (previous) locked = (*previous)[i];
    out.push_back(magnitude_mask(values, zeros, locked));
  }
  return out;
}

Params<float> masked(const Params<float>& p, const LayerMasks& masks) {
  Params<float> q = p;
  apply_masks(q, masks);
  return q;
}

}  // namespace

PruneResult prune(const Model& m, const Dataset& data, const PruneConfig& cfg) {
  m.validate();
  const auto shapes = m.arch.weight_shapes();
  cfg.validate(shapes.size());
  std::vector<RampPoint> schedule = cfg.schedule;
  if (schedule.empty()) schedule.push_back({0, 1.0});

  Network<float> net(m.arch);
  Params<float> shadow = params_from_model<float>(m);
  LayerMasks masks(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) masks[i].assign(shapes[i].size(), 1);

  auto apply_point = [&](const RampPoint& r) {
    masks = masks_at(shadow, cfg.target_sparsity, r.fraction, cfg.splicing ? nullptr : &masks);
    if (!cfg.splicing) apply_masks(shadow, masks);
  };

  std::size_t next_point = 0;
  const TrainConfig& tc = cfg.fine_tune;
  if (tc.steps > 0) data.validate();
  if (tc.steps > 0 && data.size() == 0) throw InvalidInput("cannot fine-tune on an empty dataset");
  {
    Params<float> grad = Params<float>::zeros(m.arch);
    MomentumSgd opt(m.arch, tc.momentum, tc.l2);
    std::optional<BatchStream> stream;
    if (tc.steps > 0) stream.emplace(data, derive_seed(tc.seed, 1), tc.batch_size);
    Mat<float> x;
    std::vector<int> y;
    for (long step = 0; step < tc.steps; ++step) {
      while (next_point < schedule.size() && schedule[next_point].step <= step) apply_point(schedule[next_point++]);
      stream->next(x, y);
      const double loss = net.loss_and_grad(masked(shadow, masks), x, y, grad);
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      // Splicing lets the shadow of pruned weights move; otherwise they stay 0.
      opt.step(shadow, grad, tc.learning_rate_at(step), cfg.splicing ? nullptr : &masks);
    }
  }
  while (next_point < schedule.size()) apply_point(schedule[next_point++]);

  PruneResult out;
  out.model = m;
  store_params(masked(shadow, masks), out.model);
  for (const auto& t : out.model.layers)
    for (float v : t.values)
      if (!std::isfinite(v)) throw TrainingDiverged(tc.steps);
  out.masks = std::move(masks);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (std::none_of(out.masks[i].begin(), out.masks[i].end(), [](std::uint8_t v) { return v != 0; }))
      out.warnings.push_back("layer " + shapes[i].name + " is fully pruned; its consumer has no fan-in");
  return out;
}

}  // namespace occam
