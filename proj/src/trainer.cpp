#include "occam/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <optional>
#include <thread>

#include "occam/errors.hpp"
#include "occam/inference.hpp"

namespace occam {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !(decay_rate >= 0.0) || !(momentum >= 0.0) || !(l2 >= 0.0))
    throw ConfigError("rates must be >= 0");
  if (decay_steps < 1) throw ConfigError("decay interval must be >= 1");
}

double TrainConfig::learning_rate_at(long step) const {
  return learning_rate / (1.0 + decay_rate * static_cast<double>(step / decay_steps));
}

Model init_model(const ArchSpec& arch, std::uint64_t seed) {
  Model m = zero_model(arch);
  Rng rng(seed);
  const auto shapes = arch.weight_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(shapes[i].fan_in));
    for (float& v : m.weight(i).values) v = static_cast<float>(stddev * rng.normal());
  }
  return m;
}

namespace {

std::uint64_t example_hash(const Dataset& d, std::size_t i) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint32_t v) {
    for (int k = 0; k < 4; ++k) {
      h ^= (v >> (8 * k)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  };
  mix(static_cast<std::uint32_t>(d.labels[i]));
  const float* f = d.features.col(static_cast<Eigen::Index>(i)).data();
  for (Eigen::Index j = 0; j < d.features.rows(); ++j) mix(std::bit_cast<std::uint32_t>(f[j]));
  return h;
}

}  // namespace

BatchStream::BatchStream(const Dataset& data, std::uint64_t seed, int batch_size)
    : data_(data), rng_(seed), batch_(batch_size) {
  if (data.size() == 0) throw InvalidInput("cannot train on an empty dataset");
  const std::size_t n = data.size();
  std::vector<std::uint64_t> hashes(n);
  for (std::size_t i = 0; i < n; ++i) hashes[i] = example_hash(data, i);
  canonical_.resize(n);
  std::iota(canonical_.begin(), canonical_.end(), std::size_t{0});
  const auto rows = static_cast<std::size_t>(data.features.rows());
  std::sort(canonical_.begin(), canonical_.end(), [&](std::size_t a, std::size_t b) {
    if (hashes[a] != hashes[b]) return hashes[a] < hashes[b];
    if (data.labels[a] != data.labels[b]) return data.labels[a] < data.labels[b];
    return std::memcmp(data.features.col(static_cast<Eigen::Index>(a)).data(),
                       data.features.col(static_cast<Eigen::Index>(b)).data(), rows * sizeof(float)) < 0;
  });
  order_ = canonical_;
  pos_ = n;  // forces a shuffle on first use
}

void BatchStream::next(Mat<float>& x, std::vector<int>& y) {
  const std::size_t n = order_.size();
  const auto b = static_cast<std::size_t>(batch_);
  x.resize(data_.features.rows(), static_cast<Eigen::Index>(b));
  y.resize(b);
  for (std::size_t j = 0; j < b; ++j) {
    if (pos_ == n) {
      order_ = canonical_;
      rng_.shuffle(order_.begin(), order_.end());
      pos_ = 0;
    }
    const std::size_t i = order_[pos_++];
    x.col(static_cast<Eigen::Index>(j)) = data_.features.col(static_cast<Eigen::Index>(i));
    y[j] = data_.labels[i];
  }
}

MomentumSgd::MomentumSgd(const ArchSpec& arch, double momentum, double l2)
    : velocity_(Params<float>::zeros(arch)), momentum_(momentum), l2_(l2) {}

void MomentumSgd::step(Params<float>& p, const Params<float>& grad, double lr, const LayerMasks* masks) {
  const auto mu = static_cast<float>(momentum_);
  const auto rate = static_cast<float>(lr);
  const auto decay = static_cast<float>(l2_);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    velocity_.weights[i] = mu * velocity_.weights[i] - rate * (grad.weights[i] + decay * p.weights[i]);
    if (masks) {
      Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>> m((*masks)[i].data(),
                                                                        static_cast<Eigen::Index>((*masks)[i].size()));
      auto v = velocity_.weights[i].reshaped<Eigen::RowMajor>().array();
      v = (m != 0).select(v, 0.0f);
    }
    p.weights[i] += velocity_.weights[i];
    velocity_.biases[i] = mu * velocity_.biases[i] - rate * grad.biases[i];
    p.biases[i] += velocity_.biases[i];
  }
  if (masks) apply_masks(p, *masks);
}

void apply_masks(Params<float>& p, const LayerMasks& masks) {
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    auto w = p.weights[i].reshaped<Eigen::RowMajor>();
    const auto& m = masks.at(i);
    if (static_cast<Eigen::Index>(m.size()) != w.size()) throw ShapeMismatch("mask size mismatch");
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (!m[static_cast<std::size_t>(j)]) w(j) = 0.0f;
  }
}

Model train(const ArchSpec& arch, const Dataset& data, const TrainConfig& cfg) {
  return train_from(init_model(arch, derive_seed(cfg.seed, 0)), data, cfg);
}

Model train_from(Model start, const Dataset& data, const TrainConfig& cfg, const LayerMasks* masks,
                 const StepHook& hook) {
  cfg.validate();
  data.validate();
  if (data.size() == 0) throw InvalidInput("cannot train on an empty dataset");
  Network<float> net(start.arch);
  Params<float> p = params_from_model<float>(start);
  if (masks) apply_masks(p, *masks);
  Params<float> grad = Params<float>::zeros(start.arch);
  MomentumSgd opt(start.arch, cfg.momentum, cfg.l2);
  BatchStream stream(data, derive_seed(cfg.seed, 1), cfg.batch_size);
  Mat<float> x;
  std::vector<int> y;
  for (long step = 0; step < cfg.steps; ++step) {
    if (hook && !hook(step, p)) break;
    stream.next(x, y);
    const double loss = net.loss_and_grad(p, x, y, grad);
    if (!std::isfinite(loss)) throw TrainingDiverged(step);
    opt.step(p, grad, cfg.learning_rate_at(step), masks);
  }
  store_params(p, start);
  for (const auto& t : start.layers)
    for (float v : t.values)
      if (!std::isfinite(v)) throw TrainingDiverged(cfg.steps);
  return start;
}

std::size_t count_errors(const Network<float>& net, const Params<float>& p, const Dataset& data,
                         int threads) {
  constexpr Eigen::Index kChunk = 500;
  const auto n = static_cast<Eigen::Index>(data.size());
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  auto work = [&](Eigen::Index first_chunk, Eigen::Index stride) {
    std::size_t wrong = 0;
    for (Eigen::Index c = first_chunk; c < chunks; c += stride) {
      const Eigen::Index begin = c * kChunk;
      const Eigen::Index len = std::min(kChunk, n - begin);
      const Mat<float> x = data.features.middleCols(begin, len);
      const auto pred = argmax_columns(net.forward(p, x));
      for (Eigen::Index j = 0; j < len; ++j)
        if (pred[static_cast<std::size_t>(j)] != data.labels[static_cast<std::size_t>(begin + j)]) ++wrong;
    }
    return wrong;
  };
  if (threads <= 1) return work(0, 1);
  std::vector<std::size_t> partial(static_cast<std::size_t>(threads), 0);
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] { partial[static_cast<std::size_t>(t)] = work(t, threads); });
  for (auto& th : pool) th.join();
  return std::accumulate(partial.begin(), partial.end(), std::size_t{0});
}

namespace {

// Patterns at or below this density are evaluated through SparseEvaluator.
constexpr double kSparseDensity = 0.5;

}  // namespace

ErrorEstimate evaluate_01(const Model& m, const Dataset& data, int threads) {
  data.validate();
  if (data.shape.size() != m.arch.input.size() || data.classes != m.arch.classes)
    throw ShapeMismatch("dataset does not match the model input/classes");
  if (data.size() == 0) throw InvalidInput("cannot evaluate on an empty dataset");
  const auto p = params_from_model<float>(m);
  const LayerMasks pattern = nonzero_pattern(m);
  std::size_t wrong = 0;
  if (pattern_density(pattern) <= kSparseDensity) {
    SparseEvaluator eval(m.arch, pattern);
    eval.set_params(p);
    wrong = eval.count_errors(data, threads);
  } else {
    wrong = count_errors(Network<float>(m.arch), p, data, threads);
  }
  ErrorEstimate e;
  e.point_estimate = static_cast<double>(wrong) / static_cast<double>(data.size());
  return e;
}

Params<float> sample_posterior(const StochasticPosterior& post, std::uint64_t seed, std::size_t draw) {
  Params<float> p = params_from_model<float>(post.base);
  Rng rng(derive_seed(seed, draw));
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    auto w = p.weights[i].reshaped<Eigen::RowMajor>();
    const auto& mask = post.support_mask[i];
    const auto& noise = post.noise[i];
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      if (!mask[static_cast<std::size_t>(j)]) continue;
      const double sigma = noise.sigma_at(static_cast<std::size_t>(j));
      const double z = rng.normal();
      if (sigma > 0.0) w(j) = static_cast<float>(static_cast<double>(w(j)) + sigma * z);
    }
  }
  return p;
}

ErrorEstimate evaluate_stochastic(const StochasticPosterior& post, const Dataset& data,
                                  std::size_t draws, std::uint64_t seed, int threads) {
  if (draws < 1) throw InvalidInput("stochastic evaluation needs at least one draw");
  post.validate();
  data.validate();
  if (data.shape.size() != post.base.arch.input.size() || data.classes != post.base.arch.classes)
    throw ShapeMismatch("dataset does not match the posterior model");
  if (data.size() == 0) throw InvalidInput("cannot evaluate on an empty dataset");
  const LayerMasks pattern = nonzero_pattern(post.base);
  const bool sparse = pattern_density(post.support_mask) <= kSparseDensity;
  std::optional<SparseEvaluator> eval;
  if (sparse) {
    // The support may hold decoded zeros, so the operator follows the mask.
    LayerMasks support = post.support_mask;
    for (std::size_t i = 0; i < support.size(); ++i)
      for (std::size_t j = 0; j < support[i].size(); ++j) support[i][j] |= pattern[i][j];
    eval.emplace(post.base.arch, support);
  }
  Network<float> net(post.base.arch);
  ErrorEstimate e;
  e.draws = draws;
  e.seed = seed;
  e.per_draw_errors.reserve(draws);
  double sum = 0.0;
  for (std::size_t j = 0; j < draws; ++j) {
    const auto p = sample_posterior(post, seed, j);
    std::size_t wrong = 0;
    if (eval) {
      eval->set_params(p);
      wrong = eval->count_errors(data, threads);
    } else {
      wrong = count_errors(net, p, data, threads);
    }
    const double err = static_cast<double>(wrong) / static_cast<double>(data.size());
    e.per_draw_errors.push_back(err);
    sum += err;
  }
  e.point_estimate = sum / static_cast<double>(draws);
  return e;
}

}  // namespace occam
