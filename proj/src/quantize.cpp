#include "occam/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "occam/errors.hpp"
#include "occam/rng.hpp"

namespace occam {

void QuantizeConfig::validate(std::size_t layers) const {
  if (bits.size() != 1 && bits.size() != layers)
    throw ConfigError("quantize: expected 1 or " + std::to_string(layers) + " bit widths");
  for (int b : bits)
    if (b < 1 || b > 16) throw ConfigError("quantize: bits must lie in [1, 16]");
  if (kmeans_iters < 0) throw ConfigError("quantize: kmeans iterations must be >= 0");
  fine_tune.validate();
}

std::uint32_t nearest_center(std::span<const double> c, double v) {
  const auto it = std::lower_bound(c.begin(), c.end(), v);
  if (it == c.begin()) return 0;
  if (it == c.end()) return static_cast<std::uint32_t>(c.size() - 1);
  const auto hi = static_cast<std::uint32_t>(it - c.begin());
  return v - c[hi - 1] <= c[hi] - v ? hi - 1 : hi;
}

namespace {

double assign(std::span<const float> values, std::span<const double> centers, std::vector<std::uint32_t>& q) {
  double sse = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    const double v = values[j];
    q[j] = nearest_center(centers, v);
    const double d = v - centers[q[j]];
    sse += d * d;
  }
  return sse;
}

std::vector<double> distinct_sorted(std::span<const float> values) {
  std::vector<double> d(values.begin(), values.end());
  std::sort(d.begin(), d.end());
  d.erase(std::unique(d.begin(), d.end()), d.end());
  return d;
}

}  // namespace

KMeans1d kmeans_1d(std::span<const float> values, std::size_t clusters, int max_iters, std::uint64_t seed) {
  KMeans1d out;
  if (clusters == 0) {
    if (!values.empty()) throw InvalidInput("kmeans: no clusters for a nonempty input");
    out.converged = true;
    return out;
  }
  if (distinct_sorted(values).size() < clusters) throw InvalidInput("kmeans: fewer distinct values than clusters");

  Rng rng(seed);
  const std::size_t n = values.size();
  std::vector<double> centers;
  centers.push_back(values[rng.below(n)]);
  std::vector<double> d2(n);
  for (std::size_t j = 0; j < n; ++j) d2[j] = std::pow(values[j] - centers[0], 2);
  while (centers.size() < clusters) {
    double total = 0.0;
    for (double d : d2) total += d;
    const double target = rng.uniform() * total;
    std::size_t pick = n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (d2[j] == 0.0) continue;
      acc += d2[j];
      pick = j;
      if (acc > target) break;
    }
    centers.push_back(values[pick]);
    for (std::size_t j = 0; j < n; ++j) d2[j] = std::min(d2[j], std::pow(values[j] - centers.back(), 2));
  }
  std::sort(centers.begin(), centers.end());

  out.assignments.assign(n, 0);
  assign(values, centers, out.assignments);
  std::vector<std::uint32_t> next(n);
  std::vector<double> sum(clusters);
  std::vector<std::size_t> count(clusters);
  while (out.iterations < max_iters) {
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t j = 0; j < n; ++j) {
      sum[out.assignments[j]] += values[j];
      ++count[out.assignments[j]];
    }
    for (std::size_t c = 0; c < clusters; ++c)
      if (count[c] > 0) centers[c] = sum[c] / static_cast<double>(count[c]);
    std::sort(centers.begin(), centers.end());
    out.distortion.push_back(assign(values, centers, next));
    ++out.iterations;
    if (next == out.assignments) {
      out.converged = true;
      break;
    }
    out.assignments.swap(next);
  }
  if (out.iterations == 0) out.distortion.push_back(assign(values, centers, out.assignments));
  out.centers = std::move(centers);
  return out;
}

QuantizeResult quantize(const Model& m, const LayerMasks& masks, const QuantizeConfig& cfg, const Dataset& data) {
  m.validate();
  const auto shapes = m.arch.weight_shapes();
  cfg.validate(shapes.size());
  if (masks.size() != shapes.size()) throw ShapeMismatch("quantize: mask layer count mismatch");

  QuantizeResult out;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& w = m.weight(i).values;
    const auto& mask = masks[i];
    if (mask.size() != w.size()) throw ShapeMismatch("quantize: mask size mismatch for " + shapes[i].name);
    TripletLayer l;
    l.name = shapes[i].name;
    l.p = w.size();
    l.bits = static_cast<std::uint8_t>(cfg.bits_for(i));
    std::vector<float> kept;
    for (std::size_t j = 0; j < w.size(); ++j)
      if (mask[j]) {
        l.support.push_back(j);
        kept.push_back(w[j]);
      }
    const bool pruned = l.k() < l.p;
    const std::size_t full = std::size_t{1} << l.bits;
    const std::size_t clusters = std::min(pruned ? full - 1 : full, distinct_sorted(kept).size());
    KMeans1d km = kmeans_1d(kept, clusters, cfg.kmeans_iters, derive_seed(cfg.seed, i));
    const std::uint32_t offset = pruned ? 1 : 0;
    if (pruned) {
      l.codebook.push_back(0.0f);
      l.zero_cluster = 0;
    }
    for (double c : km.centers) l.codebook.push_back(static_cast<float>(c));
    for (std::uint32_t q : km.assignments) l.assignments.push_back(q + offset);
    out.triplet.layers.push_back(std::move(l));
    out.clustering.push_back(std::move(km));
  }

  const TrainConfig& tc = cfg.fine_tune;
  if (tc.steps > 0) {
    data.validate();
    if (data.size() == 0) throw InvalidInput("cannot fine-tune on an empty dataset");
    Network<float> net(m.arch);
    Params<float> p = params_from_model<float>(m);
    Params<float> grad = Params<float>::zeros(m.arch);
    BatchStream stream(data, derive_seed(tc.seed, 1), tc.batch_size);
    std::vector<std::vector<double>> velocity;
    for (const auto& l : out.triplet.layers) velocity.emplace_back(l.r(), 0.0);
    Mat<float> x;
    std::vector<int> y;
    for (long step = 0; step < tc.steps; ++step) {
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& l = out.triplet.layers[i];
        auto flat = p.weights[i].reshaped<Eigen::RowMajor>();
        flat.setZero();
        for (std::size_t j = 0; j < l.k(); ++j)
          flat(static_cast<Eigen::Index>(l.support[j])) = l.codebook[l.assignments[j]];
      }
      stream.next(x, y);
      const double loss = net.loss_and_grad(p, x, y, grad);
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      const double lr = tc.learning_rate_at(step);
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        auto& l = out.triplet.layers[i];
        std::vector<double> g(l.r(), 0.0);
        const auto flat = grad.weights[i].reshaped<Eigen::RowMajor>();
        for (std::size_t j = 0; j < l.k(); ++j)
          g[l.assignments[j]] += flat(static_cast<Eigen::Index>(l.support[j]));
        for (std::size_t c = 0; c < l.r(); ++c) {
          if (l.zero_cluster && c == *l.zero_cluster) continue;
          auto& v = velocity[i][c];
          v = tc.momentum * v - lr * (g[c] + tc.l2 * l.codebook[c]);
          l.codebook[c] = static_cast<float>(l.codebook[c] + v);
          if (!std::isfinite(l.codebook[c])) throw TrainingDiverged(step);
        }
      }
    }
  }

  out.triplet.validate();
  out.model = decode_weights(out.triplet, m.arch);
  copy_biases(out.model, m);
  return out;
}

}  // namespace occam
