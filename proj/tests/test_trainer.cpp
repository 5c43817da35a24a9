#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "occam/errors.hpp"
#include "occam/inference.hpp"
#include "occam/network.hpp"
#include "occam/rng.hpp"
#include "occam/trainer.hpp"

using namespace occam;

namespace {

Dataset blobs(std::size_t n, int classes, double separation, std::uint64_t seed) {
  return make_blobs(n, classes, 2, separation, 1.0, seed);
}

// Every layer type: padded and strided conv, relu, maxpool, flatten, dense.
ArchSpec gradcheck_arch() {
  ArchSpec a;
  a.input = {2, 7, 7};
  a.classes = 3;
  a.stages = {Stage::conv2d(2, 3, 3, 3, 1, 1), Stage::relu(),      Stage::maxpool2d(2, 2),
              Stage::conv2d(3, 4, 2, 2, 2, 0), Stage::flatten(),   Stage::dense(4, 5),
              Stage::relu(),                   Stage::dense(5, 3), Stage::softmax_logits()};
  return a;
}

Dataset one_per_class(int classes) {
  Dataset d;
  d.shape = {2, 1, 1};
  d.classes = classes;
  d.features = Eigen::MatrixXf::Random(2, classes);
  for (int c = 0; c < classes; ++c) d.labels.push_back(c);
  return d;
}

}  // namespace

TEST_CASE("analytic gradients match central differences for every layer type") {
  const ArchSpec a = gradcheck_arch();
  const Network<double> net(a);
  Rng rng(17);
  Params<double> p = Params<double>::zeros(a);
  for (auto& w : p.weights)
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.5 * rng.normal();
  for (auto& b : p.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = 0.1 * rng.normal();
  Mat<double> x(static_cast<Eigen::Index>(a.input.size()), 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const std::vector<int> y{0, 2, 1, 2};

  Params<double> grad = Params<double>::zeros(a);
  net.loss_and_grad(p, x, y, grad);
  Params<double> scratch = Params<double>::zeros(a);
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = [&](double& v, double analytic) {
    const double saved = v;
    v = saved + h;
    const double up = net.loss_and_grad(p, x, y, scratch);
    v = saved - h;
    const double down = net.loss_and_grad(p, x, y, scratch);
    v = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-6));
  };
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) probe(p.weights[l].data()[i], grad.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) probe(p.biases[l].data()[i], grad.biases[l].data()[i]);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("learning-rate schedule is inverse-time decay") {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.decay_rate = 0.5;
  c.decay_steps = 10;
  CHECK(c.learning_rate_at(0) == doctest::Approx(0.1));
  CHECK(c.learning_rate_at(9) == doctest::Approx(0.1));
  CHECK(c.learning_rate_at(10) == doctest::Approx(0.1 / 1.5));
  CHECK(c.learning_rate_at(25) == doctest::Approx(0.1 / 2.0));
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.learning_rate = -1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("zero steps returns the seeded initialization") {
  const ArchSpec a = named_arch("mlp-2d");
  TrainConfig c;
  c.steps = 0;
  c.seed = 44;
  const Dataset d = blobs(50, 2, 3.0, 1);
  CHECK(bit_equal(train(a, d, c), init_model(a, derive_seed(44, 0))));
}

TEST_CASE("training is deterministic and independent of example order") {
  const ArchSpec a = named_arch("mlp-2d");
  const Dataset d = blobs(300, 2, 2.0, 2);
  TrainConfig c;
  c.steps = 200;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.seed = 3;
  const Model m1 = train(a, d, c);
  CHECK(bit_equal(train(a, d, c), m1));

  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(8);
  rng.shuffle(perm.begin(), perm.end());
  CHECK(bit_equal(train(a, d.subset(perm), c), m1));

  c.seed = 4;
  CHECK_FALSE(bit_equal(train(a, d, c), m1));
}

TEST_CASE("linearly separable data is fitted exactly") {
  const Dataset d = blobs(400, 2, 8.0, 5);
  // Oracle: exhaustive search over directions and thresholds for a separator.
  bool separable = false;
  for (int k = 0; k < 3600 && !separable; ++k) {
    const double t = 2.0 * std::numbers::pi * k / 3600.0;
    std::vector<std::pair<double, int>> proj;
    for (std::size_t i = 0; i < d.size(); ++i)
      proj.push_back({std::cos(t) * d.features(0, static_cast<Eigen::Index>(i)) +
                          std::sin(t) * d.features(1, static_cast<Eigen::Index>(i)),
                      d.labels[i]});
    std::sort(proj.begin(), proj.end());
    std::size_t changes = 0;
    for (std::size_t i = 1; i < proj.size(); ++i) changes += proj[i].second != proj[i - 1].second;
    separable = changes == 1;
  }
  REQUIRE(separable);

  ArchSpec a;
  a.input = {2, 1, 1};
  a.classes = 2;
  a.stages = {Stage::dense(2, 2), Stage::softmax_logits()};
  TrainConfig c;
  c.steps = 2000;
  c.batch_size = 32;
  c.learning_rate = 0.1;
  c.seed = 6;
  CHECK(evaluate_01(train(a, d, c), d).point_estimate == 0.0);
}

TEST_CASE("divergence is reported with its step") {
  const Dataset d = blobs(100, 2, 3.0, 7);
  TrainConfig c;
  c.steps = 500;
  c.learning_rate = 1e30;
  c.momentum = 0.0;
  try {
    (void)train(named_arch("mlp-2d"), d, c);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() >= 0);
    CHECK(e.step() <= 500);
  }
}

TEST_CASE("constant logits on balanced data give error 0.9 with the smallest-index tie rule") {
  ArchSpec a;
  a.input = {2, 1, 1};
  a.classes = 10;
  a.stages = {Stage::dense(2, 10), Stage::softmax_logits()};
  const Model zero = zero_model(a);
  const Dataset d = one_per_class(10);
  CHECK(evaluate_01(zero, d).point_estimate == doctest::Approx(0.9));
  // Only the class-0 example is right, so relabelling it flips the count by one.
  Dataset all_zero = d;
  std::fill(all_zero.labels.begin(), all_zero.labels.end(), 0);
  CHECK(evaluate_01(zero, all_zero).point_estimate == 0.0);
  Dataset complement = all_zero;
  std::fill(complement.labels.begin(), complement.labels.end(), 1);
  CHECK(evaluate_01(zero, complement).point_estimate == 1.0);
}

TEST_CASE("0-1 error is a fraction with denominator n and agrees with the sparse evaluator") {
  const ArchSpec a = named_arch("mlp-2d");
  const Dataset d = blobs(137, 2, 1.0, 9);
  Model m = init_model(a, 10);
  const ErrorEstimate e = evaluate_01(m, d);
  const double count = e.point_estimate * 137.0;
  CHECK(count == doctest::Approx(std::round(count)).epsilon(1e-12));
  CHECK(e.point_estimate >= 0.0);
  CHECK(e.point_estimate <= 1.0);
  CHECK(evaluate_01(m, d, 3).point_estimate == e.point_estimate);

  SparseEvaluator sparse(a, nonzero_pattern(m));
  sparse.set_params(params_from_model<float>(m));
  CHECK(static_cast<double>(sparse.count_errors(d)) == doctest::Approx(count));
}

TEST_CASE("label randomization") {
  const Dataset d = blobs(10, 2, 3.0, 11);
  CHECK(randomize_labels(d, 0.0, 1).labels == d.labels);
  const auto half = randomization_subset(10, 0.5, 1);
  CHECK(half.size() == 5);
  CHECK(std::set<std::size_t>(half.begin(), half.end()).size() == 5);
  CHECK(randomization_subset(10, 0.55, 1).size() == 5);
  CHECK(randomization_subset(7, 1.0, 1).size() == 7);
  CHECK_THROWS_AS(randomize_labels(d, 1.5, 1), InvalidInput);

  // Only selected examples may change.
  Dataset many = d;
  many.classes = 1000;
  const Dataset r = randomize_labels(many, 0.5, 1);
  for (std::size_t i = 0; i < 10; ++i)
    if (r.labels[i] != many.labels[i]) CHECK(std::find(half.begin(), half.end(), i) != half.end());

  // Full randomization of 10,000 labels: chi-square against uniform, 9 dof,
  // below the 0.999 quantile 27.88.
  Dataset big = make_blobs(10000, 10, 2, 3.0, 1.0, 12);
  std::fill(big.labels.begin(), big.labels.end(), 0);
  const Dataset u = randomize_labels(big, 1.0, 13);
  std::vector<double> hist(10, 0.0);
  for (int y : u.labels) hist[static_cast<std::size_t>(y)] += 1.0;
  double chi2 = 0.0;
  for (double h : hist) chi2 += (h - 1000.0) * (h - 1000.0) / 1000.0;
  CHECK(chi2 < 27.88);
}

TEST_CASE("stochastic evaluation") {
  const ArchSpec a = named_arch("mlp-2d");
  const Dataset d = blobs(400, 2, 3.0, 14);
  TrainConfig c;
  c.steps = 300;
  c.batch_size = 32;
  c.learning_rate = 0.05;
  c.seed = 15;
  const Model m = train(a, d, c);

  CompressedTriplet t;
  for (std::size_t i = 0; i < m.weight_layer_count(); ++i) {
    TripletLayer l;
    l.name = m.weight(i).name.substr(0, m.weight(i).name.find('.'));
    l.p = m.weight(i).size();
    l.bits = 32;
    for (std::uint64_t j = 0; j < l.p; ++j) {
      l.support.push_back(j);
      l.assignments.push_back(static_cast<std::uint32_t>(j));
      l.codebook.push_back(m.weight(i).values[j]);
    }
    t.layers.push_back(l);
  }
  Model decoded = decode_weights(t, a);
  copy_biases(decoded, m);
  const double base = evaluate_01(decoded, d).point_estimate;

  SUBCASE("sigma = 0 reproduces the deterministic error on every draw") {
    const auto post = make_posterior(t, decoded, 0.0, RangeGranularity::per_layer);
    const ErrorEstimate e = evaluate_stochastic(post, d, 5, 3);
    REQUIRE(e.per_draw_errors.size() == 5);
    for (double x : e.per_draw_errors) CHECK(x == base);
    CHECK(e.point_estimate == base);
  }
  SUBCASE("draws are reproducible and the estimate is their mean") {
    const auto post = make_posterior(t, decoded, 0.3, RangeGranularity::per_layer);
    const ErrorEstimate e1 = evaluate_stochastic(post, d, 1, 21);
    CHECK(evaluate_stochastic(post, d, 1, 21).per_draw_errors == e1.per_draw_errors);
    const ErrorEstimate e8 = evaluate_stochastic(post, d, 8, 21);
    CHECK(e8.per_draw_errors.front() == e1.per_draw_errors.front());
    CHECK(e8.point_estimate ==
          doctest::Approx(std::accumulate(e8.per_draw_errors.begin(), e8.per_draw_errors.end(), 0.0) / 8.0));
    CHECK(evaluate_stochastic(post, d, 8, 21, 4).per_draw_errors == e8.per_draw_errors);
  }
}

TEST_CASE("very large posterior noise drives a 10-class model to chance") {
  ArchSpec a;
  a.input = {2, 1, 1};
  a.classes = 10;
  a.stages = {Stage::dense(2, 32), Stage::relu(), Stage::dense(32, 10), Stage::softmax_logits()};
  const Dataset d = make_blobs(1000, 10, 2, 6.0, 0.5, 16);
  TrainConfig c;
  c.steps = 1500;
  c.batch_size = 32;
  c.learning_rate = 0.05;
  c.seed = 17;
  const Model m = train(a, d, c);
  REQUIRE(evaluate_01(m, d).point_estimate < 0.2);

  CompressedTriplet t;
  for (std::size_t i = 0; i < m.weight_layer_count(); ++i) {
    TripletLayer l;
    l.name = m.weight(i).name.substr(0, m.weight(i).name.find('.'));
    l.p = m.weight(i).size();
    l.bits = 32;
    for (std::uint64_t j = 0; j < l.p; ++j) {
      l.support.push_back(j);
      l.assignments.push_back(static_cast<std::uint32_t>(j));
      l.codebook.push_back(m.weight(i).values[j]);
    }
    t.layers.push_back(l);
  }
  Model decoded = decode_weights(t, a);
  copy_biases(decoded, m);
  const auto post = make_posterior(t, decoded, 1.0, RangeGranularity::per_layer);
  StochasticPosterior loud = post;
  for (auto& n : loud.noise)
    for (auto& s : n.sigma) s *= 100.0;
  const ErrorEstimate e = evaluate_stochastic(loud, d, 100, 18);
  CHECK(e.point_estimate == doctest::Approx(0.9).epsilon(0.05 / 0.9));
}
