#include <doctest.h>

#include <cmath>
#include <numbers>

#include "occam/bounds.hpp"
#include "occam/errors.hpp"
#include "occam/rng.hpp"
#include "oracles.hpp"

using namespace occam;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1.0); }

CatoniParams mnist_params() {
  CatoniParams p;
  p.n = 60'000;
  p.epsilon = 0.025;
  p.alpha = 1.05;
  return p;
}

TripletLayer toy_layer(std::string name, std::vector<float> codebook, std::vector<std::uint32_t> q, std::uint64_t p) {
  TripletLayer l;
  l.name = std::move(name);
  l.p = p;
  l.bits = 2;
  l.codebook = std::move(codebook);
  for (std::size_t j = 0; j < q.size(); ++j) l.support.push_back(2 * j + 1);
  l.assignments = std::move(q);
  return l;
}

LayerNoise uniform_noise(double sigma) { return LayerNoise{0, {sigma}}; }

}  // namespace

TEST_CASE("phi_inverse") {
  for (double g : {1e-6, 0.01, 1.0, 10.0}) {
    CHECK(phi_inverse(g, 0.0) == 0.0);
    CHECK(phi_inverse(g, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(phi_inverse(0.001, 0.3) == doctest::Approx(0.3001049).epsilon(1e-7));
  CHECK(phi_inverse(1e-12, 0.3) == doctest::Approx(0.3).epsilon(1e-9));
  CHECK_THROWS_AS(phi_inverse(0.0, 0.5), InvalidInput);
}

TEST_CASE("phi_inverse matches the series oracle and is increasing") {
  double worst = 0.0;
  for (int i = 0; i <= 40; ++i) {
    const double g = std::pow(10.0, -6.0 + 7.0 * i / 40.0);
    double prev = -1.0;
    for (int j = 0; j <= 50; ++j) {
      const double x = j / 50.0;
      const double v = phi_inverse(g, x);
      const double o = oracle::phi_inverse(g, x);
      if (o != 0.0) worst = std::max(worst, std::abs(v - o) / std::abs(o));
      else CHECK(v == 0.0);
      CHECK(v > prev);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-15);
      prev = v;
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("catoni bound against the dense lambda grid") {
  const CatoniParams p = mnist_params();
  SUBCASE("saturated") { CHECK(catoni_bound(1.0, 0.0, p).bound == 1.0); }
  SUBCASE("zero loss and KL") {
    const auto r = catoni_bound(0.0, 0.0, p);
    const double o = oracle::catoni_grid(0.0, 0.0, p.n, p.epsilon, p.alpha);
    CHECK(r.bound > 0.0);
    CHECK(std::abs(r.bound - o) <= 1e-9);
  }
  SUBCASE("table regime") {
    const auto r = catoni_bound(0.02, 35'000.0, p);
    const double o = oracle::catoni_grid(0.02, 35'000.0, p.n, p.epsilon, p.alpha);
    CHECK(std::abs(r.bound - o) <= 1e-6);
    CHECK(r.bound > 0.3);
    CHECK(r.bound < 0.6);
    CHECK(r.lambda_star > 1.0);
    CHECK(r.lambda_star <= 10.0 * p.n);
  }
  SUBCASE("dense-grid mode agrees") {
    CatoniParams d = p;
    d.dense_grid = true;
    d.grid_points = 200'000;
    CHECK(catoni_bound(0.05, 20'000.0, d).bound ==
          doctest::Approx(catoni_bound(0.05, 20'000.0, p).bound).epsilon(1e-6));
  }
}

TEST_CASE("catoni bound is monotone") {
  Rng rng(17);
  CatoniParams p = mnist_params();
  for (int t = 0; t < 100; ++t) {
    const double l = 0.5 * rng.uniform();
    const double kl = 1e5 * rng.uniform();
    const double b = catoni_bound(l, kl, p).bound;
    CHECK(catoni_bound(l + 0.01, kl, p).bound >= b - 1e-12);
    CHECK(catoni_bound(l, kl + 100.0, p).bound >= b - 1e-12);
    CatoniParams more = p;
    more.n *= 2.0;
    CHECK(catoni_bound(l, kl, more).bound <= b + 1e-12);
  }
}

TEST_CASE("catoni input validation") {
  CatoniParams p = mnist_params();
  CHECK_THROWS_AS(catoni_bound(0.1, INFINITY, p), InvalidInput);
  p.alpha = 1.0;
  CHECK_THROWS_AS(catoni_bound(0.1, 1.0, p), InvalidInput);
}

TEST_CASE("occam KL") {
  const double ln2 = std::numbers::ln2;
  CHECK(occam_kl(1) == doctest::Approx(73.0 * ln2).epsilon(1e-15));
  CHECK(occam_kl(1) == doctest::Approx(50.60).epsilon(1e-4));
  CHECK(occam_kl(51'036) == doctest::Approx((51'036.0 + 72.0) * ln2).epsilon(1e-15));
  CHECK(occam_kl(51'036) == doctest::Approx(35'425.4).epsilon(1e-5));
  CHECK(occam_kl(3'944'743) == doctest::Approx(2.73434e6).epsilon(1e-5));
  CHECK_THROWS_AS(occam_kl(0), InvalidInput);
  CHECK_THROWS_AS(occam_kl(1025, LengthPrior{10}), PriorViolation);
}

TEST_CASE("gaussian mixture KL examples") {
  const std::vector<double> one{0.7};
  CHECK(gaussian_mixture_kl(0.7, 0.3, one, 0.3) == 0.0);
  const std::vector<double> twin{0.0, 0.0};
  CHECK(gaussian_mixture_kl(0.0, 1.0, twin, 1.0) == doctest::Approx(-std::numbers::ln2).epsilon(1e-12));
  CHECK(rel_err(gaussian_mixture_kl(0.0, 1.0, twin, 1.0), oracle::mixture_kl_trapezoid(0.0, 1.0, twin, 1.0)) <= 1e-6);
  const std::vector<double> far{0.0, 10.0};
  CHECK(rel_err(gaussian_mixture_kl(0.0, 0.5, far, 1.0), oracle::mixture_kl_trapezoid(0.0, 0.5, far, 1.0)) <= 1e-6);
  CHECK_THROWS_AS(gaussian_mixture_kl(0.0, 0.0, far, 1.0), InvalidInput);
  CHECK_THROWS_AS(gaussian_mixture_kl(0.0, 1.0, std::vector<double>{}, 1.0), InvalidInput);
}

TEST_CASE("gaussian mixture KL matches the trapezoid oracle on a random battery") {
  Rng rng(99);
  double worst = 0.0;
  for (int t = 0; t < 24; ++t) {
    const std::size_t r = 1 + rng.below(16);
    std::vector<double> c(r);
    for (auto& v : c) v = rng.normal() * 0.2;
    const double sigma = 0.002 + 0.05 * rng.uniform();
    const double tau = sigma / std::pow(10.0, -1.0 + 2.0 * rng.uniform());
    const double c_q = c[rng.below(r)];
    const double v = gaussian_mixture_kl(c_q, sigma, c, tau);
    worst = std::max(worst, rel_err(v, oracle::mixture_kl_trapezoid(c_q, sigma, c, tau)));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("gauss-hermite agrees when the noise is narrow") {
  const std::vector<double> c{-1.0, 0.0, 1.0};
  const double split = gaussian_mixture_kl(0.0, 0.01, c, 0.02);
  const double gh = gaussian_mixture_kl(0.0, 0.01, c, 0.02, MixtureMethod::gauss_hermite, 64);
  CHECK(rel_err(gh, split) <= 1e-9);
}

TEST_CASE("union penalty") {
  CHECK(union_penalty(1.0) == 0.0);
  CHECK(union_penalty(std::pow(32.0, 4)) == doctest::Approx(4.0 * std::log(32.0)).epsilon(1e-14));
  CHECK(union_penalty(std::pow(32.0, 4)) == doctest::Approx(13.86).epsilon(1e-3));
  CHECK(union_penalty(2.0 * std::pow(32.0, 4)) == doctest::Approx(14.56).epsilon(1e-3));
  CHECK_THROWS_AS(union_penalty(0.5), InvalidInput);
}

TEST_CASE("monte-carlo loss bound") {
  CHECK(mc_loss_bound(std::vector<double>(10, 1.0), 0.01) == 1.0);
  const std::vector<double> zeros(1000, 0.0);
  CHECK(std::abs(mc_loss_bound(zeros, 0.01) - (1.0 - std::pow(0.01, 1.0 / 1000.0))) <= 1e-10);
  CHECK(mc_loss_bound(zeros, 0.01) == doctest::Approx(0.004595).epsilon(1e-3));
  const std::vector<double> tenth(500, 0.1);
  CHECK(std::abs(mc_loss_bound(tenth, 0.01) - oracle::mc_bound(0.1, 500, 0.01)) <= 1e-10);
  CHECK_THROWS_AS(mc_loss_bound(std::vector<double>{}, 0.01), InvalidInput);
  CHECK_THROWS_AS(mc_loss_bound(std::vector<double>{1.5}, 0.01), InvalidInput);
}

TEST_CASE("monte-carlo bound tightens towards the mean") {
  Rng rng(3);
  double prev = 1.0;
  for (std::size_t m : {std::size_t{100}, std::size_t{10'000}, std::size_t{1'000'000}}) {
    std::vector<double> draws(m);
    for (auto& d : draws) d = 0.05 + 0.01 * rng.uniform();
    double mean = 0.0;
    for (double d : draws) mean += d;
    mean /= static_cast<double>(m);
    const double b = mc_loss_bound(draws, 0.01);
    CHECK(b >= mean);
    CHECK(b < prev);
    prev = b;
    if (m == 1'000'000) CHECK(b - mean < 1e-3);
  }
}

TEST_CASE("quantized KL decomposition") {
  const std::vector<float> cb{0.0f, -0.5f, 0.25f, 0.75f};
  CompressedTriplet t{{toy_layer("a", cb, {1, 2, 3, 3, 1}, 20), toy_layer("b", cb, {2, 2, 1, 3, 3}, 12)}};
  for (auto& l : t.layers) l.zero_cluster = 0;
  const CodedSizes sizes = coded_sizes(t);
  PriorSpec prior;
  prior.tau_grid = {{0.1, 0.2}, {0.1, 0.2, 0.4}};
  prior.tau = {0.2, 0.4};
  std::vector<LayerNoise> noise{uniform_noise(0.2), uniform_noise(0.4)};

  SUBCASE("matches a coordinate-by-coordinate sum") {
    const KlBreakdown b = quantized_kl(t, sizes, noise, prior);
    double brute = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> c(cb.begin(), cb.end());
      for (auto q : t.layers[i].assignments)
        brute += gaussian_mixture_kl(cb[q], noise[i].sigma[0], c, prior.tau[i]);
    }
    CHECK(b.gain_nats == doctest::Approx(brute).epsilon(1e-9));
    CHECK(b.total_nats == occam_kl(sizes.raw_compressed_bits()) + union_penalty(6.0) + b.gain_nats);
    CHECK(b.effective_bits() ==
          static_cast<double>(b.code_bits) + b.length_bits() + b.union_bits() + b.gain_bits());
  }
  SUBCASE("occupancy multiplies one coordinate") {
    CompressedTriplet one{{toy_layer("a", cb, {2, 2, 2}, 10)}};
    PriorSpec pr;
    pr.tau_grid = {{0.3}};
    pr.tau = {0.3};
    std::vector<LayerNoise> nz{uniform_noise(0.1)};
    const auto b = quantized_kl(one, coded_sizes(one), nz, pr);
    std::vector<double> c(cb.begin(), cb.end());
    CHECK(b.gain_nats == doctest::Approx(3.0 * gaussian_mixture_kl(0.25, 0.1, c, 0.3)).epsilon(1e-14));
  }
  SUBCASE("empty supports reduce to the occam bound plus union") {
    CompressedTriplet e{{toy_layer("a", {0.0f}, {}, 5), toy_layer("b", {0.0f}, {}, 7)}};
    const auto s = coded_sizes(e);
    const auto b = quantized_kl(e, s, noise, prior);
    CHECK(b.gain_nats == 0.0);
    CHECK(b.total_nats == occam_kl(s.raw_compressed_bits()) + union_penalty(prior.cardinality()));
  }
  SUBCASE("tau outside the grid is rejected") {
    prior.tau = {0.3, 0.4};
    CHECK_THROWS_AS(quantized_kl(t, sizes, noise, prior), PriorViolation);
  }
}

TEST_CASE("choose_tau picks the grid minimizer") {
  const std::vector<float> cb{-0.1f, 0.0f, 0.1f};
  TripletLayer l = toy_layer("a", cb, {0, 1, 2, 2, 0}, 12);
  const LayerNoise noise = uniform_noise(0.02);
  const std::vector<double> grid{0.001, 0.01, 0.05, 0.2, 1.0};
  const double best = choose_tau(l, noise, grid);
  for (double tau : grid)
    CHECK(layer_mixture_kl(l, noise, best, MixtureMethod::split, 64) <=
          layer_mixture_kl(l, noise, tau, MixtureMethod::split, 64));
}

TEST_CASE("certify produces a finite report") {
  CompressedTriplet e{{toy_layer("a", {0.0f}, {}, 5)}};
  PriorSpec prior;
  prior.tau_grid = {{1.0}};
  prior.tau = {1.0};
  std::vector<LayerNoise> noise{uniform_noise(0.0)};
  ErrorEstimate est;
  est.point_estimate = 0.0;
  est.per_draw_errors = {0.0};
  est.draws = 1;
  CertifyParams params;
  params.catoni.n = 100;
  const auto sizes = coded_sizes(e);
  const BoundReport r = certify(e, sizes, noise, prior, est, params);
  CHECK(std::isfinite(r.bound));
  CHECK(r.bound >= 0.0);
  CHECK(r.bound <= 1.0);
  CHECK(r.kl.effective_bits() >= static_cast<double>(sizes.raw_compressed_bits()));
  const auto j = r.to_json();
  CHECK(j["bound"].get<double>() == r.bound);
  CHECK(j["kl"]["total"]["nats"].get<double>() == r.kl.total_nats);
}

TEST_CASE("one center at tau = sigma reduces to the occam KL plus union, bit for bit") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const float c = static_cast<float>(rng.normal());
    std::vector<std::uint32_t> q(1 + rng.below(200), 0);
    CompressedTriplet one{{toy_layer("a", {c}, q, 2 * q.size() + 3)}};
    const double sigma = std::pow(10.0, -3.0 + 3.0 * rng.uniform());
    PriorSpec pr;
    pr.tau_grid = {{sigma, 2.0 * sigma}};
    pr.tau = {sigma};
    std::vector<LayerNoise> nz{uniform_noise(sigma)};
    const CodedSizes sizes = coded_sizes(one);
    const KlBreakdown b = quantized_kl(one, sizes, nz, pr);
    CHECK(b.gain_nats == 0.0);
    CHECK(b.code_nats + b.length_nats == occam_kl(sizes.raw_compressed_bits()));
    CHECK(b.total_nats == occam_kl(sizes.raw_compressed_bits()) + union_penalty(2.0));
  }
}
