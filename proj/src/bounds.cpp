#include "occam/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "occam/errors.hpp"
#include "occam/quadrature.hpp"

namespace occam {

namespace {

constexpr double kLn2 = std::numbers::ln2;

}  // namespace

double phi_inverse(double gamma, double x) {
  if (!(gamma > 0.0)) throw InvalidInput("phi_inverse needs gamma > 0");
  return std::expm1(-gamma * x) / std::expm1(-gamma);
}

void CatoniParams::validate() const {
  if (!(n >= 1.0)) throw InvalidInput("catoni: n must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidInput("catoni: epsilon must lie in (0, 1)");
  if (!(alpha > 1.0)) throw InvalidInput("catoni: alpha must be > 1");
  if (!(lambda_lo > 1.0)) throw InvalidInput("catoni: lambda search must start above 1");
  if (lambda_hi != 0.0 && !(lambda_hi > lambda_lo)) throw InvalidInput("catoni: empty lambda range");
  if (!(tolerance > 0.0)) throw InvalidInput("catoni: tolerance must be > 0");
  if (dense_grid && grid_points < 2) throw InvalidInput("catoni: dense grid needs at least 2 points");
}

double catoni_objective(double train_loss, double kl_nats, const CatoniParams& p, double lambda) {
  const double penalty = 2.0 * std::log(std::log(p.alpha * p.alpha * lambda) / std::log(p.alpha));
  const double x = train_loss + (p.alpha / lambda) * (kl_nats - std::log(p.epsilon) + penalty);
  return phi_inverse(lambda / p.n, x);
}

CatoniResult catoni_bound(double train_loss, double kl_nats, const CatoniParams& p) {
  p.validate();
  if (!(train_loss >= 0.0 && train_loss <= 1.0)) throw InvalidInput("catoni: training loss must lie in [0, 1]");
  if (!std::isfinite(kl_nats)) throw InvalidInput("catoni: KL must be finite");
  const double hi = p.lambda_hi == 0.0 ? 10.0 * p.n : p.lambda_hi;
  auto f = [&](double lambda) {
    const double v = catoni_objective(train_loss, kl_nats, p, lambda);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  double best_lambda = 0.0;
  double best = std::numeric_limits<double>::infinity();
  if (p.dense_grid) {
    const double step = (hi - p.lambda_lo) / static_cast<double>(p.grid_points - 1);
    for (std::size_t i = 0; i < p.grid_points; ++i) {
      const double lambda = p.lambda_lo + step * static_cast<double>(i);
      if (const double v = f(lambda); v < best) {
        best = v;
        best_lambda = lambda;
      }
    }
  } else {
    const double u_lo = std::log(p.lambda_lo);
    const double u_hi = std::log(hi);
    constexpr int kScan = 512;
    const double du = (u_hi - u_lo) / kScan;
    int arg = 0;
    for (int i = 0; i <= kScan; ++i) {
      const double u = i == kScan ? u_hi : u_lo + du * i;
      if (const double v = f(std::exp(u)); v < best) {
        best = v;
        arg = i;
      }
    }
    best_lambda = std::exp(arg == kScan ? u_hi : u_lo + du * arg);
    if (std::isfinite(best)) {
      double a = u_lo + du * std::max(arg - 1, 0);
      double b = std::min(u_lo + du * (arg + 1), u_hi);
      const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
      double c = b - inv_phi * (b - a);
      double d = a + inv_phi * (b - a);
      double fc = f(std::exp(c));
      double fd = f(std::exp(d));
      while (b - a > p.tolerance) {
        if (fc <= fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - inv_phi * (b - a);
          fc = f(std::exp(c));
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + inv_phi * (b - a);
          fd = f(std::exp(d));
        }
      }
      for (double u : {c, d, 0.5 * (a + b)})
        if (const double v = f(std::exp(u)); v < best) {
          best = v;
          best_lambda = std::exp(u);
        }
    }
  }
  if (!std::isfinite(best)) throw InvalidInput("catoni: objective is not finite anywhere on the lambda range");
  CatoniResult r;
  r.unclamped = best;
  r.bound = std::clamp(best, 0.0, 1.0);
  r.lambda_star = best_lambda;
  return r;
}

double LengthPrior::neg_log_mass() const { return static_cast<double>(log2_max_bits) * kLn2; }

double occam_kl(std::uint64_t code_bits, const LengthPrior& m) {
  if (code_bits < 1) throw InvalidInput("occam_kl: code length must be >= 1 bit");
  if (m.log2_max_bits < 64 && code_bits > (std::uint64_t{1} << m.log2_max_bits))
    throw PriorViolation("occam_kl: code length exceeds the length prior's support");
  return static_cast<double>(code_bits) * kLn2 + m.neg_log_mass();
}

namespace {

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double mixture_kl_gauss_hermite(double c_q, double sigma, std::span<const double> centers, double tau, int order) {
  const GaussRule& rule = gauss_hermite(order);
  std::vector<double> terms(centers.size());
  const double norm = -0.5 * std::log(2.0 * std::numbers::pi * tau * tau);
  double e = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = c_q + sigma * rule.nodes[i];
    for (std::size_t j = 0; j < centers.size(); ++j) terms[j] = -0.5 * std::pow((x - centers[j]) / tau, 2);
    e += rule.weights[i] * (norm + log_sum_exp(terms));
  }
  return -0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sigma * sigma) - e;
}

double mixture_kl_split(double c_q, double sigma, std::span<const double> unsorted, double tau) {
  std::vector<double> c(unsorted.begin(), unsorted.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  // Coinciding centers add log(multiplicity) to their cell.
  std::vector<double> mult(c.size(), 0.0);
  for (double v : unsorted) mult[static_cast<std::size_t>(std::lower_bound(c.begin(), c.end(), v) - c.begin())] += 1.0;

  const double inf = std::numeric_limits<double>::infinity();
  const double reach_lo = c_q - 12.0 * sigma;
  const double reach_hi = c_q + 12.0 * sigma;
  const double two_tau2 = 2.0 * tau * tau;
  const double tau2 = tau * tau;
  double quadratic = 0.0;
  double residual = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    const double a = k == 0 ? -inf : 0.5 * (c[k - 1] + c[k]);
    const double b = k + 1 == c.size() ? inf : 0.5 * (c[k] + c[k + 1]);
    quadratic += truncated_second_moment(c_q, sigma, c[k], a, b) / two_tau2;
    if (mult[k] > 1.0) residual += std::log(mult[k]) * normal_mass((a - c_q) / sigma, (b - c_q) / sigma);
    if (c.size() == 1) continue;

    // Inside the cell every other component is below (r - 1) e^{-d / w}, with
    // d the distance to the nearer boundary and w = tau^2 / gap, so only
    // windows of ~50 w next to the boundaries contribute.
    auto g = [&](double x) {
      // l_j - l_k written as a product to avoid cancelling two large squares.
      double s = 0.0;
      for (std::size_t j = 0; j < c.size(); ++j)
        if (j != k) s += mult[j] / mult[k] * std::exp(-(c[j] - c[k]) * (0.5 * (c[j] + c[k]) - x) / tau2);
      const double t = (x - c_q) / sigma;
      return std::exp(-0.5 * t * t) / (sigma * std::sqrt(2.0 * std::numbers::pi)) * std::log1p(s);
    };
    auto integrate = [&](double lo, double hi) {
      lo = std::max(lo, reach_lo);
      hi = std::min(hi, reach_hi);
      if (!(lo < hi)) return 0.0;
      return integrate_adaptive(g, lo, hi, 1e-14);
    };
    const double wl = k == 0 ? 0.0 : 50.0 * tau2 / (c[k] - c[k - 1]);
    const double wr = k + 1 == c.size() ? 0.0 : 50.0 * tau2 / (c[k + 1] - c[k]);
    if (k > 0 && k + 1 < c.size() && a + wl >= b - wr) {
      residual += integrate(a, b);
    } else {
      if (k > 0) residual += integrate(a, k + 1 < c.size() ? std::min(a + wl, b) : a + wl);
      if (k + 1 < c.size()) residual += integrate(k > 0 ? std::max(b - wr, a) : b - wr, b);
    }
  }
  // E[log phi_sigma] = -log(sigma sqrt(2 pi)) - 1/2 and
  // E[log sum phi_tau] = -log(tau sqrt(2 pi)) - quadratic + residual.
  return std::log(tau / sigma) - 0.5 + quadratic - residual;
}

}  // namespace

double gaussian_mixture_kl(double c_q, double sigma, std::span<const double> centers, double tau,
                           MixtureMethod method, int order) {
  if (centers.empty()) throw InvalidInput("gaussian_mixture_kl: no centers");
  if (!(sigma > 0.0) || !(tau > 0.0)) throw InvalidInput("gaussian_mixture_kl: sigma and tau must be > 0");
  const double v = method == MixtureMethod::split ? mixture_kl_split(c_q, sigma, centers, tau)
                                                  : mixture_kl_gauss_hermite(c_q, sigma, centers, tau, order);
  if (!std::isfinite(v))
    throw PrecisionError("gaussian_mixture_kl: quadrature is not finite; try the split method or a higher order");
  return v;
}

double union_penalty(double grid_cardinality) {
  if (!(grid_cardinality >= 1.0)) throw InvalidInput("union_penalty: |Xi| must be >= 1");
  return std::log(grid_cardinality);
}

double PriorSpec::cardinality() const {
  double c = extra_choices;
  for (const auto& g : tau_grid) c *= static_cast<double>(g.size());
  return c;
}

void PriorSpec::validate(std::size_t layers) const {
  if (tau_grid.size() != layers || tau.size() != layers)
    throw PriorViolation("prior: expected a tau grid and a tau for each of " + std::to_string(layers) + " layers");
  if (!(extra_choices >= 1.0)) throw PriorViolation("prior: extra choices must be >= 1");
  for (std::size_t i = 0; i < layers; ++i) {
    if (std::find(tau_grid[i].begin(), tau_grid[i].end(), tau[i]) == tau_grid[i].end())
      throw PriorViolation("prior: tau of layer " + std::to_string(i) + " is not in its declared grid");
    if (!(tau[i] > 0.0)) throw PriorViolation("prior: tau must be > 0");
  }
}

std::vector<std::vector<double>> init_scaled_tau_grid(const ArchSpec& arch, int points, double lo, double hi) {
  if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw ConfigError("tau grid: need points >= 1 and 0 < lo <= hi");
  std::vector<std::vector<double>> out;
  for (const auto& ws : arch.weight_shapes()) {
    const double scale = std::sqrt(2.0 / static_cast<double>(ws.fan_in));
    std::vector<double> g;
    for (int i = 0; i < points; ++i) {
      const double t = points == 1 ? 0.0 : static_cast<double>(i) / (points - 1);
      g.push_back(scale * std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo))));
    }
    out.push_back(std::move(g));
  }
  return out;
}

double KlBreakdown::length_bits() const { return length_nats / kLn2; }
double KlBreakdown::union_bits() const { return union_nats / kLn2; }
double KlBreakdown::gain_bits() const { return gain_nats / kLn2; }
double KlBreakdown::effective_bits() const {
  return static_cast<double>(code_bits) + length_bits() + union_bits() + gain_bits();
}

double layer_mixture_kl(const TripletLayer& layer, const LayerNoise& noise, double tau, MixtureMethod method,
                        int order) {
  if (layer.k() == 0) return 0.0;
  std::map<std::pair<std::uint32_t, double>, std::uint64_t> groups;
  for (std::size_t j = 0; j < layer.k(); ++j) {
    const double s = noise.sigma_at(static_cast<std::size_t>(layer.support[j]));
    if (s > 0.0) ++groups[{layer.assignments[j], s}];
  }
  std::vector<double> centers(layer.codebook.begin(), layer.codebook.end());
  double total = 0.0;
  for (const auto& [key, count] : groups)
    total += static_cast<double>(count) *
             gaussian_mixture_kl(layer.codebook[key.first], key.second, centers, tau, method, order);
  return total;
}

double choose_tau(const TripletLayer& layer, const LayerNoise& noise, std::span<const double> grid,
                  MixtureMethod method, int order) {
  if (grid.empty()) throw PriorViolation("choose_tau: empty grid");
  double best = std::numeric_limits<double>::infinity();
  double arg = grid[0];
  for (double tau : grid)
    if (const double v = layer_mixture_kl(layer, noise, tau, method, order); v < best) {
      best = v;
      arg = tau;
    }
  return arg;
}

KlBreakdown quantized_kl(const CompressedTriplet& t, const CodedSizes& sizes, std::span<const LayerNoise> noise,
                         const PriorSpec& prior) {
  t.validate();
  prior.validate(t.layers.size());
  if (noise.size() != t.layers.size()) throw ShapeMismatch("quantized_kl: noise layer count mismatch");
  KlBreakdown b;
  b.code_bits = sizes.raw_compressed_bits();
  b.code_nats = static_cast<double>(b.code_bits) * kLn2;
  b.length_nats = prior.length.neg_log_mass();
  b.union_nats = union_penalty(prior.cardinality());
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    LayerKl l;
    l.name = t.layers[i].name;
    l.tau = prior.tau[i];
    l.gain_nats = layer_mixture_kl(t.layers[i], noise[i], l.tau, prior.method, prior.quad_order);
    b.gain_nats += l.gain_nats;
    b.layers.push_back(std::move(l));
  }
  b.total_nats = occam_kl(b.code_bits, prior.length) + b.union_nats + b.gain_nats;
  return b;
}

double kl_bernoulli(double q, double p) {
  if (!(q >= 0.0 && q <= 1.0 && p >= 0.0 && p <= 1.0)) throw InvalidInput("kl_bernoulli: arguments must lie in [0, 1]");
  auto term = [](double a, double b) {
    if (a == 0.0) return 0.0;
    if (b == 0.0) return std::numeric_limits<double>::infinity();
    return a * std::log(a / b);
  };
  double upper = 0.0;
  if (q < 1.0) upper = p == 1.0 ? std::numeric_limits<double>::infinity() : (1.0 - q) * (std::log1p(-q) - std::log1p(-p));
  return term(q, p) + upper;
}

double mc_loss_bound(std::span<const double> errors, double epsilon) {
  if (errors.empty()) throw InvalidInput("mc_loss_bound: no draws");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidInput("mc_loss_bound: epsilon must lie in (0, 1)");
  double sum = 0.0;
  for (double e : errors) {
    if (!(e >= 0.0 && e <= 1.0)) throw InvalidInput("mc_loss_bound: draws must lie in [0, 1]");
    sum += e;
  }
  const double m = static_cast<double>(errors.size());
  const double mean = std::min(1.0, sum / m);
  const double budget = std::log(1.0 / epsilon) / m;
  if (mean >= 1.0 || kl_bernoulli(mean, 1.0) <= budget) return 1.0;
  double lo = mean;
  double hi = 1.0;
  while (hi - lo > 1e-13) {
    const double mid = 0.5 * (lo + hi);
    if (kl_bernoulli(mean, mid) <= budget) lo = mid;
    else hi = mid;
  }
  return lo;
}

BoundReport certify(const CompressedTriplet& t, const CodedSizes& sizes, std::span<const LayerNoise> noise,
                    const PriorSpec& prior, const ErrorEstimate& errors, const CertifyParams& params) {
  BoundReport r;
  r.sizes = sizes;
  for (const auto& n : noise) r.sigma.push_back(n.sigma);
  r.tau = prior.tau;
  r.grid_cardinality = prior.cardinality();
  r.params = params;
  r.per_draw_errors = errors.per_draw_errors;
  r.mc_seed = errors.seed;
  std::vector<double> draws = errors.per_draw_errors;
  if (draws.empty()) draws.push_back(errors.point_estimate);
  double sum = 0.0;
  for (double e : draws) sum += e;
  r.empirical_error = sum / static_cast<double>(draws.size());
  r.train_loss_upper = mc_loss_bound(draws, params.epsilon_mc);
  r.kl = quantized_kl(t, sizes, noise, prior);
  const CatoniResult c = catoni_bound(r.train_loss_upper, r.kl.total_nats, params.catoni);
  r.lambda_star = c.lambda_star;
  r.bound = c.bound;
  return r;
}

nlohmann::json BoundReport::to_json() const {
  using nlohmann::json;
  json layers = json::array();
  for (std::size_t i = 0; i < sizes.layers.size(); ++i) {
    const LayerSizes& s = sizes.layers[i];
    json l = {{"name", s.name},
              {"k", s.k},
              {"r", s.r},
              {"support_bits", s.support_bits},
              {"codebook_bits", s.codebook_bits},
              {"assignment_bits", s.assignment_bits}};
    if (i < sigma.size()) l["sigma"] = sigma[i];
    if (i < tau.size()) l["tau"] = tau[i];
    if (i < kl.layers.size()) {
      l["gain_nats"] = kl.layers[i].gain_nats;
      l["gain_bits"] = kl.layers[i].gain_nats / kLn2;
    }
    layers.push_back(std::move(l));
  }
  const double eps_pb = params.catoni.epsilon;
  json j;
  j["schema"] = "occam.bound-report/1";
  j["inputs"] = {{"n", params.catoni.n},
                 {"epsilon_pac_bayes", eps_pb},
                 {"epsilon_monte_carlo", params.epsilon_mc},
                 {"confidence", 1.0 - (eps_pb + params.epsilon_mc)},
                 {"alpha", params.catoni.alpha},
                 {"lambda_range", {params.catoni.lambda_lo, params.catoni.lambda_hi == 0.0 ? 10.0 * params.catoni.n
                                                                                           : params.catoni.lambda_hi}},
                 {"draws", per_draw_errors.size()},
                 {"mc_seed", mc_seed},
                 {"per_draw_errors", per_draw_errors},
                 {"grid_cardinality", grid_cardinality},
                 {"length_prior_log2_max_bits", 72},
                 {"layers", layers}};
  j["sizes"] = {{"original_bits", original_bits},
                {"support_bits", sizes.support_bits()},
                {"codebook_bits", sizes.codebook_bits()},
                {"assignment_bits", sizes.assignment_bits()},
                {"raw_compressed_bits", sizes.raw_compressed_bits()}};
  j["kl"] = {{"code", {{"nats", kl.code_nats}, {"bits", static_cast<double>(kl.code_bits)}}},
             {"length_prior", {{"nats", kl.length_nats}, {"bits", kl.length_bits()}}},
             {"union", {{"nats", kl.union_nats}, {"bits", kl.union_bits()}}},
             {"gain_back", {{"nats", kl.gain_nats}, {"bits", kl.gain_bits()}}},
             {"total", {{"nats", kl.total_nats}, {"bits", kl.effective_bits()}}}};
  j["effective_bits"] = kl.effective_bits();
  j["empirical_error"] = empirical_error;
  j["train_loss_upper"] = train_loss_upper;
  j["lambda_star"] = lambda_star;
  j["bound"] = bound;
  j["notes"] = notes;
  return j;
}

std::string BoundReport::to_text() const {
  auto kib = [](double bits) { return bits / 8.0 / 1024.0; };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "Orig. size    Comp. size    Robust. adj.    Eff. size    Error bound\n";
  os << std::setw(7) << kib(original_bits) << " KiB " << std::setw(9)
     << kib(static_cast<double>(sizes.raw_compressed_bits())) << " KiB " << std::setw(11) << kib(-kl.gain_bits())
     << " KiB " << std::setw(8) << kib(kl.effective_bits()) << " KiB " << std::setw(9) << 100.0 * bound
     << " %\n";
  os << "confidence " << 100.0 * (1.0 - params.catoni.epsilon - params.epsilon_mc) << " %, n "
     << std::setprecision(0) << params.catoni.n << ", draws " << per_draw_errors.size() << std::setprecision(4)
     << ", stochastic train error " << empirical_error << " (upper " << train_loss_upper << ")\n";
  return os.str();
}

}  // namespace occam
