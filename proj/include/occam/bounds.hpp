#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "occam/model.hpp"
#include "occam/trainer.hpp"
#include "occam/triplet_codec.hpp"

namespace occam {

/// Phi^{-1}_gamma(x) = (1 - e^{-gamma x}) / (1 - e^{-gamma}).
double phi_inverse(double gamma, double x);

struct CatoniParams {
  double n = 1.0;
  double epsilon = 0.04;
  double alpha = 1.05;
  double lambda_lo = 1.0 + 1e-9;
  double lambda_hi = 0.0;  // 0 means 10 n
  double tolerance = 1e-12;  // on log lambda
  bool dense_grid = false;   // brute-force check instead of golden-section
  std::size_t grid_points = 1'000'000;

  void validate() const;
};

struct CatoniResult {
  double bound = 1.0;  // clamped to [0, 1]
  double unclamped = 1.0;
  double lambda_star = 0.0;
};

/// The Catoni objective at one lambda, before clamping.
double catoni_objective(double train_loss, double kl_nats, const CatoniParams& p, double lambda);

/// inf over lambda of the Catoni bound. A coarse log-spaced scan brackets the
/// minimum, which golden-section search then refines on log lambda.
CatoniResult catoni_bound(double train_loss, double kl_nats, const CatoniParams& p);

/// Length prior uniform over 2^log2_max_bits code lengths.
struct LengthPrior {
  unsigned log2_max_bits = 72;
  double neg_log_mass() const;  // -log m(l), nats
};

/// code_bits log 2 - log m(code_bits).
double occam_kl(std::uint64_t code_bits, const LengthPrior& m = {});

enum class MixtureMethod { split, gauss_hermite };

/// KL(N(c_q, sigma^2) || sum_j N(c_j, tau^2)) per coordinate. The prior is an
/// unnormalized mixture, so the result may be negative.
///
/// `split` integrates exactly over the Voronoi cells of the centers: the
/// nearest-center quadratic in closed form, the bounded remainder
/// log(1 + sum_{j != k} e^{l_j - l_k}) by adaptive Gauss-Kronrod. Plain
/// Gauss-Hermite is kept for comparison; it loses accuracy once sigma exceeds
/// the center spacing scale.
double gaussian_mixture_kl(double c_q, double sigma, std::span<const double> centers, double tau,
                           MixtureMethod method = MixtureMethod::split, int order = 64);

/// log |Xi|.
double union_penalty(double grid_cardinality);

/// Data-independent prior hyperparameters.
struct PriorSpec {
  std::vector<std::vector<double>> tau_grid;  // per weight layer
  std::vector<double> tau;                    // chosen, one per layer
  double extra_choices = 1.0;                 // other unioned discrete choices
  LengthPrior length;
  MixtureMethod method = MixtureMethod::split;
  int quad_order = 64;

  /// Product of grid sizes and extra choices.
  double cardinality() const;
  /// Throws PriorViolation unless every chosen tau is in its grid.
  void validate(std::size_t layers) const;
};

/// `points` log-spaced values spanning [lo, hi] times the He initialization
/// std sqrt(2 / fan_in) of every weight layer.
std::vector<std::vector<double>> init_scaled_tau_grid(const ArchSpec& arch, int points = 32, double lo = 1e-4,
                                                      double hi = 1.0);

struct LayerKl {
  std::string name;
  double tau = 0.0;
  double gain_nats = 0.0;
};

struct KlBreakdown {
  std::uint64_t code_bits = 0;
  double code_nats = 0.0;
  double length_nats = 0.0;
  double union_nats = 0.0;
  double gain_nats = 0.0;  // sum of the mixture KLs; usually negative
  double total_nats = 0.0;
  std::vector<LayerKl> layers;

  double length_bits() const;
  double union_bits() const;
  double gain_bits() const;
  /// code + length + union + gain bits, summed in that order.
  double effective_bits() const;
};

/// Mixture term of one layer: per (cluster, sigma) group, occupancy times
/// gaussian_mixture_kl. Coordinates with sigma == 0 carry the point-mass prior
/// of the code and add nothing.
double layer_mixture_kl(const TripletLayer& layer, const LayerNoise& noise, double tau, MixtureMethod method,
                        int order);

/// tau from `grid` minimizing layer_mixture_kl; ties go to the earlier entry.
double choose_tau(const TripletLayer& layer, const LayerNoise& noise, std::span<const double> grid,
                  MixtureMethod method = MixtureMethod::split, int order = 64);

/// Code length, length prior, union and mixture terms for a triplet whose
/// posterior noise is `noise` (one entry per layer).
KlBreakdown quantized_kl(const CompressedTriplet& t, const CodedSizes& sizes, std::span<const LayerNoise> noise,
                         const PriorSpec& prior);

/// Binary relative entropy kl(q || p), nats.
double kl_bernoulli(double q, double p);

/// Largest p in [mean, 1] with M kl(mean || p) <= log(1 / epsilon).
double mc_loss_bound(std::span<const double> per_draw_errors, double epsilon);

struct CertifyParams {
  CatoniParams catoni;  // epsilon is the PAC-Bayes share
  double epsilon_mc = 0.01;
};

struct BoundReport {
  double original_bits = 0.0;  // 32 bits per model parameter
  CodedSizes sizes;
  std::vector<std::vector<double>> sigma;  // per layer, per noise unit
  std::vector<double> tau;
  double grid_cardinality = 1.0;
  CertifyParams params;
  std::vector<double> per_draw_errors;
  std::uint64_t mc_seed = 0;
  double empirical_error = 0.0;
  double train_loss_upper = 0.0;
  KlBreakdown kl;
  double lambda_star = 0.0;
  double bound = 1.0;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  /// Table row: original, compressed, robustness adjustment, effective size,
  /// error bound.
  std::string to_text() const;
};

/// Monte-Carlo training-loss bound, then the Catoni bound on the quantized
/// KL. Confidence 1 - (epsilon_pb + epsilon_mc).
BoundReport certify(const CompressedTriplet& t, const CodedSizes& sizes, std::span<const LayerNoise> noise,
                    const PriorSpec& prior, const ErrorEstimate& errors, const CertifyParams& params);

}  // namespace occam
