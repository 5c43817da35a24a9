#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "occam/bounds.hpp"
#include "occam/dataset.hpp"
#include "occam/prune.hpp"
#include "occam/quantize.hpp"
#include "occam/trainer.hpp"

namespace occam {

/// Stage ids for derive_seed(master, stage).
enum class SeedStage : std::uint64_t {
  data = 0,     // synthetic data, subsets
  train = 1,
  prune = 2,
  quantize = 3,
  monte_carlo = 4,
  labels = 5,   // label randomization in the sweep
};

std::uint64_t stage_seed(std::uint64_t master, SeedStage stage);

/// Environment variable naming the MNIST directory when [data] dir is unset.
inline constexpr const char* kDataDirEnv = "OCCAM_DATA_DIR";

struct DataConfig {
  std::string source = "mnist";  // mnist | synthetic
  std::filesystem::path dir;     // mnist only
  std::size_t train_limit = 0;   // 0 keeps all
  std::size_t test_limit = 0;
  // synthetic blobs
  std::size_t synthetic_n = 2000;
  std::size_t synthetic_test_n = 1000;
  int synthetic_classes = 2;
  int synthetic_dim = 2;
  double synthetic_separation = 3.0;
  double synthetic_spread = 1.0;
};

struct NoiseConfig {
  double fraction = 0.05;
  RangeGranularity granularity = RangeGranularity::per_filter;
};

struct PriorConfig {
  int tau_points = 32;
  double tau_lo = 1e-4;
  double tau_hi = 1.0;
  MixtureMethod method = MixtureMethod::split;
  int quad_order = 64;
};

struct SweepConfig {
  std::vector<double> fractions{0.0, 0.5, 1.0};
  std::vector<double> sparsities{0.0, 0.5, 0.8};
  double fit_accuracy = 0.99;  // stop training once reached
  long check_every = 500;      // steps between accuracy checks
};

/// Everything a run needs. Every key read from the config file is echoed
/// into `entries` (defaults included) and from there into the reports.
struct PipelineConfig {
  DataConfig data;
  std::string arch = "lenet5";
  TrainConfig train;
  PruneConfig prune;
  QuantizeConfig quantize;
  NoiseConfig noise;
  PriorConfig prior;
  CertifyParams bound;
  std::size_t draws = 20;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 1;
  int threads = 0;  // 0: deterministic single-threaded
  SweepConfig sweep;
  std::map<std::string, std::string> entries;

  /// Throws ConfigError. Checks files, the architecture and every sub-config.
  void validate() const;
};

/// Parses INI text (sections [data] [model] [train] [prune] [quantize] [noise]
/// [prior] [bound] [run] [sweep]). Unknown keys are a ConfigError. Stage seeds
/// are derived from [run] seed.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Re-derives the stage seeds after a seed override.
void set_master_seed(PipelineConfig& cfg, std::uint64_t seed);

/// Names the stage that failed; artifacts of earlier stages stay on disk.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

Dataset load_train_data(const PipelineConfig& cfg);
Dataset load_test_data(const PipelineConfig& cfg);

/// Artifact names inside the output directory.
struct ArtifactPaths {
  std::filesystem::path trained, pruned, quantized, triplet, report_json, report_text;
  explicit ArtifactPaths(const std::filesystem::path& dir);
};

Model run_train_stage(const PipelineConfig& cfg, const Dataset& train);
PruneResult run_prune_stage(const PipelineConfig& cfg, const Model& trained, const Dataset& train);
QuantizeResult run_quantize_stage(const PipelineConfig& cfg, const Model& pruned, const LayerMasks& masks,
                                  const Dataset& train);
/// Posterior, Monte-Carlo error, tau selection, certification. `quantized`
/// carries the decoded weights and the biases.
BoundReport run_certify_stage(const PipelineConfig& cfg, const CompressedTriplet& triplet,
                              const Model& quantized, const Dataset& train);

struct CertifyOutcome {
  BoundReport report;
  nlohmann::json report_json;  // BoundReport plus config and stage metrics
};

/// train -> prune -> quantize -> encode -> stochastic evaluation -> certify.
/// Writes trained/pruned/quantized MDL1, model.cmp1, report.json and
/// report.txt under cfg.out_dir as each stage finishes.
CertifyOutcome run_certify_pipeline(const PipelineConfig& cfg);

/// Certify stage only, from quantized.mdl1 and model.cmp1 in cfg.out_dir.
CertifyOutcome certify_artifacts(const PipelineConfig& cfg);

struct SweepCell {
  double fraction = 0.0;
  double sparsity = 0.0;
  std::uint64_t seed = 0;
  double unpruned_accuracy = 0.0;
  double accuracy = 0.0;
  long train_steps = 0;  // steps spent fitting the unpruned model
  bool fitted = false;   // reached sweep.fit_accuracy within the budget
  double runtime_seconds = 0.0;
  std::string status = "ok";  // ok | failed
  std::string reason;
};

struct SweepResult {
  std::vector<SweepCell> cells;  // fraction-major, in config order
  std::map<std::string, std::string> config;
};

/// For each fraction: randomize labels, train until fit_accuracy or the
/// [train] steps budget, then prune + fine-tune to each sparsity with uniform
/// per-layer targets. Sparsity 0 records the unpruned accuracy.
SweepResult run_randomization_sweep(const PipelineConfig& cfg, const std::vector<double>& fractions,
                                    const std::vector<double>& sparsities);

enum class ReportFormat { text, csv, svg, json };
ReportFormat parse_report_format(const std::string& s);

/// CSV: one header line, then one row per layer (BoundReport) or per cell
/// (SweepResult). SVG is available for sweeps only.
std::string render_report(const BoundReport& report, ReportFormat format);
std::string render_report(const SweepResult& sweep, ReportFormat format);

/// Writes the rendering to `path`. Throws InvalidInput for an empty sweep and
/// Error when the path cannot be written.
void report_emit(const BoundReport& report, ReportFormat format, const std::filesystem::path& path);
void report_emit(const SweepResult& sweep, ReportFormat format, const std::filesystem::path& path);

/// Inverse of BoundReport::to_json.
BoundReport bound_report_from_json(const nlohmann::json& j);
/// Inverse of the sweep CSV rendering.
SweepResult sweep_from_csv(const std::string& text);

}  // namespace occam
