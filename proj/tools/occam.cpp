// occam: train, compress and certify networks from the command line.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "occam/entropy_limit.hpp"
#include "occam/errors.hpp"
#include "occam/inference.hpp"
#include "occam/pipeline.hpp"
#include "occam/triplet_codec.hpp"

namespace {

using namespace occam;
namespace fs = std::filesystem;

constexpr int kConfigExit = 2;
constexpr int kStageExit = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;

  void attach(CLI::App* app, bool config_required = true) {
    auto* c = app->add_option("--config", config, "INI configuration file");
    if (config_required) c->required();
    app->add_option("--seed", seed, "master seed (overrides [run] seed)");
    app->add_option("--threads", threads, "worker threads; 0 = deterministic single-threaded");
    app->add_option("--out", out, "output directory (overrides [run] out)");
  }

  PipelineConfig load() const {
    PipelineConfig cfg = load_config(config);
    if (seed) set_master_seed(cfg, *seed);
    if (threads) cfg.threads = *threads;
    if (out) cfg.out_dir = *out;
    cfg.entries["run.threads"] = std::to_string(cfg.threads);
    cfg.entries["run.out"] = cfg.out_dir.string();
    cfg.validate();
    return cfg;
  }
};

void print_errors(const char* what, const Model& m, const Dataset& train, const Dataset& test, int threads) {
  std::cout << what << ": train error " << evaluate_01(m, train, threads).point_estimate << ", test error "
            << evaluate_01(m, test, threads).point_estimate << ", density "
            << pattern_density(nonzero_pattern(m)) << "\n";
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compression-based generalization bounds for neural networks"};
  app.require_subcommand(1);

  Common train_opts, prune_opts, quant_opts, cert_opts, sweep_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes trained.mdl1");
  train_opts.attach(train_cmd);

  auto* prune_cmd = app.add_subcommand("prune", "prune + fine-tune trained.mdl1; writes pruned.mdl1");
  prune_opts.attach(prune_cmd);

  auto* quant_cmd = app.add_subcommand("quantize", "quantize pruned.mdl1; writes quantized.mdl1 and model.cmp1");
  quant_opts.attach(quant_cmd);

  auto* cert_cmd = app.add_subcommand("certify", "full pipeline ending in report.json / report.txt");
  cert_opts.attach(cert_cmd);
  bool from_artifacts = false;
  cert_cmd->add_flag("--from-artifacts", from_artifacts, "certify model.cmp1 + quantized.mdl1 from --out");

  auto* sweep_cmd = app.add_subcommand("sweep", "label-randomization sweep; writes sweep.csv/.svg/.txt/.json");
  sweep_opts.attach(sweep_cmd);
  std::vector<double> fractions, sparsities;
  sweep_cmd->add_option("--fractions", fractions, "randomization fractions (overrides [sweep])")->delimiter(',');
  sweep_cmd->add_option("--sparsities", sparsities, "sparsities (overrides [sweep])")->delimiter(',');

  auto* ent_cmd = app.add_subcommand("entropy-bound", "entropy lower bound implied by a train/test gap");
  double train_err = 0.0, test_err = 0.0, n = 0.0;
  ent_cmd->add_option("--train-err", train_err, "training error")->required()->check(CLI::Range(0.0, 1.0));
  ent_cmd->add_option("--test-err", test_err, "test error")->required()->check(CLI::Range(0.0, 1.0));
  ent_cmd->add_option("--n", n, "number of training examples")->required()->check(CLI::PositiveNumber);

  auto* report_cmd = app.add_subcommand("report", "render report.json or sweep.csv");
  std::string input, format = "text", output;
  report_cmd->add_option("--input", input, "report.json or sweep.csv")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", format, "text | csv | svg | json");
  report_cmd->add_option("--output", output, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (train_cmd->parsed()) {
      const PipelineConfig cfg = train_opts.load();
      fs::create_directories(cfg.out_dir);
      const Dataset train = load_train_data(cfg), test = load_test_data(cfg);
      const Model m = run_train_stage(cfg, train);
      save_model(m, ArtifactPaths(cfg.out_dir).trained);
      print_errors("trained", m, train, test, cfg.threads);
    } else if (prune_cmd->parsed()) {
      const PipelineConfig cfg = prune_opts.load();
      const ArtifactPaths paths(cfg.out_dir);
      const Dataset train = load_train_data(cfg), test = load_test_data(cfg);
      const PruneResult r = run_prune_stage(cfg, load_model(paths.trained, named_arch(cfg.arch)), train);
      save_model(r.model, paths.pruned);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      print_errors("pruned", r.model, train, test, cfg.threads);
    } else if (quant_cmd->parsed()) {
      const PipelineConfig cfg = quant_opts.load();
      const ArtifactPaths paths(cfg.out_dir);
      const Dataset train = load_train_data(cfg), test = load_test_data(cfg);
      const Model pruned = load_model(paths.pruned, named_arch(cfg.arch));
      const QuantizeResult r = run_quantize_stage(cfg, pruned, nonzero_pattern(pruned), train);
      save_model(r.model, paths.quantized);
      save_triplet(r.triplet, paths.triplet);
      print_errors("quantized", r.model, train, test, cfg.threads);
      const CodedSizes sizes = coded_sizes(r.triplet);
      std::cout << "compressed size " << static_cast<double>(sizes.raw_compressed_bits()) / 8192.0 << " KiB\n";
    } else if (cert_cmd->parsed()) {
      const PipelineConfig cfg = cert_opts.load();
      const CertifyOutcome out = from_artifacts ? certify_artifacts(cfg) : run_certify_pipeline(cfg);
      std::cout << out.report.to_text();
    } else if (sweep_cmd->parsed()) {
      const PipelineConfig cfg = sweep_opts.load();
      fs::create_directories(cfg.out_dir);
      const SweepResult s = run_randomization_sweep(cfg, fractions.empty() ? cfg.sweep.fractions : fractions,
                                                    sparsities.empty() ? cfg.sweep.sparsities : sparsities);
      report_emit(s, ReportFormat::csv, cfg.out_dir / "sweep.csv");
      report_emit(s, ReportFormat::svg, cfg.out_dir / "sweep.svg");
      report_emit(s, ReportFormat::text, cfg.out_dir / "sweep.txt");
      report_emit(s, ReportFormat::json, cfg.out_dir / "sweep.json");
      std::cout << render_report(s, ReportFormat::text);
    } else if (ent_cmd->parsed()) {
      const OverfitStats s = overfit_stats(train_err, test_err, n);
      const double gap = entropy_gap(s);
      std::cout << "p_n " << s.p_n << "\nq_n " << s.q_n << "\nl_n " << s.l_n << "\ngap " << gap
                << " nats/example\nentropy lower bound " << entropy_lower_bound(s) << " nats ("
                << entropy_lower_bound(s) / std::numbers::ln2 << " bits)\n";
      if (s.convention_applied) std::cout << "note: a 0/0 or x/0 boundary convention was applied\n";
    } else if (report_cmd->parsed()) {
      const ReportFormat f = parse_report_format(format);
      const std::string text = slurp(input);
      std::string rendered;
      if (fs::path(input).extension() == ".csv")
        rendered = render_report(sweep_from_csv(text), f);
      else
        rendered = render_report(bound_report_from_json(nlohmann::json::parse(text)), f);
      if (output.empty()) {
        std::cout << rendered;
      } else {
        std::ofstream o(output, std::ios::binary | std::ios::trunc);
        if (!o || !(o << rendered)) throw Error("cannot write " + output);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return kStageExit;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageExit;
  }
  return 0;
}
