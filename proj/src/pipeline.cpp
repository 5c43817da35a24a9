#include "occam/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "occam/errors.hpp"
#include "occam/inference.hpp"
#include "occam/network.hpp"
#include "occam/rng.hpp"
#include "occam/triplet_codec.hpp"

namespace occam {

namespace {

namespace fs = std::filesystem;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc{} || ptr != t.data() + t.size() || !std::isfinite(x))
    throw ConfigError(key + ": not a number: '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  long long x = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc{} || ptr != t.data() + t.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
  if (ec != std::errc{} || ptr != t.data() + t.size()) throw ConfigError(key + ": not an unsigned integer: '" + v + "'");
  return x;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": not a boolean: '" + v + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) out.push_back(to_double(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ec == std::errc{} ? ptr : buf);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    if constexpr (std::is_floating_point_v<T>)
      os << fmt(v[i]);
    else
      os << v[i];
  }
  return os.str();
}

std::string granularity_name(RangeGranularity g) {
  return g == RangeGranularity::per_filter ? "per_filter" : "per_layer";
}

std::string method_name(MixtureMethod m) { return m == MixtureMethod::split ? "split" : "gauss_hermite"; }

// Values that only become concrete once the architecture is known.
struct Pending {
  std::optional<std::vector<double>> sparsity;
  std::optional<long> prune_steps;
  std::optional<double> prune_lr;
  std::optional<long> quantize_steps;
  std::optional<double> quantize_lr;
};

void finalize(PipelineConfig& cfg, const Pending& pending) {
  const ArchSpec arch = [&] {
    try {
      return named_arch(cfg.arch);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.arch: ") + e.what());
    }
  }();
  const std::size_t layers = arch.weight_shapes().size();
  std::vector<double> sparsity = pending.sparsity.value_or(std::vector<double>{0.0});
  if (sparsity.size() == 1) sparsity.assign(layers, sparsity.front());
  cfg.prune.target_sparsity = sparsity;
  if (cfg.quantize.bits.empty()) cfg.quantize.bits = {4};

  cfg.prune.fine_tune = cfg.train;
  cfg.prune.fine_tune.steps = pending.prune_steps.value_or(cfg.train.steps);
  cfg.prune.fine_tune.learning_rate = pending.prune_lr.value_or(cfg.train.learning_rate);
  cfg.quantize.fine_tune = cfg.train;
  cfg.quantize.fine_tune.steps = pending.quantize_steps.value_or(0);
  cfg.quantize.fine_tune.learning_rate = pending.quantize_lr.value_or(cfg.train.learning_rate);
  set_master_seed(cfg, cfg.seed);
}

std::map<std::string, std::string> echo(const PipelineConfig& c) {
  std::map<std::string, std::string> e;
  e["data.source"] = c.data.source;
  if (c.data.source == "mnist") {
    e["data.dir"] = c.data.dir.string();
  } else {
    e["data.n"] = std::to_string(c.data.synthetic_n);
    e["data.test_n"] = std::to_string(c.data.synthetic_test_n);
    e["data.classes"] = std::to_string(c.data.synthetic_classes);
    e["data.dim"] = std::to_string(c.data.synthetic_dim);
    e["data.separation"] = fmt(c.data.synthetic_separation);
    e["data.spread"] = fmt(c.data.synthetic_spread);
  }
  e["data.train_limit"] = std::to_string(c.data.train_limit);
  e["data.test_limit"] = std::to_string(c.data.test_limit);
  e["model.arch"] = c.arch;
  e["train.steps"] = std::to_string(c.train.steps);
  e["train.batch_size"] = std::to_string(c.train.batch_size);
  e["train.learning_rate"] = fmt(c.train.learning_rate);
  e["train.decay_rate"] = fmt(c.train.decay_rate);
  e["train.decay_steps"] = std::to_string(c.train.decay_steps);
  e["train.momentum"] = fmt(c.train.momentum);
  e["train.l2"] = fmt(c.train.l2);
  e["prune.sparsity"] = join(c.prune.target_sparsity);
  std::ostringstream sched;
  for (std::size_t i = 0; i < c.prune.schedule.size(); ++i)
    sched << (i ? "," : "") << c.prune.schedule[i].step << ":" << fmt(c.prune.schedule[i].fraction);
  e["prune.schedule"] = sched.str();
  e["prune.splicing"] = c.prune.splicing ? "true" : "false";
  e["prune.steps"] = std::to_string(c.prune.fine_tune.steps);
  e["prune.learning_rate"] = fmt(c.prune.fine_tune.learning_rate);
  e["quantize.bits"] = join(c.quantize.bits);
  e["quantize.kmeans_iters"] = std::to_string(c.quantize.kmeans_iters);
  e["quantize.steps"] = std::to_string(c.quantize.fine_tune.steps);
  e["quantize.learning_rate"] = fmt(c.quantize.fine_tune.learning_rate);
  e["noise.fraction"] = fmt(c.noise.fraction);
  e["noise.granularity"] = granularity_name(c.noise.granularity);
  e["prior.tau_points"] = std::to_string(c.prior.tau_points);
  e["prior.tau_lo"] = fmt(c.prior.tau_lo);
  e["prior.tau_hi"] = fmt(c.prior.tau_hi);
  e["prior.method"] = method_name(c.prior.method);
  e["prior.quad_order"] = std::to_string(c.prior.quad_order);
  e["bound.epsilon"] = fmt(c.bound.catoni.epsilon);
  e["bound.epsilon_mc"] = fmt(c.bound.epsilon_mc);
  e["bound.alpha"] = fmt(c.bound.catoni.alpha);
  e["bound.draws"] = std::to_string(c.draws);
  e["bound.dense_grid"] = c.bound.catoni.dense_grid ? "true" : "false";
  e["run.seed"] = std::to_string(c.seed);
  e["run.threads"] = std::to_string(c.threads);
  e["run.out"] = c.out_dir.string();
  e["sweep.fractions"] = join(c.sweep.fractions);
  e["sweep.sparsities"] = join(c.sweep.sparsities);
  e["sweep.fit_accuracy"] = fmt(c.sweep.fit_accuracy);
  e["sweep.check_every"] = std::to_string(c.sweep.check_every);
  return e;
}

fs::path default_data_dir() {
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  return "data/mnist";
}

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

double total_parameters(const Model& m) {
  std::size_t n = 0;
  for (const auto& t : m.layers) n += t.size();
  return static_cast<double>(n);
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t master, SeedStage s) {
  return derive_seed(master, static_cast<std::uint64_t>(s));
}

void set_master_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.train.seed = stage_seed(seed, SeedStage::train);
  cfg.prune.fine_tune.seed = stage_seed(seed, SeedStage::prune);
  cfg.quantize.fine_tune.seed = stage_seed(seed, SeedStage::quantize);
  cfg.quantize.seed = stage_seed(seed, SeedStage::quantize);
  cfg.entries = echo(cfg);
}

PipelineConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig c;
  c.data.dir = default_data_dir();
  Pending pending;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"data.source",
       [&](auto& k, auto& v) {
         c.data.source = trim(v);
         if (c.data.source != "mnist" && c.data.source != "synthetic")
           throw ConfigError(k + ": expected mnist or synthetic");
       }},
      {"data.dir", [&](auto&, auto& v) { c.data.dir = trim(v); }},
      {"data.train_limit", [&](auto& k, auto& v) { c.data.train_limit = to_size(k, v); }},
      {"data.test_limit", [&](auto& k, auto& v) { c.data.test_limit = to_size(k, v); }},
      {"data.n", [&](auto& k, auto& v) { c.data.synthetic_n = to_size(k, v); }},
      {"data.test_n", [&](auto& k, auto& v) { c.data.synthetic_test_n = to_size(k, v); }},
      {"data.classes", [&](auto& k, auto& v) { c.data.synthetic_classes = static_cast<int>(to_int(k, v)); }},
      {"data.dim", [&](auto& k, auto& v) { c.data.synthetic_dim = static_cast<int>(to_int(k, v)); }},
      {"data.separation", [&](auto& k, auto& v) { c.data.synthetic_separation = to_double(k, v); }},
      {"data.spread", [&](auto& k, auto& v) { c.data.synthetic_spread = to_double(k, v); }},
      {"model.arch", [&](auto&, auto& v) { c.arch = trim(v); }},
      {"train.steps", [&](auto& k, auto& v) { c.train.steps = to_int(k, v); }},
      {"train.batch_size", [&](auto& k, auto& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
      {"train.learning_rate", [&](auto& k, auto& v) { c.train.learning_rate = to_double(k, v); }},
      {"train.decay_rate", [&](auto& k, auto& v) { c.train.decay_rate = to_double(k, v); }},
      {"train.decay_steps", [&](auto& k, auto& v) { c.train.decay_steps = to_int(k, v); }},
      {"train.momentum", [&](auto& k, auto& v) { c.train.momentum = to_double(k, v); }},
      {"train.l2", [&](auto& k, auto& v) { c.train.l2 = to_double(k, v); }},
      {"prune.sparsity", [&](auto& k, auto& v) { pending.sparsity = to_doubles(k, v); }},
      {"prune.schedule",
       [&](auto& k, auto& v) {
         c.prune.schedule.clear();
         for (const auto& item : split(v, ',')) {
           const auto parts = split(item, ':');
           if (parts.size() != 2) throw ConfigError(k + ": expected step:fraction pairs");
           c.prune.schedule.push_back({to_int(k, parts[0]), to_double(k, parts[1])});
         }
       }},
      {"prune.splicing", [&](auto& k, auto& v) { c.prune.splicing = to_bool(k, v); }},
      {"prune.steps", [&](auto& k, auto& v) { pending.prune_steps = to_int(k, v); }},
      {"prune.learning_rate", [&](auto& k, auto& v) { pending.prune_lr = to_double(k, v); }},
      {"quantize.bits",
       [&](auto& k, auto& v) {
         c.quantize.bits.clear();
         for (const auto& item : split(v, ',')) c.quantize.bits.push_back(static_cast<int>(to_int(k, item)));
       }},
      {"quantize.kmeans_iters", [&](auto& k, auto& v) { c.quantize.kmeans_iters = static_cast<int>(to_int(k, v)); }},
      {"quantize.steps", [&](auto& k, auto& v) { pending.quantize_steps = to_int(k, v); }},
      {"quantize.learning_rate", [&](auto& k, auto& v) { pending.quantize_lr = to_double(k, v); }},
      {"noise.fraction", [&](auto& k, auto& v) { c.noise.fraction = to_double(k, v); }},
      {"noise.granularity",
       [&](auto& k, auto& v) {
         const std::string t = trim(v);
         if (t == "per_filter")
           c.noise.granularity = RangeGranularity::per_filter;
         else if (t == "per_layer")
           c.noise.granularity = RangeGranularity::per_layer;
         else
           throw ConfigError(k + ": expected per_filter or per_layer");
       }},
      {"prior.tau_points", [&](auto& k, auto& v) { c.prior.tau_points = static_cast<int>(to_int(k, v)); }},
      {"prior.tau_lo", [&](auto& k, auto& v) { c.prior.tau_lo = to_double(k, v); }},
      {"prior.tau_hi", [&](auto& k, auto& v) { c.prior.tau_hi = to_double(k, v); }},
      {"prior.method",
       [&](auto& k, auto& v) {
         const std::string t = trim(v);
         if (t == "split")
           c.prior.method = MixtureMethod::split;
         else if (t == "gauss_hermite")
           c.prior.method = MixtureMethod::gauss_hermite;
         else
           throw ConfigError(k + ": expected split or gauss_hermite");
       }},
      {"prior.quad_order", [&](auto& k, auto& v) { c.prior.quad_order = static_cast<int>(to_int(k, v)); }},
      {"bound.epsilon", [&](auto& k, auto& v) { c.bound.catoni.epsilon = to_double(k, v); }},
      {"bound.epsilon_mc", [&](auto& k, auto& v) { c.bound.epsilon_mc = to_double(k, v); }},
      {"bound.alpha", [&](auto& k, auto& v) { c.bound.catoni.alpha = to_double(k, v); }},
      {"bound.draws", [&](auto& k, auto& v) { c.draws = to_size(k, v); }},
      {"bound.dense_grid", [&](auto& k, auto& v) { c.bound.catoni.dense_grid = to_bool(k, v); }},
      {"run.seed", [&](auto& k, auto& v) { c.seed = to_u64(k, v); }},
      {"run.threads", [&](auto& k, auto& v) { c.threads = static_cast<int>(to_int(k, v)); }},
      {"run.out", [&](auto&, auto& v) { c.out_dir = trim(v); }},
      {"sweep.fractions", [&](auto& k, auto& v) { c.sweep.fractions = to_doubles(k, v); }},
      {"sweep.sparsities", [&](auto& k, auto& v) { c.sweep.sparsities = to_doubles(k, v); }},
      {"sweep.fit_accuracy", [&](auto& k, auto& v) { c.sweep.fit_accuracy = to_double(k, v); }},
      {"sweep.check_every", [&](auto& k, auto& v) { c.sweep.check_every = to_int(k, v); }},
  };
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = setters.find(full);
      if (it == setters.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second(full, value.data());
    }
  }
  finalize(c, pending);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void PipelineConfig::validate() const {
  const ArchSpec a = [&] {
    try {
      return named_arch(arch);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.arch: ") + e.what());
    }
  }();
  const std::size_t layers = a.weight_shapes().size();
  try {
    train.validate();
    prune.validate(layers);
    quantize.validate(layers);
    CatoniParams probe = bound.catoni;
    probe.n = 1000.0;
    probe.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (data.source == "mnist") {
    for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                          "t10k-labels-idx1-ubyte"})
      if (!fs::exists(data.dir / f)) throw ConfigError("data.dir: missing " + (data.dir / f).string());
    if (a.input != Shape3{1, 28, 28}) throw ConfigError("model.arch: " + arch + " does not take 28x28 inputs");
  } else {
    if (data.synthetic_n == 0 || data.synthetic_classes < 2 || data.synthetic_dim < 2)
      throw ConfigError("data: synthetic data needs n > 0, classes >= 2, dim >= 2");
    if (a.input != Shape3{data.synthetic_dim, 1, 1} || a.classes != data.synthetic_classes)
      throw ConfigError("model.arch: " + arch + " does not match the synthetic data shape");
  }
  if (!(noise.fraction >= 0.0 && noise.fraction <= 1.0)) throw ConfigError("noise.fraction must lie in [0, 1]");
  if (prior.tau_points < 1 || !(prior.tau_lo > 0.0) || !(prior.tau_hi >= prior.tau_lo))
    throw ConfigError("prior: need tau_points >= 1 and 0 < tau_lo <= tau_hi");
  if (prior.quad_order < 2) throw ConfigError("prior.quad_order must be >= 2");
  if (!(bound.epsilon_mc > 0.0 && bound.epsilon_mc < 1.0 && bound.catoni.epsilon + bound.epsilon_mc < 1.0))
    throw ConfigError("bound: epsilon_mc must lie in (0, 1) with epsilon + epsilon_mc < 1");
  if (draws == 0) throw ConfigError("bound.draws must be >= 1");
  if (threads < 0) throw ConfigError("run.threads must be >= 0");
  for (double f : sweep.fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("sweep.fractions must lie in [0, 1]");
  for (double s : sweep.sparsities)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sweep.sparsities must lie in [0, 1)");
  if (!(sweep.fit_accuracy > 0.0 && sweep.fit_accuracy <= 1.0)) throw ConfigError("sweep.fit_accuracy must lie in (0, 1]");
  if (sweep.check_every < 1) throw ConfigError("sweep.check_every must be >= 1");
}

Dataset load_train_data(const PipelineConfig& cfg) {
  if (cfg.data.source == "synthetic") {
    Dataset d = make_blobs(cfg.data.synthetic_n, cfg.data.synthetic_classes, cfg.data.synthetic_dim,
                           cfg.data.synthetic_separation, cfg.data.synthetic_spread,
                           derive_seed(stage_seed(cfg.seed, SeedStage::data), 0));
    return cfg.data.train_limit ? d.head(std::min(cfg.data.train_limit, d.size())) : d;
  }
  return load_mnist(cfg.data.dir, true,
                    cfg.data.train_limit ? std::optional<std::size_t>(cfg.data.train_limit) : std::nullopt);
}

Dataset load_test_data(const PipelineConfig& cfg) {
  if (cfg.data.source == "synthetic") {
    Dataset d = make_blobs(cfg.data.synthetic_test_n, cfg.data.synthetic_classes, cfg.data.synthetic_dim,
                           cfg.data.synthetic_separation, cfg.data.synthetic_spread,
                           derive_seed(stage_seed(cfg.seed, SeedStage::data), 1));
    return cfg.data.test_limit ? d.head(std::min(cfg.data.test_limit, d.size())) : d;
  }
  return load_mnist(cfg.data.dir, false,
                    cfg.data.test_limit ? std::optional<std::size_t>(cfg.data.test_limit) : std::nullopt);
}

ArtifactPaths::ArtifactPaths(const fs::path& dir)
    : trained(dir / "trained.mdl1"),
      pruned(dir / "pruned.mdl1"),
      quantized(dir / "quantized.mdl1"),
      triplet(dir / "model.cmp1"),
      report_json(dir / "report.json"),
      report_text(dir / "report.txt") {}

Model run_train_stage(const PipelineConfig& cfg, const Dataset& train_data) {
  return train(named_arch(cfg.arch), train_data, cfg.train);
}

PruneResult run_prune_stage(const PipelineConfig& cfg, const Model& trained, const Dataset& train_data) {
  return prune(trained, train_data, cfg.prune);
}

QuantizeResult run_quantize_stage(const PipelineConfig& cfg, const Model& pruned, const LayerMasks& masks,
                                  const Dataset& train_data) {
  return quantize(pruned, masks, cfg.quantize, train_data);
}

BoundReport run_certify_stage(const PipelineConfig& cfg, const CompressedTriplet& triplet, const Model& quantized,
                              const Dataset& train_data) {
  const StochasticPosterior post = make_posterior(triplet, quantized, cfg.noise.fraction, cfg.noise.granularity);
  const ErrorEstimate est = evaluate_stochastic(post, train_data, cfg.draws,
                                                stage_seed(cfg.seed, SeedStage::monte_carlo), cfg.threads);
  PriorSpec prior;
  prior.tau_grid = init_scaled_tau_grid(quantized.arch, cfg.prior.tau_points, cfg.prior.tau_lo, cfg.prior.tau_hi);
  prior.method = cfg.prior.method;
  prior.quad_order = cfg.prior.quad_order;
  for (std::size_t i = 0; i < triplet.layers.size(); ++i)
    prior.tau.push_back(choose_tau(triplet.layers[i], post.noise[i], prior.tau_grid[i], prior.method,
                                   prior.quad_order));
  CertifyParams params = cfg.bound;
  params.catoni.n = static_cast<double>(train_data.size());
  BoundReport r = certify(triplet, coded_sizes(triplet), post.noise, prior, est, params);
  r.original_bits = 32.0 * total_parameters(quantized);
  std::ostringstream note;
  note << "posterior sigma = " << fmt(cfg.noise.fraction) << " x " << granularity_name(cfg.noise.granularity)
       << " weight range; biases are not bounded";
  r.notes.push_back(note.str());
  return r;
}

namespace {

nlohmann::json stage_metrics(const Model& m, const Dataset& train_data, const Dataset& test_data, int threads) {
  const LayerMasks pattern = nonzero_pattern(m);
  return {{"train_error", evaluate_01(m, train_data, threads).point_estimate},
          {"test_error", evaluate_01(m, test_data, threads).point_estimate},
          {"density", pattern_density(pattern)}};
}

CertifyOutcome finish_report(const PipelineConfig& cfg, BoundReport report, nlohmann::json metrics) {
  const ArtifactPaths paths(cfg.out_dir);
  CertifyOutcome out;
  out.report_json = report.to_json();
  out.report_json["config"] = cfg.entries;
  out.report_json["pipeline"] = std::move(metrics);
  out.report = std::move(report);
  const std::string json_text = out.report_json.dump(2) + "\n";
  write_file(paths.report_json, std::span(reinterpret_cast<const std::uint8_t*>(json_text.data()), json_text.size()));
  report_emit(out.report, ReportFormat::text, paths.report_text);
  return out;
}

}  // namespace

CertifyOutcome run_certify_pipeline(const PipelineConfig& cfg) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const ArtifactPaths paths(cfg.out_dir);
  stage("output", [&] {
    fs::create_directories(cfg.out_dir);
    return 0;
  });
  const Dataset train_data = stage("data", [&] { return load_train_data(cfg); });
  const Dataset test_data = stage("data", [&] { return load_test_data(cfg); });
  nlohmann::json metrics;
  const Model trained = stage("train", [&] {
    Model m = run_train_stage(cfg, train_data);
    save_model(m, paths.trained);
    return m;
  });
  metrics["trained"] = stage("train", [&] { return stage_metrics(trained, train_data, test_data, cfg.threads); });
  const PruneResult pruned = stage("prune", [&] {
    PruneResult r = run_prune_stage(cfg, trained, train_data);
    save_model(r.model, paths.pruned);
    return r;
  });
  metrics["pruned"] = stage("prune", [&] { return stage_metrics(pruned.model, train_data, test_data, cfg.threads); });
  metrics["pruned"]["warnings"] = pruned.warnings;
  const QuantizeResult quantized = stage("quantize", [&] {
    QuantizeResult r = run_quantize_stage(cfg, pruned.model, pruned.masks, train_data);
    save_model(r.model, paths.quantized);
    return r;
  });
  metrics["quantized"] =
      stage("quantize", [&] { return stage_metrics(quantized.model, train_data, test_data, cfg.threads); });
  stage("encode", [&] {
    save_triplet(quantized.triplet, paths.triplet);
    // The certified object is what the file decodes to.
    if (load_triplet(paths.triplet) != quantized.triplet) throw DecodeError("CMP1 round trip mismatch");
    return 0;
  });
  BoundReport report =
      stage("certify", [&] { return run_certify_stage(cfg, quantized.triplet, quantized.model, train_data); });
  return stage("report", [&] { return finish_report(cfg, std::move(report), std::move(metrics)); });
}

CertifyOutcome certify_artifacts(const PipelineConfig& cfg) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const ArtifactPaths paths(cfg.out_dir);
  const Dataset train_data = stage("data", [&] { return load_train_data(cfg); });
  const CompressedTriplet triplet = stage("load", [&] { return load_triplet(paths.triplet); });
  const Model quantized = stage("load", [&] { return load_model(paths.quantized, named_arch(cfg.arch)); });
  stage("load", [&] {
    Model decoded = decode_weights(triplet, quantized.arch);
    copy_biases(decoded, quantized);
    if (!bit_equal(decoded, quantized))
      throw InvalidInput(paths.quantized.string() + " does not match " + paths.triplet.string());
    return 0;
  });
  BoundReport report = stage("certify", [&] { return run_certify_stage(cfg, triplet, quantized, train_data); });
  nlohmann::json metrics;
  metrics["quantized"] = {{"train_error", evaluate_01(quantized, train_data, cfg.threads).point_estimate}};
  return stage("report", [&] { return finish_report(cfg, std::move(report), std::move(metrics)); });
}

SweepResult run_randomization_sweep(const PipelineConfig& cfg, const std::vector<double>& fractions,
                                    const std::vector<double>& sparsities) {
  for (double f : fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("sweep: fractions must lie in [0, 1]");
  for (double s : sparsities)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sweep: sparsities must lie in [0, 1)");
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const Dataset clean = stage("data", [&] { return load_train_data(cfg); });
  const ArchSpec arch = named_arch(cfg.arch);
  const std::size_t layers = arch.weight_shapes().size();
  SweepResult result;
  result.config = cfg.entries;
  using Clock = std::chrono::steady_clock;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double fraction = fractions[fi];
    const std::uint64_t cell_seed = derive_seed(cfg.seed, 1000 + fi);
    const auto t0 = Clock::now();
    Dataset data;
    Model fitted;
    long steps_used = 0;
    bool fitted_ok = false;
    double unpruned = 0.0;
    std::string failure;
    try {
      data = randomize_labels(clean, fraction, derive_seed(stage_seed(cfg.seed, SeedStage::labels), fi));
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cell_seed, static_cast<std::uint64_t>(SeedStage::train));
      Network<float> net(arch);
      steps_used = tc.steps;
      fitted = train_from(init_model(arch, tc.seed), data, tc, nullptr, [&](long step, Params<float>& p) {
        if (step == 0 || step % cfg.sweep.check_every != 0) return true;
        const double acc = 1.0 - static_cast<double>(count_errors(net, p, data, cfg.threads)) /
                                     static_cast<double>(data.size());
        if (acc >= cfg.sweep.fit_accuracy) {
          steps_used = step;
          return false;
        }
        return true;
      });
      unpruned = 1.0 - evaluate_01(fitted, data, cfg.threads).point_estimate;
      fitted_ok = unpruned >= cfg.sweep.fit_accuracy;
    } catch (const std::exception& e) {
      failure = std::string("train: ") + e.what();
    }
    const double fit_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    for (double sparsity : sparsities) {
      SweepCell cell;
      cell.fraction = fraction;
      cell.sparsity = sparsity;
      cell.seed = cell_seed;
      cell.unpruned_accuracy = unpruned;
      cell.train_steps = steps_used;
      cell.fitted = fitted_ok;
      const auto t1 = Clock::now();
      if (!failure.empty()) {
        cell.status = "failed";
        cell.reason = failure;
      } else if (sparsity == 0.0) {
        cell.accuracy = unpruned;
      } else {
        try {
          PruneConfig pc = cfg.prune;
          pc.target_sparsity.assign(layers, sparsity);
          pc.fine_tune.seed = derive_seed(cell_seed, static_cast<std::uint64_t>(SeedStage::prune));
          const PruneResult pr = prune(fitted, data, pc);
          cell.accuracy = 1.0 - evaluate_01(pr.model, data, cfg.threads).point_estimate;
        } catch (const std::exception& e) {
          cell.status = "failed";
          cell.reason = std::string("prune: ") + e.what();
        }
      }
      if (!fitted_ok && cell.status == "ok")
        cell.reason = "training budget exhausted before fitting; unpruned accuracy " + fmt(unpruned);
      cell.runtime_seconds = std::chrono::duration<double>(Clock::now() - t1).count() +
                             (sparsity == sparsities.front() ? fit_seconds : 0.0);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "svg") return ReportFormat::svg;
  if (s == "json") return ReportFormat::json;
  throw ConfigError("unknown report format '" + s + "' (text, csv, svg, json)");
}

std::string render_report(const BoundReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::text:
      return r.to_text();
    case ReportFormat::json:
      return r.to_json().dump(2) + "\n";
    case ReportFormat::csv: {
      std::ostringstream os;
      os << "layer,k,r,support_bits,codebook_bits,assignment_bits,tau,gain_bits\n";
      for (std::size_t i = 0; i < r.sizes.layers.size(); ++i) {
        const LayerSizes& s = r.sizes.layers[i];
        os << s.name << "," << s.k << "," << s.r << "," << s.support_bits << "," << s.codebook_bits << ","
           << s.assignment_bits << "," << (i < r.tau.size() ? fmt(r.tau[i]) : "") << ","
           << (i < r.kl.layers.size() ? fmt(r.kl.layers[i].gain_nats / std::numbers::ln2) : "") << "\n";
      }
      os << "total,," << "," << r.sizes.support_bits() << "," << r.sizes.codebook_bits() << ","
         << r.sizes.assignment_bits() << ",," << fmt(r.kl.gain_bits()) << "\n";
      return os.str();
    }
    case ReportFormat::svg:
      throw InvalidInput("svg output is only available for sweeps");
  }
  throw InvalidInput("unknown report format");
}

namespace {

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream os;
  os << "fraction,sparsity,seed,unpruned_accuracy,accuracy,train_steps,fitted,runtime_seconds,status,reason\n";
  for (const auto& c : s.cells) {
    std::string reason = c.reason;
    std::replace(reason.begin(), reason.end(), ',', ';');
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    os << fmt(c.fraction) << "," << fmt(c.sparsity) << "," << c.seed << "," << fmt(c.unpruned_accuracy) << ","
       << fmt(c.accuracy) << "," << c.train_steps << "," << (c.fitted ? 1 : 0) << "," << std::fixed
       << std::setprecision(3) << c.runtime_seconds << std::defaultfloat << "," << c.status << "," << reason
       << "\n";
  }
  return os.str();
}

std::string sweep_text(const SweepResult& s) {
  std::ostringstream os;
  os << "fraction  sparsity  unpruned acc  acc      status\n";
  for (const auto& c : s.cells)
    os << std::fixed << std::setprecision(2) << std::setw(8) << c.fraction << "  " << std::setw(8) << c.sparsity
       << "  " << std::setprecision(4) << std::setw(12) << c.unpruned_accuracy << "  " << std::setw(7) << c.accuracy
       << "  " << c.status << (c.reason.empty() ? "" : " (" + c.reason + ")") << "\n";
  return os.str();
}

std::string sweep_svg(const SweepResult& s) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 30, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  std::vector<double> fractions;
  for (const auto& c : s.cells)
    if (std::find(fractions.begin(), fractions.end(), c.fraction) == fractions.end()) fractions.push_back(c.fraction);
  double xmax = 0.0;
  for (const auto& c : s.cells) xmax = std::max(xmax, c.sparsity);
  if (xmax <= 0.0) xmax = 1.0;
  auto px = [&](double x) { return L + pw * x / xmax; };
  auto py = [&](double y) { return T + ph * (1.0 - y); };
  static constexpr const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    const double x = xmax * i / 5.0;
    os << "<text x=\"" << L - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << std::setprecision(1) << y
       << "</text>\n";
    os << "<text x=\"" << px(x) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << std::setprecision(2)
       << x << "</text>\n" << std::setprecision(1);
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">sparsity</text>\n";
  os << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">training "
        "accuracy</text>\n";
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const char* color = colors[k % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& c : s.cells) {
      if (c.fraction != fractions[k] || c.status != "ok") continue;
      os << (first ? "" : " ") << px(c.sparsity) << "," << py(c.accuracy);
      first = false;
    }
    os << "\"/>\n";
    for (const auto& c : s.cells)
      if (c.fraction == fractions[k] && c.status == "ok")
        os << "<circle cx=\"" << px(c.sparsity) << "\" cy=\"" << py(c.accuracy) << "\" r=\"3\" fill=\"" << color
           << "\"/>\n";
    const double ly = T + 10 + 20.0 * static_cast<double>(k);
    os << "<line x1=\"" << L + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 35 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << L + pw + 40 << "\" y=\"" << ly + 4 << "\">" << std::setprecision(0)
       << 100.0 * fractions[k] << "% random</text>\n" << std::setprecision(1);
  }
  os << "</svg>\n";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

std::string render_report(const SweepResult& s, ReportFormat format) {
  if (s.cells.empty()) throw InvalidInput("empty sweep: nothing to report");
  switch (format) {
    case ReportFormat::text:
      return sweep_text(s);
    case ReportFormat::csv:
      return sweep_csv(s);
    case ReportFormat::svg:
      return sweep_svg(s);
    case ReportFormat::json: {
      nlohmann::json cells = nlohmann::json::array();
      for (const auto& c : s.cells)
        cells.push_back({{"fraction", c.fraction},
                         {"sparsity", c.sparsity},
                         {"seed", c.seed},
                         {"unpruned_accuracy", c.unpruned_accuracy},
                         {"accuracy", c.accuracy},
                         {"train_steps", c.train_steps},
                         {"fitted", c.fitted},
                         {"runtime_seconds", c.runtime_seconds},
                         {"status", c.status},
                         {"reason", c.reason}});
      return nlohmann::json{{"config", s.config}, {"cells", cells}}.dump(2) + "\n";
    }
  }
  throw InvalidInput("unknown report format");
}

void report_emit(const BoundReport& report, ReportFormat format, const fs::path& path) {
  write_text(path, render_report(report, format));
}

void report_emit(const SweepResult& sweep, ReportFormat format, const fs::path& path) {
  write_text(path, render_report(sweep, format));
}

BoundReport bound_report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "occam.bound-report/1") throw InvalidInput("not an occam.bound-report/1 document");
    BoundReport r;
    const auto& in = j.at("inputs");
    r.params.catoni.n = in.at("n");
    r.params.catoni.epsilon = in.at("epsilon_pac_bayes");
    r.params.epsilon_mc = in.at("epsilon_monte_carlo");
    r.params.catoni.alpha = in.at("alpha");
    r.params.catoni.lambda_lo = in.at("lambda_range").at(0);
    r.params.catoni.lambda_hi = in.at("lambda_range").at(1);
    r.mc_seed = in.at("mc_seed");
    r.per_draw_errors = in.at("per_draw_errors").get<std::vector<double>>();
    r.grid_cardinality = in.at("grid_cardinality");
    for (const auto& l : in.at("layers")) {
      LayerSizes s;
      s.name = l.at("name");
      s.k = l.at("k");
      s.r = l.at("r");
      s.support_bits = l.at("support_bits");
      s.codebook_bits = l.at("codebook_bits");
      s.assignment_bits = l.at("assignment_bits");
      r.sizes.layers.push_back(s);
      if (l.contains("sigma")) r.sigma.push_back(l.at("sigma").get<std::vector<double>>());
      if (l.contains("tau")) r.tau.push_back(l.at("tau"));
      if (l.contains("gain_nats")) r.kl.layers.push_back({s.name, l.value("tau", 0.0), l.at("gain_nats")});
    }
    r.original_bits = j.at("sizes").at("original_bits");
    const auto& kl = j.at("kl");
    r.kl.code_bits = static_cast<std::uint64_t>(kl.at("code").at("bits").get<double>());
    r.kl.code_nats = kl.at("code").at("nats");
    r.kl.length_nats = kl.at("length_prior").at("nats");
    r.kl.union_nats = kl.at("union").at("nats");
    r.kl.gain_nats = kl.at("gain_back").at("nats");
    r.kl.total_nats = kl.at("total").at("nats");
    r.empirical_error = j.at("empirical_error");
    r.train_loss_upper = j.at("train_loss_upper");
    r.lambda_star = j.at("lambda_star");
    r.bound = j.at("bound");
    r.notes = j.at("notes").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("bound report: ") + e.what());
  }
}

SweepResult sweep_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("fraction,sparsity,", 0) != 0)
    throw InvalidInput("sweep csv: missing header");
  SweepResult s;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::string item;
    std::istringstream ls(line);
    while (std::getline(ls, item, ',')) f.push_back(item);
    if (f.size() == 9) f.emplace_back();
    if (f.size() != 10) throw InvalidInput("sweep csv: expected 10 fields in '" + line + "'");
    try {
      SweepCell c;
      c.fraction = to_double("fraction", f[0]);
      c.sparsity = to_double("sparsity", f[1]);
      c.seed = to_u64("seed", f[2]);
      c.unpruned_accuracy = to_double("unpruned_accuracy", f[3]);
      c.accuracy = to_double("accuracy", f[4]);
      c.train_steps = to_int("train_steps", f[5]);
      c.fitted = to_bool("fitted", f[6]);
      c.runtime_seconds = to_double("runtime_seconds", f[7]);
      c.status = f[8];
      c.reason = f[9];
      s.cells.push_back(std::move(c));
    } catch (const ConfigError& e) {
      throw InvalidInput(std::string("sweep csv: ") + e.what());
    }
  }
  return s;
}

}  // namespace occam
