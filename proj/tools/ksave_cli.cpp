// ksave: simulation, estimation and rate-sweep front end.
//
// Exit status: 0 success, 1 validation or usage failure, 2 I/O failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "ksave/ksave.hpp"

namespace {

using namespace ksave;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool oracle_whitening = false;
  std::string output;
  std::string input;
  double c1 = 0.35;
  double c2 = 0.05;
  int k = 3;
  int L = 2;
  double theta = 20.0;
};

struct Flags {
  CLI::Option* c1 = nullptr;
  CLI::Option* c2 = nullptr;
  CLI::Option* k = nullptr;
  CLI::Option* L = nullptr;
  CLI::Option* theta = nullptr;
  CLI::Option* threads = nullptr;
};

int effective_threads(const Common& c) {
  if (const char* env = std::getenv("SAVE_THREADS"); env && *env) {
    try {
      const int v = std::stoi(env);
      if (v < 0) throw std::invalid_argument("negative");
      return v;
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("SAVE_THREADS must be a nonnegative integer, got '") + env + "'");
    }
  }
  if (c.threads < 0) throw InvalidArgument("--threads must be >= 0");
  return c.threads;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    io::write_text(path, text);
  }
}

std::optional<Json> load_config_json(const Common& c) {
  if (c.config_path.empty()) return std::nullopt;
  return io::read_json(c.config_path);
}

BandwidthSchedule schedule_from(const Common& c, const Flags& f, const std::optional<Json>& cfg) {
  BandwidthSchedule s;
  if (cfg && cfg->contains("schedule")) s = io::schedule_from_json(cfg->at("schedule"));
  if (f.c1->count()) s.c1 = c.c1;
  if (f.c2->count()) s.c2 = c.c2;
  if (f.k->count()) s.k = c.k;
  return s;
}

KernelSpec kernel_from(const std::optional<Json>& cfg, int k) {
  if (cfg && cfg->contains("kernel")) return io::kernel_from_json(cfg->at("kernel"));
  return build_order_k_kernel(k);
}

int cmd_simulate(const Common& c, const std::string& shape_text) {
  const auto cfg = load_config_json(c);
  const ModelSpec model = cfg && cfg->contains("model") ? io::model_from_json(cfg->at("model")) : make_model({});
  LatticeShape shape = square_lattice(32, model.L());
  if (!shape_text.empty()) shape = io::parse_shape(shape_text);
  else if (cfg && cfg->contains("shapes") && !cfg->at("shapes").empty()) shape = io::shape_from_json(cfg->at("shapes")[0]);
  std::uint64_t seed = 1;
  if (c.seed) seed = *c.seed;
  else if (cfg && cfg->contains("seeds") && cfg->at("seeds").is_array() && !cfg->at("seeds").empty())
    seed = cfg->at("seeds")[0].get<std::uint64_t>();
  const FieldDataset ds = simulate_field(model, shape, seed);
  emit(io::dataset_csv(ds), c.output);
  return 0;
}

int cmd_estimate(const Common& c, const Flags& f, int n_dirs_flag) {
  if (c.input.empty()) throw InvalidArgument("estimate needs --input DATASET.csv");
  const auto cfg = load_config_json(c);
  const io::CsvDataset data = io::parse_dataset_csv(io::read_text(c.input));
  const BandwidthSchedule schedule = schedule_from(c, f, cfg);
  const KernelSpec kernel = kernel_from(cfg, schedule.k);
  if (kernel.order_k != schedule.k) throw InvalidArgument("kernel order does not match schedule k");

  std::optional<ModelSpec> model;
  if (cfg && cfg->contains("model")) model = io::model_from_json(cfg->at("model"));
  int n_dirs = n_dirs_flag > 0 ? n_dirs_flag : (model ? model->N : 1);

  WhiteningResult w;
  if (c.oracle_whitening) {
    if (!model) throw InvalidArgument("--oracle-whitening needs a --config with the model");
    if (model->d != data.X.cols()) throw InvalidArgument("dataset dimension does not match the model");
    w = oracle_whiten(data.X, model->mean, model->sigma());
  } else {
    w = whiten(data.X);
  }
  SaveOptions opt;
  opt.threads = effective_threads(c);
  opt.keep_sites = false;
  const SaveEstimate est = save_estimate(w.Z_hat, data.Y, kernel, schedule, opt);
  const EdrEstimate edr = edr_directions(est.matrices, w, n_dirs);
  for (const auto& warn : edr.warnings) std::cerr << "warning: " << warn << "\n";

  Json out{{"n_hat", data.Y.size()},
           {"shape", data.shape.dims},
           {"whitening", c.oracle_whitening ? "oracle" : "empirical"},
           {"schedule", io::to_json(schedule)},
           {"b_n", est.b},
           {"e_n", est.e},
           {"kernel", io::to_json(kernel)},
           {"matrices", io::to_json(est.matrices)},
           {"edr", io::to_json(edr)}};
  emit(io::dump(out), c.output);
  return 0;
}

int cmd_sweep(const Common& c) {
  if (c.config_path.empty()) throw InvalidArgument("sweep needs --config");
  ExperimentConfig cfg = config_from_json(io::read_json(c.config_path));
  if (!c.output.empty()) cfg.output_path = c.output;
  if (cfg.output_path.empty()) throw InvalidArgument("sweep needs --output or output_path in the config");
  if (c.oracle_whitening) cfg.oracle_whitening = true;
  cfg.threads = effective_threads(c);
  const SweepResult res = run_sweep_to_file(cfg, cfg.output_path);
  for (const auto& w : res.warnings) std::cerr << w << "\n";
  std::size_t failed = 0;
  for (const auto& r : res.rows) failed += r.status != "ok";
  std::cerr << res.rows.size() << " rows written to " << cfg.output_path;
  if (failed) std::cerr << " (" << failed << " failed)";
  std::cerr << "\n";
  return 0;
}

int cmd_rate(const Common& c, const std::string& metric) {
  if (c.input.empty()) throw InvalidArgument("rate needs --input ROWS.csv");
  const auto rows = parse_rows_csv(io::read_text(c.input));
  emit(io::dump(to_json(fit_rate(rows, metric))), c.output);
  return 0;
}

int cmd_kernel_check(const Common& c, const Flags& f, const std::string& kernel_path, double radius) {
  KernelSpec spec;
  if (!kernel_path.empty()) spec = io::kernel_from_json(io::read_json(kernel_path));
  else if (f.k->count()) spec = build_order_k_kernel(c.k, radius);
  else spec = epanechnikov();
  const MomentReport rep = kernel_moment_check(spec);
  Json out{{"kernel", io::to_json(spec)}, {"report", io::to_json(rep)}};
  emit(io::dump(out), c.output);
  return rep.pass ? 0 : 1;
}

int cmd_validate_schedule(const Common& c, const Flags& f) {
  const auto cfg = load_config_json(c);
  const BandwidthSchedule s = schedule_from(c, f, cfg);
  double theta = cfg ? cfg->value("theta", 20.0) : 20.0;
  if (f.theta->count()) theta = c.theta;
  int L = c.L;
  if (!f.L->count() && cfg && cfg->contains("model")) L = io::model_from_json(cfg->at("model")).L();
  const ScheduleReport rep = validate_schedule(s, L, theta);
  emit(io::dump(io::to_json(rep)), c.output);
  return rep.pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel SAVE on lattice random fields"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  Flags f;
  app.add_option("--config", c.config_path, "Experiment config (JSON)");
  app.add_option("--seed", c.seed, "Simulation seed");
  f.threads = app.add_option("--threads", c.threads, "Worker threads, 0 = hardware concurrency");
  app.add_flag("--oracle-whitening", c.oracle_whitening, "Whiten with the model's exact mean and covariance");
  app.add_option("--output", c.output, "Output path (default stdout)");
  f.c1 = app.add_option("--c1", c.c1, "Bandwidth exponent, b = n^-c1");
  f.c2 = app.add_option("--c2", c.c2, "Truncation exponent, e = n^-c2");
  f.k = app.add_option("--k", c.k, "Kernel order");
  f.L = app.add_option("--L", c.L, "Lattice dimension");
  f.theta = app.add_option("--theta", c.theta, "Mixing decay exponent");

  std::string shape_text;
  auto* simulate = app.add_subcommand("simulate", "Simulate a field and write the dataset CSV");
  simulate->add_option("--shape", shape_text, "Lattice extents, e.g. 32x32");

  int n_dirs = 0;
  auto* estimate = app.add_subcommand("estimate", "Estimate EDR directions from a dataset CSV");
  estimate->add_option("--input", c.input, "Dataset CSV")->required();
  estimate->add_option("--N", n_dirs, "Structural dimension (default: the config model's N, else 1)");

  auto* sweep = app.add_subcommand("sweep", "Run a simulation sweep and write the rows CSV");

  std::string metric = "gamma_err_fro";
  auto* rate = app.add_subcommand("rate", "Fit log median error against log n_hat");
  rate->add_option("--input", c.input, "Rows CSV")->required();
  rate->add_option("--metric", metric, "Column to fit");

  std::string kernel_path;
  double radius = 1.0;
  auto* kcheck = app.add_subcommand("kernel-check", "Certify kernel moments, support and Lipschitz bound");
  kcheck->add_option("--kernel", kernel_path, "Kernel record (JSON); default Epanechnikov unless --k is given");
  kcheck->add_option("--support-radius", radius, "Base support radius for --k");

  auto* vsched = app.add_subcommand("validate-schedule", "Check bandwidth exponents against the rate conditions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (*simulate) return cmd_simulate(c, shape_text);
    if (*estimate) return cmd_estimate(c, f, n_dirs);
    if (*sweep) return cmd_sweep(c);
    if (*rate) return cmd_rate(c, metric);
    if (*kcheck) return cmd_kernel_check(c, f, kernel_path, radius);
    if (*vsched) return cmd_validate_schedule(c, f);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
