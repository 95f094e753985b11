#ifndef KSAVE_EXPERIMENTS_HPP
#define KSAVE_EXPERIMENTS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ksave/edr.hpp"
#include "ksave/error.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/io.hpp"
#include "ksave/kernels.hpp"
#include "ksave/oracle.hpp"
#include "ksave/save_core.hpp"

namespace ksave {

enum class Metric { gamma_error, subspace_distance, supnorm, eigenvalues };

inline std::string_view to_string(Metric m) {
  switch (m) {
  case Metric::gamma_error: return "gamma_error";
  case Metric::subspace_distance: return "subspace_distance";
  case Metric::supnorm: return "supnorm";
  case Metric::eigenvalues: return "eigenvalues";
  }
  return "?";
}

inline Metric parse_metric(std::string_view s) {
  for (Metric m : {Metric::gamma_error, Metric::subspace_distance, Metric::supnorm, Metric::eigenvalues})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown metric '" + std::string(s) + "'");
}

struct SupNormGrid {
  /// Unset bounds default to the 2.5% and 97.5% quantiles of Y under the model.
  std::optional<double> lo;
  std::optional<double> hi;
  int points = 81;
};

struct TruthSettings {
  std::int64_t mc_samples = 1000000;
  std::uint64_t seed = 20240601;
  int slices = 200;
};

struct ExperimentConfig {
  ModelSpec model;
  std::vector<LatticeShape> shapes;
  std::vector<std::uint64_t> seeds;
  BandwidthSchedule schedule;
  KernelSpec kernel;
  std::set<Metric> metrics{Metric::gamma_error, Metric::subspace_distance, Metric::eigenvalues};
  bool oracle_whitening = false;
  TruthSettings truth;
  SupNormGrid grid;
  double theta = 20.0;
  int threads = 1;
  bool record_runtime = false;
  std::string output_path;

  /// Rows come out ordered by (n_hat, seed); shapes must already be strictly increasing.
  void validate() const {
    model.validate();
    if (shapes.empty()) throw InvalidArgument("config needs at least one shape");
    for (const auto& s : shapes) {
      s.validate();
      if (s.L() != model.L()) throw InvalidArgument("shape " + s.label() + " does not match the model's lattice dimension");
    }
    for (std::size_t i = 1; i < shapes.size(); ++i)
      if (!(shapes[i].n_hat() > shapes[i - 1].n_hat())) throw InvalidArgument("shapes must be strictly increasing in n_hat");
    if (seeds.empty()) throw InvalidArgument("config needs at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw InvalidArgument("seeds must be distinct");
    if (kernel.order_k != schedule.k) throw InvalidArgument("kernel order does not match schedule k");
    if (grid.points < 1) throw InvalidArgument("supnorm grid needs at least one point");
    if (threads < 0) throw InvalidArgument("threads must be >= 0");
  }
};

inline ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  ExperimentConfig c;
  if (!j.contains("model")) throw InvalidArgument("config needs a model");
  c.model = io::model_from_json(j.at("model"));
  if (!j.contains("shapes")) throw InvalidArgument("config needs shapes");
  for (const auto& s : j.at("shapes")) c.shapes.push_back(io::shape_from_json(s));
  if (!j.contains("seeds")) throw InvalidArgument("config needs seeds");
  const auto& seeds = j.at("seeds");
  if (seeds.is_object()) {
    const auto first = seeds.value("first", std::uint64_t{1});
    const auto count = seeds.value("count", 0);
    for (int i = 0; i < count; ++i) c.seeds.push_back(first + static_cast<std::uint64_t>(i));
  } else {
    c.seeds = seeds.get<std::vector<std::uint64_t>>();
  }
  if (j.contains("schedule")) c.schedule = io::schedule_from_json(j.at("schedule"));
  c.kernel = j.contains("kernel") ? io::kernel_from_json(j.at("kernel")) : build_order_k_kernel(c.schedule.k);
  if (j.contains("metrics")) {
    c.metrics.clear();
    for (const auto& m : j.at("metrics")) c.metrics.insert(parse_metric(m.get<std::string>()));
  }
  const std::string whitening = j.value("whitening", std::string("empirical"));
  if (whitening != "empirical" && whitening != "oracle") throw InvalidArgument("whitening must be empirical or oracle");
  c.oracle_whitening = whitening == "oracle";
  if (j.contains("truth")) {
    const auto& t = j.at("truth");
    c.truth.mc_samples = t.value("mc_samples", c.truth.mc_samples);
    c.truth.seed = t.value("seed", c.truth.seed);
    c.truth.slices = t.value("slices", c.truth.slices);
  }
  if (j.contains("supnorm_grid")) {
    const auto& g = j.at("supnorm_grid");
    if (g.contains("lo")) c.grid.lo = g.at("lo").get<double>();
    if (g.contains("hi")) c.grid.hi = g.at("hi").get<double>();
    c.grid.points = g.value("points", c.grid.points);
  }
  c.theta = j.value("theta", c.theta);
  c.threads = j.value("threads", c.threads);
  c.record_runtime = j.value("record_runtime", c.record_runtime);
  c.output_path = j.value("output_path", std::string());
  c.validate();
  return c;
}

inline Json to_json(const ExperimentConfig& c) {
  Json shapes = Json::array();
  for (const auto& s : c.shapes) shapes.push_back(s.dims);
  Json metrics = Json::array();
  for (Metric m : c.metrics) metrics.push_back(std::string(to_string(m)));
  Json grid{{"points", c.grid.points}};
  if (c.grid.lo) grid["lo"] = *c.grid.lo;
  if (c.grid.hi) grid["hi"] = *c.grid.hi;
  return Json{{"model", io::to_json(c.model)},
              {"shapes", shapes},
              {"seeds", c.seeds},
              {"schedule", io::to_json(c.schedule)},
              {"kernel", io::to_json(c.kernel)},
              {"metrics", metrics},
              {"whitening", c.oracle_whitening ? "oracle" : "empirical"},
              {"truth", Json{{"mc_samples", c.truth.mc_samples}, {"seed", c.truth.seed}, {"slices", c.truth.slices}}},
              {"supnorm_grid", grid},
              {"theta", c.theta},
              {"threads", c.threads},
              {"record_runtime", c.record_runtime},
              {"output_path", c.output_path}};
}

/// One (shape, seed) cell. Unavailable metrics are NaN and print as NA.
struct ExperimentRow {
  std::vector<int> dims;
  std::int64_t n_hat = 0;
  std::uint64_t seed = 0;
  double c1 = 0.0;
  double c2 = 0.0;
  int k = 0;
  double b_n = 0.0;
  double e_n = 0.0;
  double gamma_err_fro = std::numeric_limits<double>::quiet_NaN();
  double subspace_dist = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> beta_err; // sign-aligned ||beta_hat_j - beta_j||, j = 1..N
  double sup_f = std::numeric_limits<double>::quiet_NaN();
  double sup_m = std::numeric_limits<double>::quiet_NaN();
  double sup_M = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> lambda; // d entries
  double runtime_ms = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";
  std::vector<std::string> warnings;
};

struct SweepResult {
  std::vector<ExperimentRow> rows;
  ScheduleReport schedule_report;
  std::vector<std::string> warnings;
  std::string truth_source; // "closed_form" or "monte_carlo"
};

// ---- CSV ----------------------------------------------------------------------

inline constexpr const char* kNa = "NA";

namespace detail {

inline std::string g17_or_na(double v) { return std::isnan(v) ? std::string(kNa) : format_g17(v); }

} // namespace detail

inline std::string rows_csv_header(int d, int n_dirs) {
  std::string h = "dims,n_hat,seed,c1,c2,k,b_n,e_n,gamma_err_fro,subspace_dist";
  for (int j = 1; j <= n_dirs; ++j) h += ",beta_err_" + std::to_string(j);
  h += ",sup_f,sup_m,sup_M";
  for (int j = 1; j <= d; ++j) h += ",lambda_" + std::to_string(j);
  h += ",runtime_ms,status";
  return h;
}

inline std::string row_csv(const ExperimentRow& r, int d, int n_dirs) {
  LatticeShape shape{r.dims};
  std::string s = shape.label() + "," + std::to_string(r.n_hat) + "," + std::to_string(r.seed) + ",";
  s += format_g17(r.c1) + "," + format_g17(r.c2) + "," + std::to_string(r.k) + ",";
  s += format_g17(r.b_n) + "," + format_g17(r.e_n) + ",";
  s += detail::g17_or_na(r.gamma_err_fro) + "," + detail::g17_or_na(r.subspace_dist);
  for (int j = 0; j < n_dirs; ++j)
    s += "," + detail::g17_or_na(j < static_cast<int>(r.beta_err.size()) ? r.beta_err[j] : std::nan(""));
  s += "," + detail::g17_or_na(r.sup_f) + "," + detail::g17_or_na(r.sup_m) + "," + detail::g17_or_na(r.sup_M);
  for (int j = 0; j < d; ++j)
    s += "," + detail::g17_or_na(j < static_cast<int>(r.lambda.size()) ? r.lambda[j] : std::nan(""));
  std::string status = r.status;
  std::replace(status.begin(), status.end(), ',', ';');
  std::replace(status.begin(), status.end(), '\n', ' ');
  s += "," + detail::g17_or_na(r.runtime_ms) + "," + status;
  return s;
}

inline std::string rows_csv(const std::vector<ExperimentRow>& rows, int d, int n_dirs) {
  std::string out = rows_csv_header(d, n_dirs) + "\n";
  for (const auto& r : rows) out += row_csv(r, d, n_dirs) + "\n";
  return out;
}

/// Inverse of rows_csv (column widths are read from the header).
inline std::vector<ExperimentRow> parse_rows_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("rows CSV is empty");
  const auto header = io::split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"dims", "n_hat", "seed", "c1", "c2", "k", "b_n", "e_n", "gamma_err_fro", "subspace_dist",
                           "sup_f", "sup_m", "sup_M", "runtime_ms", "status"})
    if (!col.count(need)) throw InvalidArgument(std::string("rows CSV lacks column ") + need);
  int d = 0;
  int n_dirs = 0;
  while (col.count("lambda_" + std::to_string(d + 1))) ++d;
  while (col.count("beta_err_" + std::to_string(n_dirs + 1))) ++n_dirs;

  std::vector<ExperimentRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = io::split(line);
    const std::string where = "rows CSV line " + std::to_string(lineno);
    if (f.size() != header.size()) throw InvalidArgument(where + ": wrong number of fields");
    auto num = [&](const std::string& name) {
      const std::string& v = f[col.at(name)];
      return v == kNa ? std::numeric_limits<double>::quiet_NaN() : io::parse_double(v, where);
    };
    ExperimentRow r;
    r.dims = io::parse_shape(f[col.at("dims")]).dims;
    r.n_hat = static_cast<std::int64_t>(num("n_hat"));
    r.seed = std::stoull(f[col.at("seed")]);
    r.c1 = num("c1");
    r.c2 = num("c2");
    r.k = static_cast<int>(num("k"));
    r.b_n = num("b_n");
    r.e_n = num("e_n");
    r.gamma_err_fro = num("gamma_err_fro");
    r.subspace_dist = num("subspace_dist");
    for (int j = 1; j <= n_dirs; ++j) r.beta_err.push_back(num("beta_err_" + std::to_string(j)));
    r.sup_f = num("sup_f");
    r.sup_m = num("sup_m");
    r.sup_M = num("sup_M");
    for (int j = 1; j <= d; ++j) r.lambda.push_back(num("lambda_" + std::to_string(j)));
    r.runtime_ms = num("runtime_ms");
    r.status = f[col.at("status")];
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- sweep ---------------------------------------------------------------------

inline std::vector<double> supnorm_grid_points(const SupNormGrid& g, const PopulationTruth& truth) {
  const double lo = g.lo.value_or(truth.y_q025);
  const double hi = g.hi.value_or(truth.y_q975);
  detail::require(hi >= lo, "supnorm grid needs hi >= lo");
  std::vector<double> out;
  for (int i = 0; i < g.points; ++i)
    out.push_back(g.points == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (g.points - 1));
  return out;
}

/// Evaluates one cell. Estimator failures are caught and recorded in the row status.
inline ExperimentRow run_cell(const ExperimentConfig& cfg, const PopulationTruth& truth, const LatticeShape& shape,
                              std::uint64_t seed, const std::vector<double>& grid) {
  ExperimentRow row;
  row.dims = shape.dims;
  row.n_hat = shape.n_hat();
  row.seed = seed;
  row.c1 = cfg.schedule.c1;
  row.c2 = cfg.schedule.c2;
  row.k = cfg.schedule.k;
  const double n = static_cast<double>(row.n_hat);
  row.b_n = cfg.schedule.b_n(n);
  row.e_n = cfg.schedule.e_n(n);
  const auto start = std::chrono::steady_clock::now();
  try {
    const FieldDataset ds = simulate_field(cfg.model, shape, seed);
    const WhiteningResult w =
        cfg.oracle_whitening ? oracle_whiten(ds.X, truth.mean, truth.sigma) : whiten(ds.X);
    SaveOptions opt;
    opt.threads = cfg.threads;
    opt.keep_sites = false;
    const SaveEstimate est = save_estimate(w.Z_hat, ds.Y, cfg.kernel, cfg.schedule, opt);
    const SaveMatrices& mats = est.matrices;

    if (cfg.metrics.count(Metric::gamma_error)) row.gamma_err_fro = oracle::finite_sample_gamma_error(mats, truth);
    if (cfg.metrics.count(Metric::eigenvalues)) {
      const SymEigen eig = sym_eigen_descending(mats.Gamma_hat);
      row.lambda.assign(eig.values.data(), eig.values.data() + eig.values.size());
    }
    if (cfg.metrics.count(Metric::subspace_distance) && truth.has_edr()) {
      const EdrEstimate edr = edr_directions(mats, w, cfg.model.N);
      row.subspace_dist = subspace_distance(edr.beta_hat, cfg.model.B_true);
      row.beta_err = aligned_vector_errors(edr.beta_hat, truth.beta_targets(cfg.model.N));
      row.warnings.insert(row.warnings.end(), edr.warnings.begin(), edr.warnings.end());
    }
    if (cfg.metrics.count(Metric::supnorm)) {
      const SupNormReport rep = supnorm_errors(w.Z_hat, ds.Y, cfg.kernel, row.b_n, grid,
                                               [&](double y) { return truth.conditional_moments(y); });
      row.sup_f = rep.sup_f;
      row.sup_m = rep.sup_m;
      row.sup_M = rep.sup_M;
    }
  } catch (const Error& e) {
    row.status = std::string("failed: ") + e.what();
  }
  if (cfg.record_runtime)
    row.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return row;
}

/// Population truth for the sweep's model.
inline PopulationTruth sweep_truth(const ExperimentConfig& cfg) {
  return population_truth(cfg.model, cfg.truth.mc_samples, cfg.truth.seed, cfg.truth.slices);
}

/// Runs every (shape, seed) cell in (n_hat, seed) order. `on_row` sees each row as soon as
/// it is complete.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const PopulationTruth& truth,
                             const std::function<void(const ExperimentRow&)>& on_row = {}) {
  cfg.validate();
  SweepResult out;
  out.schedule_report = validate_schedule(cfg.schedule, cfg.model.L(), cfg.theta);
  if (!out.schedule_report.pass)
    out.warnings.push_back("WARNING: bandwidth schedule fails validation; results are outside the rate theory");
  out.truth_source = truth.gamma_exact ? "closed_form" : "monte_carlo";
  const std::vector<double> grid =
      cfg.metrics.count(Metric::supnorm) ? supnorm_grid_points(cfg.grid, truth) : std::vector<double>{};
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  for (const auto& shape : cfg.shapes)
    for (std::uint64_t seed : seeds) {
      ExperimentRow row = run_cell(cfg, truth, shape, seed, grid);
      for (const auto& w : row.warnings) out.warnings.push_back(shape.label() + " seed " + std::to_string(seed) + ": " + w);
      if (on_row) on_row(row);
      out.rows.push_back(std::move(row));
    }
  return out;
}

inline SweepResult run_sweep(const ExperimentConfig& cfg) { return run_sweep(cfg, sweep_truth(cfg)); }

/// Metadata sidecar: config echo, schedule report and warnings.
inline Json sweep_metadata(const ExperimentConfig& cfg, const SweepResult& res) {
  return Json{{"config", to_json(cfg)},
              {"schedule_report", io::to_json(res.schedule_report)},
              {"truth_source", res.truth_source},
              {"warnings", res.warnings}};
}

/// Runs the sweep writing the rows CSV incrementally to `path` and the metadata to
/// `path`.meta.json.
inline SweepResult run_sweep_to_file(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int d = cfg.model.d;
  const int n_dirs = cfg.model.has_true_direction() ? cfg.model.N : 0;
  out << rows_csv_header(d, n_dirs) << "\n";
  out.flush();
  const PopulationTruth truth = sweep_truth(cfg);
  SweepResult res = run_sweep(cfg, truth, [&](const ExperimentRow& r) {
    out << row_csv(r, d, n_dirs) << "\n";
    out.flush();
    if (!out) throw IoError("failed writing " + path);
  });
  out.close();
  if (!out) throw IoError("failed writing " + path);
  io::write_text(path + ".meta.json", io::dump(sweep_metadata(cfg, res)));
  return res;
}

// ---- rate fits -----------------------------------------------------------------

struct RatePoint {
  std::int64_t n_hat = 0;
  double median = 0.0;
  int count = 0;
};

struct RateFit {
  std::string metric;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<RatePoint> points;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw InsufficientData("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double row_metric(const ExperimentRow& r, const std::string& metric) {
  if (metric == "gamma_err_fro") return r.gamma_err_fro;
  if (metric == "subspace_dist") return r.subspace_dist;
  if (metric == "sup_f") return r.sup_f;
  if (metric == "sup_m") return r.sup_m;
  if (metric == "sup_M") return r.sup_M;
  if (metric == "runtime_ms") return r.runtime_ms;
  for (const std::string prefix : {"lambda_", "beta_err_"}) {
    if (metric.rfind(prefix, 0) == 0) {
      const int j = std::stoi(metric.substr(prefix.size())) - 1;
      const auto& v = prefix == "lambda_" ? r.lambda : r.beta_err;
      return j >= 0 && j < static_cast<int>(v.size()) ? v[j] : std::numeric_limits<double>::quiet_NaN();
    }
  }
  throw InvalidArgument("unknown metric '" + metric + "'");
}

/// Median of `metric` over seeds at each n_hat (NA and failed rows skipped), then the
/// least-squares line through (log n_hat, log median).
inline RateFit fit_rate(const std::vector<ExperimentRow>& rows, const std::string& metric) {
  std::map<std::int64_t, std::vector<double>> by_n;
  for (const auto& r : rows) {
    const double v = row_metric(r, metric);
    if (r.status == "ok" && std::isfinite(v)) by_n[r.n_hat].push_back(v);
  }
  RateFit fit;
  fit.metric = metric;
  for (auto& [n, vals] : by_n) {
    if (vals.size() < 5) continue;
    fit.points.push_back({n, median_of(vals), static_cast<int>(vals.size())});
  }
  if (fit.points.size() < 2)
    throw InsufficientData("fit_rate needs at least two lattice sizes with five or more seeds each");
  std::vector<double> lx, ly;
  for (const auto& p : fit.points) {
    if (!(p.median > 0.0)) throw InvalidArgument("fit_rate needs positive medians");
    lx.push_back(std::log(static_cast<double>(p.n_hat)));
    ly.push_back(std::log(p.median));
  }
  const double m = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= m;
  my /= m;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

inline Json to_json(const RateFit& f) {
  Json pts = Json::array();
  for (const auto& p : f.points) pts.push_back(Json{{"n_hat", p.n_hat}, {"median", p.median}, {"count", p.count}});
  return Json{{"metric", f.metric}, {"slope", f.slope}, {"intercept", f.intercept}, {"points", pts}};
}

} // namespace ksave

#endif // KSAVE_EXPERIMENTS_HPP
