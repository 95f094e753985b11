#ifndef KSAVE_IO_HPP
#define KSAVE_IO_HPP

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ksave/edr.hpp"
#include "ksave/error.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/kernels.hpp"
#include "ksave/linalg.hpp"
#include "ksave/save_core.hpp"

namespace ksave {

using Json = nlohmann::ordered_json;

namespace io {

// ---- text files -------------------------------------------------------------

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path);
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(what + ": malformed JSON: " + e.what());
  }
}

inline Json read_json(const std::string& path) { return parse_json(read_text(path), path); }

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(where + ": not a number: '" + s + "'");
  }
}

// ---- matrices ----------------------------------------------------------------

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// Row-major nested array.
inline Json to_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw InvalidArgument(what + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw InvalidArgument(what + " must be a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw InvalidArgument(what + " has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

// ---- kernels -----------------------------------------------------------------

inline Json to_json(const KernelSpec& k) {
  return Json{{"name", k.name},
              {"order_k", k.order_k},
              {"support_radius", k.support_radius},
              {"poly_coeffs", k.poly_coeffs},
              {"lipschitz_bound", k.lipschitz_bound}};
}

/// Either an explicit record (name, order_k, support_radius, poly_coeffs) or a construction
/// request {"order_k": k[, "support_radius": r]}; the Lipschitz bound is always rederived.
inline KernelSpec kernel_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("kernel must be an object");
  const int k = j.value("order_k", 3);
  if (j.contains("poly_coeffs"))
    return make_kernel(j.value("name", std::string("custom")), k, j.at("support_radius").get<double>(),
                       j.at("poly_coeffs").get<std::vector<double>>());
  if (j.value("name", std::string()) == "epanechnikov") return epanechnikov();
  return build_order_k_kernel(k, j.value("support_radius", 1.0));
}

inline Json to_json(const MomentReport& r) {
  Json targets = Json::array();
  for (double t : r.targets) targets.push_back(std::isnan(t) ? Json(nullptr) : Json(t));
  return Json{{"order_k", r.order_k},
              {"moments", r.moments},
              {"targets", targets},
              {"deviations", r.deviations},
              {"abs_moment_k", r.abs_moment_k},
              {"abs_moment_deviation", r.abs_moment_deviation},
              {"max_difference_quotient", r.max_difference_quotient},
              {"moments_ok", r.moments_ok},
              {"abs_moment_ok", r.abs_moment_ok},
              {"lipschitz_ok", r.lipschitz_ok},
              {"support_ok", r.support_ok},
              {"pass", r.pass}};
}

// ---- schedules -----------------------------------------------------------------

inline Json to_json(const BandwidthSchedule& s) { return Json{{"c1", s.c1}, {"c2", s.c2}, {"k", s.k}}; }

inline BandwidthSchedule schedule_from_json(const Json& j) {
  BandwidthSchedule s;
  s.c1 = j.value("c1", s.c1);
  s.c2 = j.value("c2", s.c2);
  s.k = j.value("k", s.k);
  return s;
}

inline Json to_json(const ScheduleReport& r) {
  Json checks = Json::array();
  auto bound = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  for (const auto& c : r.checks)
    checks.push_back(
        Json{{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"lower", bound(c.lower)}, {"upper", bound(c.upper)}});
  return Json{{"k", r.k},
              {"L", r.L},
              {"theta", r.theta},
              {"theta1", bound(r.theta1)},
              {"checks", checks},
              {"feasible_region_nonempty", r.feasible_region_nonempty},
              {"pass", r.pass}};
}

// ---- models --------------------------------------------------------------------

inline Json to_json(const ModelSpec& m) {
  Json weights = Json::array();
  for (const auto& w : m.ma_weights) weights.push_back(Json{{"offset", w.offset}, {"weight", w.weight}});
  return Json{{"d", m.d},
              {"N", m.N},
              {"link", std::string(to_string(m.link))},
              {"noise_sd", m.noise_sd},
              {"noise_law", std::string(to_string(m.noise_law))},
              {"dependence_radius", m.dependence_radius},
              {"innovation_law", std::string(to_string(m.innovation_law))},
              {"ma_weights", weights},
              {"mixing", to_json(m.mixing)},
              {"mean", to_json(m.mean)},
              {"B_true", to_json(m.B_true)}};
}

/// A model object holds either the full specification (as written by to_json) or
/// make_model options, optionally starting from a named preset; explicit fields override.
inline ModelSpec model_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidArgument("model must be an object");
  ModelOptions o = j.contains("preset") ? preset_options(j.at("preset").get<std::string>()) : ModelOptions{};
  o.link = parse_link(j.value("link", std::string(to_string(o.link))));
  o.d = j.value("d", o.d);
  o.L = j.value("L", o.L);
  o.dependence_radius = j.value("dependence_radius", o.dependence_radius);
  o.innovation_law = parse_innovation_law(j.value("innovation_law", std::string(to_string(o.innovation_law))));
  o.noise_sd = j.value("noise_sd", o.noise_sd);
  o.noise_law = parse_noise_law(j.value("noise_law", std::string(to_string(o.noise_law))));
  o.beta_scale = j.value("beta_scale", o.beta_scale);
  o.mixing_offdiag = j.value("mixing_offdiag", o.mixing_offdiag);
  ModelSpec m = make_model(o);
  if (j.contains("ma_weights")) {
    m.ma_weights.clear();
    for (const auto& w : j.at("ma_weights"))
      m.ma_weights.push_back(MaWeight{w.at("offset").get<std::vector<int>>(), w.at("weight").get<double>()});
  }
  if (j.contains("mixing")) m.mixing = matrix_from_json(j.at("mixing"), "mixing");
  if (j.contains("mean")) m.mean = vector_from_json(j.at("mean"), "mean");
  if (j.contains("B_true")) {
    m.B_true = matrix_from_json(j.at("B_true"), "B_true");
    m.N = static_cast<int>(m.B_true.cols());
  }
  m.N = j.value("N", m.N);
  m.validate();
  return m;
}

// ---- shapes --------------------------------------------------------------------

inline LatticeShape shape_from_json(const Json& j) {
  LatticeShape s;
  if (j.is_array()) {
    s.dims = j.get<std::vector<int>>();
  } else if (j.is_string()) {
    for (const auto& part : split(j.get<std::string>(), 'x')) s.dims.push_back(static_cast<int>(parse_double(part, "shape")));
  } else {
    throw InvalidArgument("shape must be an array of extents or a string like 32x32");
  }
  s.validate();
  return s;
}

inline LatticeShape parse_shape(const std::string& text) { return shape_from_json(Json(text)); }

// ---- datasets ------------------------------------------------------------------

namespace detail {

inline void append_g17(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

} // namespace detail

/// Header i1..iL,x1..xd,y; one row per site in row-major lattice order, last index fastest.
inline std::string dataset_csv(const LatticeShape& shape, const SampleMatrix& x, const Vector& y) {
  const int L = shape.L();
  const auto d = x.cols();
  ksave::detail::require(x.rows() == shape.n_hat() && y.size() == shape.n_hat(), "dataset arrays do not match the shape");
  std::string out;
  for (int a = 1; a <= L; ++a) out += "i" + std::to_string(a) + ",";
  for (Eigen::Index c = 1; c <= d; ++c) out += "x" + std::to_string(c) + ",";
  out += "y\n";
  std::vector<int> idx(static_cast<std::size_t>(L), 0);
  for (std::int64_t s = 0; s < shape.n_hat(); ++s) {
    for (int a = 0; a < L; ++a) out += std::to_string(idx[a]) + ",";
    for (Eigen::Index c = 0; c < d; ++c) {
      detail::append_g17(out, x(s, c));
      out += ",";
    }
    detail::append_g17(out, y(s));
    out += "\n";
    for (int a = L - 1; a >= 0; --a) {
      if (++idx[a] < shape.dims[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

inline std::string dataset_csv(const FieldDataset& ds) { return dataset_csv(ds.shape, ds.X, ds.Y); }

struct CsvDataset {
  LatticeShape shape;
  SampleMatrix X;
  Vector Y;
};

/// Inverse of dataset_csv. The lattice extents are the per-axis maxima of the indices plus
/// one, and the rows must enumerate that box in row-major order.
inline CsvDataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("dataset CSV is empty");
  const auto header = split(line);
  int L = 0;
  int d = 0;
  for (const auto& h : header) {
    if (!h.empty() && h[0] == 'i') ++L;
    else if (!h.empty() && h[0] == 'x') ++d;
  }
  if (L < 1 || d < 1 || header.size() != static_cast<std::size_t>(L + d + 1) || header.back() != "y")
    throw InvalidArgument("dataset CSV header must be i1..iL,x1..xd,y");
  for (int a = 0; a < L; ++a)
    if (header[a] != "i" + std::to_string(a + 1)) throw InvalidArgument("dataset CSV header must be i1..iL,x1..xd,y");
  for (int c = 0; c < d; ++c)
    if (header[L + c] != "x" + std::to_string(c + 1)) throw InvalidArgument("dataset CSV header must be i1..iL,x1..xd,y");

  std::vector<std::vector<int>> idx;
  std::vector<double> xs;
  std::vector<double> ys;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line);
    const std::string where = "dataset CSV row " + std::to_string(row);
    if (f.size() != header.size()) throw InvalidArgument(where + ": wrong number of fields");
    std::vector<int> ii;
    for (int a = 0; a < L; ++a) ii.push_back(static_cast<int>(parse_double(f[a], where)));
    idx.push_back(std::move(ii));
    for (int c = 0; c < d; ++c) xs.push_back(parse_double(f[L + c], where));
    ys.push_back(parse_double(f.back(), where));
  }
  if (ys.empty()) throw InvalidArgument("dataset CSV has no rows");

  CsvDataset out;
  out.shape.dims.assign(static_cast<std::size_t>(L), 0);
  for (const auto& ii : idx)
    for (int a = 0; a < L; ++a) out.shape.dims[a] = std::max(out.shape.dims[a], ii[a] + 1);
  if (out.shape.n_hat() != static_cast<std::int64_t>(ys.size()))
    throw InvalidArgument("dataset CSV rows do not fill a rectangular lattice");
  std::vector<int> expect(static_cast<std::size_t>(L), 0);
  for (const auto& ii : idx) {
    if (ii != expect) throw InvalidArgument("dataset CSV rows are not in row-major lattice order");
    for (int a = L - 1; a >= 0; --a) {
      if (++expect[a] < out.shape.dims[a]) break;
      expect[a] = 0;
    }
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  out.X = Eigen::Map<const SampleMatrix>(xs.data(), n, d);
  out.Y = Eigen::Map<const Vector>(ys.data(), n);
  return out;
}

// ---- estimates -----------------------------------------------------------------

inline Json to_json(const EdrEstimate& e) {
  Json cols = Json::array();
  for (Eigen::Index j = 0; j < e.beta_hat.cols(); ++j) cols.push_back(to_json(Vector(e.beta_hat.col(j))));
  Json vecs = Json::array();
  for (Eigen::Index j = 0; j < e.eigenvectors.cols(); ++j) vecs.push_back(to_json(Vector(e.eigenvectors.col(j))));
  return Json{{"N", e.N_used},
              {"eigenvalues", to_json(e.eigenvalues)},
              {"eigenvectors", vecs},
              {"beta_hat", cols},
              {"warnings", e.warnings}};
}

inline Json to_json(const SaveMatrices& m) {
  return Json{{"Gamma_hat", to_json(m.Gamma_hat)},
              {"Psi_hat", to_json(m.Psi_hat)},
              {"Lambda_hat", to_json(m.Lambda_hat)},
              {"Z_bar", to_json(m.Z_bar)}};
}

} // namespace io
} // namespace ksave

#endif // KSAVE_IO_HPP
