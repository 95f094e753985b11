#ifndef KSAVE_FIELDSIM_HPP
#define KSAVE_FIELDSIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ksave/error.hpp"
#include "ksave/linalg.hpp"

namespace ksave {

/// Rectangular observation window {1..n_1} x ... x {1..n_L}; sites are enumerated
/// row-major (last index fastest).
struct LatticeShape {
  std::vector<int> dims;

  int L() const { return static_cast<int>(dims.size()); }
  std::int64_t n_hat() const {
    return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>{});
  }
  void validate() const {
    detail::require(!dims.empty(), "lattice must have at least one dimension");
    for (int n : dims) detail::require(n >= 1, "lattice dimensions must be positive");
  }
  std::string label() const {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
    return s;
  }
  bool operator==(const LatticeShape&) const = default;
};

inline LatticeShape square_lattice(int n, int L = 2) { return LatticeShape{std::vector<int>(L, n)}; }

enum class Link { independent, linear, quadratic_single_index, two_index };
enum class InnovationLaw { bounded_uniform, gaussian };
enum class NoiseLaw { gaussian, uniform };

inline std::string_view to_string(Link l) {
  switch (l) {
  case Link::independent: return "independent";
  case Link::linear: return "linear";
  case Link::quadratic_single_index: return "quadratic_single_index";
  case Link::two_index: return "two_index";
  }
  return "?";
}
inline std::string_view to_string(InnovationLaw l) {
  return l == InnovationLaw::gaussian ? "gaussian" : "bounded_uniform";
}
inline std::string_view to_string(NoiseLaw l) { return l == NoiseLaw::uniform ? "uniform" : "gaussian"; }

inline Link parse_link(std::string_view s) {
  for (Link l : {Link::independent, Link::linear, Link::quadratic_single_index, Link::two_index})
    if (to_string(l) == s) return l;
  throw InvalidArgument("unknown link '" + std::string(s) + "'");
}
inline InnovationLaw parse_innovation_law(std::string_view s) {
  if (s == "bounded_uniform") return InnovationLaw::bounded_uniform;
  if (s == "gaussian") return InnovationLaw::gaussian;
  throw InvalidArgument("unknown innovation law '" + std::string(s) + "'");
}
inline NoiseLaw parse_noise_law(std::string_view s) {
  if (s == "gaussian") return NoiseLaw::gaussian;
  if (s == "uniform") return NoiseLaw::uniform;
  throw InvalidArgument("unknown noise law '" + std::string(s) + "'");
}

struct MaWeight {
  std::vector<int> offset;
  double weight = 0.0;
  bool operator==(const MaWeight&) const = default;
};

/// Moving-average coefficients equal to one on the full (2r+1)^L window.
inline std::vector<MaWeight> box_weights(int L, int r) {
  std::vector<MaWeight> out;
  std::vector<int> off(L, -r);
  while (true) {
    out.push_back({off, 1.0});
    int axis = L - 1;
    while (axis >= 0 && off[axis] == r) off[axis--] = -r;
    if (axis < 0) break;
    ++off[axis];
  }
  return out;
}

/// Y = g(B^T X, eps) with X a spatial moving average of i.i.d. unit-variance innovations,
/// X_i = mean + mixing * sum_j a_j eta_{i+j}.
struct ModelSpec {
  int d = 4;
  int N = 1;
  Matrix B_true;
  Link link = Link::linear;
  double noise_sd = 0.0;
  NoiseLaw noise_law = NoiseLaw::gaussian;
  int dependence_radius = 0;
  InnovationLaw innovation_law = InnovationLaw::bounded_uniform;
  std::vector<MaWeight> ma_weights;
  Matrix mixing; // d x d, invertible
  Vector mean;   // d

  int L() const { return ma_weights.empty() ? 0 : static_cast<int>(ma_weights.front().offset.size()); }

  double weight_sq_sum() const {
    double s = 0.0;
    for (const auto& w : ma_weights) s += w.weight * w.weight;
    return s;
  }

  /// Exact covariance of X.
  Matrix sigma() const { return weight_sq_sum() * mixing * mixing.transpose(); }

  /// Certified bound on ||Z|| under bounded_uniform innovations (+inf for gaussian).
  double z_bound() const {
    if (innovation_law == InnovationLaw::gaussian) return std::numeric_limits<double>::infinity();
    double abs_sum = 0.0;
    for (const auto& w : ma_weights) abs_sum += std::abs(w.weight);
    return std::sqrt(3.0 * d) * abs_sum / std::sqrt(weight_sq_sum()) * (1.0 + 1e-12);
  }

  void validate() const {
    detail::require(d >= 2, "model needs d >= 2");
    detail::require(N >= 1 && N < d, "model needs 1 <= N < d");
    detail::require(B_true.rows() == d && B_true.cols() == N, "B_true must be d x N");
    detail::require(mixing.rows() == d && mixing.cols() == d, "mixing matrix must be d x d");
    detail::require(mean.size() == d, "mean must have d entries");
    detail::require(noise_sd >= 0.0, "noise_sd must be nonnegative");
    detail::require(dependence_radius >= 0, "dependence radius must be nonnegative");
    detail::require(!ma_weights.empty() && weight_sq_sum() > 0.0, "moving-average weights must not all vanish");
    for (const auto& w : ma_weights) {
      detail::require(static_cast<int>(w.offset.size()) == L(), "moving-average offsets must share one dimension");
      for (int o : w.offset)
        detail::require(std::abs(o) <= dependence_radius, "moving-average offset outside dependence radius");
    }
    Eigen::JacobiSVD<Matrix> svd_b(B_true);
    detail::require(svd_b.singularValues()(N - 1) > 1e-10, "B_true must have full column rank");
    Eigen::JacobiSVD<Matrix> svd_a(mixing);
    detail::require(svd_a.singularValues()(d - 1) > 1e-10, "mixing matrix must be invertible");
    switch (link) {
    case Link::independent: detail::require(noise_sd > 0.0, "independent link needs noise_sd > 0"); break;
    case Link::linear:
    case Link::quadratic_single_index: detail::require(N == 1, "single-index links need N = 1"); break;
    case Link::two_index: detail::require(N == 2, "two_index link needs N = 2"); break;
    }
  }

  /// g evaluated at index values v = B^T X and noise eps.
  double link_value(const Vector& v, double eps) const {
    switch (link) {
    case Link::independent: return eps;
    case Link::linear: return v(0) + eps;
    case Link::quadratic_single_index: return v(0) * v(0) + eps;
    case Link::two_index: return v(0) + v(1) * v(1) + eps;
    }
    return eps;
  }

  bool has_true_direction() const { return link != Link::independent; }
};

struct ModelOptions {
  Link link = Link::linear;
  int d = 4;
  int L = 2;
  int dependence_radius = 0;
  InnovationLaw innovation_law = InnovationLaw::bounded_uniform;
  double noise_sd = 0.0;
  NoiseLaw noise_law = NoiseLaw::gaussian;
  /// Length of each beta_j measured in whitened coordinates.
  double beta_scale = 1.0;
  /// Off-diagonal entry of the symmetric mixing matrix I + rho (11^T - I).
  double mixing_offdiag = 0.3;
};

/// Model with a symmetric positive-definite mixing matrix (so the whitened predictor has
/// independent coordinates), box moving-average weights, zero mean, and true directions
/// beta_j = beta_scale * Sigma^{-1/2} e_j.
inline ModelSpec make_model(const ModelOptions& o) {
  ModelSpec m;
  m.d = o.d;
  m.N = o.link == Link::two_index ? 2 : 1;
  m.link = o.link;
  m.noise_sd = o.noise_sd;
  m.noise_law = o.noise_law;
  m.dependence_radius = o.dependence_radius;
  m.innovation_law = o.innovation_law;
  m.ma_weights = box_weights(o.L, o.dependence_radius);
  m.mixing = Matrix::Constant(o.d, o.d, o.mixing_offdiag);
  m.mixing.diagonal().setOnes();
  m.mean = Vector::Zero(o.d);
  const Matrix inv_sqrt = sym_inv_sqrt(m.sigma());
  m.B_true = o.beta_scale * inv_sqrt.leftCols(m.N);
  m.validate();
  return m;
}

/// Named model presets. Y scales are chosen so that the density of Y stays above the
/// truncation floor e_n over most of its mass at desk-scale lattices.
///   linear                Y = 0.3 Z_1 (noiseless)
///   quadratic             Y = (0.3 Z_1)^2 + 0.03 eps
///   two_index             Y = 0.3 Z_1 + (0.3 Z_2)^2 + 0.03 eps
///   independent_uniform   Y = eps, eps uniform with sd 0.3
///   independent_gaussian  Y = eps, eps normal with sd 0.3
inline ModelOptions preset_options(std::string_view name) {
  ModelOptions o;
  o.beta_scale = 0.3;
  if (name == "linear") {
    o.link = Link::linear;
  } else if (name == "quadratic") {
    o.link = Link::quadratic_single_index;
    o.noise_sd = 0.03;
  } else if (name == "two_index") {
    o.link = Link::two_index;
    o.noise_sd = 0.03;
  } else if (name == "independent_uniform") {
    o.link = Link::independent;
    o.noise_sd = 0.3;
    o.noise_law = NoiseLaw::uniform;
  } else if (name == "independent_gaussian") {
    o.link = Link::independent;
    o.noise_sd = 0.3;
  } else {
    throw InvalidArgument("unknown model preset '" + std::string(name) + "'");
  }
  return o;
}

inline ModelSpec preset_model(std::string_view name, int dependence_radius = 0,
                              InnovationLaw law = InnovationLaw::bounded_uniform) {
  ModelOptions o = preset_options(name);
  o.dependence_radius = dependence_radius;
  o.innovation_law = law;
  return make_model(o);
}

struct FieldDataset {
  LatticeShape shape;
  SampleMatrix X;
  Vector Y;
  std::optional<SampleMatrix> Z_oracle;
  std::optional<Vector> noise; // simulator-side eps_i, when known
  std::optional<ModelSpec> model;
  std::uint64_t seed = 0;

  std::int64_t n_hat() const { return static_cast<std::int64_t>(Y.size()); }
};

namespace detail {

class InnovationSampler {
public:
  InnovationSampler(InnovationLaw law, std::uint64_t seed, std::uint64_t stream) : law_(law) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    engine_.seed(seq);
  }
  double operator()() {
    if (law_ == InnovationLaw::gaussian) return normal_(engine_);
    return uniform_(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

private:
  InnovationLaw law_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{-std::sqrt(3.0), std::sqrt(3.0)};
};

class NoiseSampler {
public:
  NoiseSampler(NoiseLaw law, double sd, std::uint64_t seed, std::uint64_t stream)
      : law_(law), sd_(sd) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    engine_.seed(seq);
  }
  double operator()() {
    if (sd_ == 0.0) return 0.0;
    if (law_ == NoiseLaw::uniform) return sd_ * uniform_(engine_);
    return sd_ * normal_(engine_);
  }

private:
  NoiseLaw law_;
  double sd_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{-std::sqrt(3.0), std::sqrt(3.0)};
};

inline constexpr std::uint64_t kInnovationStream = 1;
inline constexpr std::uint64_t kNoiseStream = 2;
inline constexpr std::uint64_t kTruthStream = 3;
inline constexpr std::uint64_t kTruthNoiseStream = 4;

} // namespace detail

/// Simulate an m-dependent (m = 2r) stationary field on the window; innovations live on
/// the window dilated by r so that every observed site sees a full moving-average stencil.
inline FieldDataset simulate_field(const ModelSpec& model, const LatticeShape& shape, std::uint64_t seed) {
  model.validate();
  shape.validate();
  const int L = shape.L();
  const int r = model.dependence_radius;
  detail::require(model.L() == L, "moving-average weights dimension does not match lattice dimension");
  for (int n : shape.dims)
    if (n < 2 * r + 1) throw InvalidArgument("lattice dimension smaller than the moving-average window");

  const int d = model.d;
  std::vector<std::int64_t> ext_dims(L), ext_stride(L);
  for (int a = 0; a < L; ++a) ext_dims[a] = shape.dims[a] + 2 * r;
  std::int64_t ext_n = 1;
  for (int a = L - 1; a >= 0; --a) {
    ext_stride[a] = ext_n;
    ext_n *= ext_dims[a];
  }

  detail::InnovationSampler innov(model.innovation_law, seed, detail::kInnovationStream);
  std::vector<double> eta(static_cast<std::size_t>(ext_n * d));
  for (double& e : eta) e = innov();

  // Flattened offsets of the stencil in the dilated lattice.
  std::vector<std::int64_t> stencil;
  std::vector<double> weights;
  for (const auto& w : model.ma_weights) {
    std::int64_t off = 0;
    for (int a = 0; a < L; ++a) off += w.offset[a] * ext_stride[a];
    stencil.push_back(off);
    weights.push_back(w.weight);
  }

  const std::int64_t n = shape.n_hat();
  FieldDataset ds;
  ds.shape = shape;
  ds.model = model;
  ds.seed = seed;
  ds.X.resize(n, d);
  ds.Y.resize(n);
  SampleMatrix z(n, d);
  Vector eps(n);

  const Matrix inv_sqrt = sym_inv_sqrt(model.sigma());
  const Matrix z_map = inv_sqrt * model.mixing;
  detail::NoiseSampler noise(model.noise_law, model.noise_sd, seed, detail::kNoiseStream);

  std::vector<int> idx(L, 0);
  Vector u(d);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t centre = 0;
    for (int a = 0; a < L; ++a) centre += (idx[a] + r) * ext_stride[a];
    u.setZero();
    for (std::size_t s = 0; s < stencil.size(); ++s) {
      const double* e = &eta[static_cast<std::size_t>((centre + stencil[s]) * d)];
      for (int c = 0; c < d; ++c) u(c) += weights[s] * e[c];
    }
    const Vector x = model.mean + model.mixing * u;
    ds.X.row(i) = x.transpose();
    z.row(i) = (z_map * u).transpose();
    eps(i) = noise();
    ds.Y(i) = model.link_value(model.B_true.transpose() * x, eps(i));

    for (int a = L - 1; a >= 0; --a) {
      if (++idx[a] < shape.dims[a]) break;
      idx[a] = 0;
    }
  }
  ds.Z_oracle = std::move(z);
  ds.noise = std::move(eps);
  return ds;
}

/// Density f and the un-normalised conditional moments m = f r, M = f R of the whitened
/// predictor given Y = y.
struct ConditionalMoments {
  double f = 0.0;
  Vector m;
  Matrix M;
};

struct PopulationTruth {
  int d = 0;
  Vector mean;
  Matrix sigma;
  Matrix sigma_sqrt;
  Matrix sigma_inv_sqrt;
  // Slicing Monte Carlo estimates.
  Matrix gamma_mc;
  Matrix psi;
  Matrix lambda;
  int slices = 0;
  std::int64_t mc_samples = 0;
  /// Closed form of Gamma when the model admits one.
  std::optional<Matrix> gamma_exact;
  /// Orthonormal basis of Sigma^{1/2} span(B_true) (the whitened EDR span); empty when no
  /// true direction exists.
  Matrix edr_whitened;
  /// B_true itself (the EDR space in predictor coordinates).
  Matrix edr_beta;

  // Binned surrogate of f, m, M over [bin_lo, bin_lo + bins * bin_width).
  double bin_lo = 0.0;
  double bin_width = 0.0;
  std::vector<double> bin_f;
  std::vector<Vector> bin_m;
  std::vector<Matrix> bin_M;
  /// 2.5% and 97.5% quantiles of Y; the default sup-norm grid spans them.
  double y_q025 = 0.0;
  double y_q975 = 0.0;

  // Closed-form conditional moments, when available.
  std::function<ConditionalMoments(double)> exact_moments;

  const Matrix& gamma() const { return gamma_exact ? *gamma_exact : gamma_mc; }
  bool has_edr() const { return edr_whitened.cols() > 0; }

  /// Sign-aligned targets for beta_hat_j: Sigma^{-1/2} tau_j, tau_j unit eigenvectors of Gamma.
  Matrix beta_targets(int n_dirs) const {
    const SymEigen eig = sym_eigen_descending(gamma());
    return sigma_inv_sqrt * eig.vectors.leftCols(n_dirs);
  }

  ConditionalMoments conditional_moments(double y) const {
    if (exact_moments) return exact_moments(y);
    ConditionalMoments out{0.0, Vector::Zero(d), Matrix::Zero(d, d)};
    const int bins = static_cast<int>(bin_f.size());
    if (bins == 0) return out;
    // Linear interpolation between bin centres; zero beyond the outer centres.
    const double t = (y - bin_lo) / bin_width - 0.5;
    if (t < 0.0 || t > bins - 1) return out;
    const int lo = std::min(static_cast<int>(std::floor(t)), bins - 1);
    const int hi = std::min(lo + 1, bins - 1);
    const double w = t - lo;
    out.f = (1 - w) * bin_f[lo] + w * bin_f[hi];
    out.m = (1 - w) * bin_m[lo] + w * bin_m[hi];
    out.M = (1 - w) * bin_M[lo] + w * bin_M[hi];
    return out;
  }
};

namespace detail {

inline double normal_pdf(double x, double sd) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi / sd * std::exp(-0.5 * (x / sd) * (x / sd));
}

inline double noise_pdf(NoiseLaw law, double sd, double x) {
  if (law == NoiseLaw::gaussian) return normal_pdf(x, sd);
  const double half = std::sqrt(3.0) * sd;
  return std::abs(x) <= half ? 0.5 / half : 0.0;
}

// Index of a nonzero entry if v is (numerically) a multiple of a coordinate axis.
inline int axis_of(const Vector& v) {
  Eigen::Index i;
  const double big = v.cwiseAbs().maxCoeff(&i);
  return (v.norm() - big) <= 1e-10 * big ? static_cast<int>(i) : -1;
}

} // namespace detail

/// Population quantities of a model: exact mean and covariance, slicing Monte Carlo
/// estimates of Gamma, Psi and Lambda from i.i.d. (Z, Y) draws, and the EDR span.
inline PopulationTruth population_truth(const ModelSpec& model, std::int64_t mc_samples, std::uint64_t seed,
                                        int slices = 200, int surrogate_bins = 400) {
  model.validate();
  if (mc_samples < 10000) throw InvalidArgument("population_truth needs at least 10^4 Monte Carlo samples");
  detail::require(slices >= 200, "population_truth needs at least 200 slices");
  const int d = model.d;

  PopulationTruth t;
  t.d = d;
  t.mean = model.mean;
  t.sigma = model.sigma();
  t.sigma_sqrt = sym_sqrt(t.sigma);
  t.sigma_inv_sqrt = sym_inv_sqrt(t.sigma);
  t.slices = slices;
  t.mc_samples = mc_samples;
  t.edr_beta = model.B_true;
  if (model.has_true_direction()) {
    Eigen::HouseholderQR<Matrix> qr(t.sigma_sqrt * model.B_true);
    t.edr_whitened = qr.householderQ() * Matrix::Identity(d, model.N);
  }

  // i.i.d. draws of the per-site marginal of (Z, Y).
  const Matrix z_map = t.sigma_inv_sqrt * model.mixing;
  detail::InnovationSampler innov(model.innovation_law, seed, detail::kTruthStream);
  detail::NoiseSampler noise(model.noise_law, model.noise_sd, seed, detail::kTruthNoiseStream);
  SampleMatrix z(mc_samples, d);
  std::vector<double> y(static_cast<std::size_t>(mc_samples));
  Vector u(d);
  for (std::int64_t s = 0; s < mc_samples; ++s) {
    u.setZero();
    for (const auto& w : model.ma_weights)
      for (int c = 0; c < d; ++c) u(c) += w.weight * innov();
    const Vector x = model.mean + model.mixing * u;
    z.row(s) = (z_map * u).transpose();
    y[s] = model.link_value(model.B_true.transpose() * x, noise());
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(mc_samples));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return y[a] < y[b]; });

  const Matrix I = Matrix::Identity(d, d);
  Vector z_bar = Vector::Zero(d);
  t.psi = Matrix::Zero(d, d);
  t.lambda = Matrix::Zero(d, d);
  t.gamma_mc = Matrix::Zero(d, d);
  for (int h = 0; h < slices; ++h) {
    const std::int64_t lo = mc_samples * h / slices;
    const std::int64_t hi = mc_samples * (h + 1) / slices;
    Vector r = Vector::Zero(d);
    Matrix R = Matrix::Zero(d, d);
    for (std::int64_t s = lo; s < hi; ++s) {
      const Vector zs = z.row(order[s]).transpose();
      r += zs;
      R.noalias() += zs * zs.transpose();
    }
    const double cnt = static_cast<double>(hi - lo);
    z_bar += r;
    r /= cnt;
    R /= cnt;
    const Matrix C = R - r * r.transpose();
    const double p = cnt / static_cast<double>(mc_samples);
    t.psi += p * r * r.transpose();
    t.lambda += p * C * C;
    t.gamma_mc += p * (I - C) * (I - C);
  }
  z_bar /= static_cast<double>(mc_samples);
  t.psi -= z_bar * z_bar.transpose();

  t.y_q025 = y[order[static_cast<std::size_t>(mc_samples * 25 / 1000)]];
  t.y_q975 = y[order[static_cast<std::size_t>(mc_samples - 1 - mc_samples * 25 / 1000)]];

  // Binned surrogate for f, m, M on the central 99.8% of Y.
  {
    const double y_lo = y[order[static_cast<std::size_t>(mc_samples / 1000)]];
    const double y_hi = y[order[static_cast<std::size_t>(mc_samples - 1 - mc_samples / 1000)]];
    t.bin_lo = y_lo;
    t.bin_width = std::max(y_hi - y_lo, 1e-12) / surrogate_bins;
    t.bin_f.assign(surrogate_bins, 0.0);
    t.bin_m.assign(surrogate_bins, Vector::Zero(d));
    t.bin_M.assign(surrogate_bins, Matrix::Zero(d, d));
    const double scale = 1.0 / (static_cast<double>(mc_samples) * t.bin_width);
    for (std::int64_t s = 0; s < mc_samples; ++s) {
      const double pos = (y[s] - t.bin_lo) / t.bin_width;
      if (pos < 0.0 || pos >= surrogate_bins) continue;
      const auto b = static_cast<std::size_t>(pos);
      const Vector zs = z.row(s).transpose();
      t.bin_f[b] += scale;
      t.bin_m[b] += scale * zs;
      t.bin_M[b].noalias() += scale * zs * zs.transpose();
    }
  }

  // Closed forms.
  const double s2 = model.weight_sq_sum();
  const bool rotation_free = (z_map * std::sqrt(s2) - I).cwiseAbs().maxCoeff() < 1e-10;
  if (model.link == Link::independent) {
    t.gamma_exact = Matrix::Zero(d, d);
    const NoiseLaw law = model.noise_law;
    const double sd = model.noise_sd;
    t.exact_moments = [d, law, sd](double yy) {
      const double f = detail::noise_pdf(law, sd, yy);
      return ConditionalMoments{f, Vector::Zero(d), f * Matrix::Identity(d, d)};
    };
  } else if (model.link == Link::linear && model.noise_sd == 0.0) {
    const Vector tau = t.sigma_sqrt * model.B_true.col(0);
    const bool gaussian = model.innovation_law == InnovationLaw::gaussian;
    const int axis = detail::axis_of(tau);
    if (gaussian || (rotation_free && axis >= 0)) {
      const Vector unit = tau / tau.norm();
      t.gamma_exact = unit * unit.transpose();
      const double shift = model.B_true.col(0).dot(model.mean);
      const double scale = tau.norm();
      if (gaussian || model.dependence_radius == 0) {
        t.exact_moments = [d, unit, shift, scale, gaussian](double yy) {
          const double zc = (yy - shift) / scale;
          const double f = gaussian ? detail::normal_pdf(zc, 1.0) / scale
                                    : (std::abs(zc) <= std::sqrt(3.0) ? 0.5 / std::sqrt(3.0) / scale : 0.0);
          const Vector r = zc * unit;
          const Matrix R = Matrix::Identity(d, d) - unit * unit.transpose() + r * r.transpose();
          return ConditionalMoments{f, f * r, f * R};
        };
      }
    }
  }
  return t;
}

} // namespace ksave

#endif // KSAVE_FIELDSIM_HPP
