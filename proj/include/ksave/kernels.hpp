#ifndef KSAVE_KERNELS_HPP
#define KSAVE_KERNELS_HPP

#include <boost/math/quadrature/gauss.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ksave/error.hpp"

namespace ksave {

/// Compact-support polynomial kernel: K(u) = p(u) for |u| <= support_radius, 0 outside.
/// poly_coeffs[j] multiplies u^j.
struct KernelSpec {
  std::string name;
  int order_k = 2;
  double support_radius = 1.0;
  std::vector<double> poly_coeffs;
  double lipschitz_bound = 0.0;

  bool operator==(const KernelSpec&) const = default;
};

namespace detail {

inline double horner(const std::vector<double>& c, double u) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * u + *it;
  return acc;
}

inline std::vector<double> derivative(const std::vector<double>& c) {
  std::vector<double> out;
  for (std::size_t j = 1; j < c.size(); ++j) out.push_back(static_cast<double>(j) * c[j]);
  return out;
}

// Certified upper bound on max |p'| over [-r, r]: grid maximum plus the worst
// excursion between grid points allowed by a bound on |p''|.
inline double lipschitz_certificate(const std::vector<double>& c, double r) {
  const auto d1 = derivative(c);
  const auto d2 = derivative(d1);
  double d2_bound = 0.0;
  for (std::size_t j = 0; j < d2.size(); ++j) d2_bound += std::abs(d2[j]) * std::pow(r, static_cast<double>(j));
  constexpr int cells = 20000;
  const double h = 2.0 * r / cells;
  double grid_max = 0.0;
  for (int i = 0; i <= cells; ++i) grid_max = std::max(grid_max, std::abs(horner(d1, -r + h * i)));
  return grid_max + 0.5 * h * d2_bound;
}

// k-th absolute moment of the Epanechnikov density on [-r, r]:
// int |u|^p (3/(4r)) (1 - u^2/r^2) du.
inline double epanechnikov_abs_moment(int p, double r) {
  return 1.5 * std::pow(r, p) * (1.0 / (p + 1) - 1.0 / (p + 3));
}

} // namespace detail

/// Value of the kernel at u; exactly 0 outside the support.
inline double kernel_eval(const KernelSpec& spec, double u) {
  if (!(std::abs(u) <= spec.support_radius)) return 0.0;
  return detail::horner(spec.poly_coeffs, u);
}

/// Build a kernel from explicit coefficients, deriving its Lipschitz certificate.
/// A polynomial that does not vanish at the support edge has a jump, so its bound is +inf.
inline KernelSpec make_kernel(std::string name, int order_k, double support_radius, std::vector<double> coeffs) {
  detail::require(support_radius > 0.0, "kernel support radius must be positive");
  KernelSpec spec{std::move(name), order_k, support_radius, std::move(coeffs), 0.0};
  double scale = 0.0;
  for (double c : spec.poly_coeffs) scale = std::max(scale, std::abs(c));
  const double edge = std::max(std::abs(detail::horner(spec.poly_coeffs, support_radius)),
                               std::abs(detail::horner(spec.poly_coeffs, -support_radius)));
  spec.lipschitz_bound = edge > 1e-12 * std::max(scale, 1.0)
                             ? std::numeric_limits<double>::infinity()
                             : detail::lipschitz_certificate(spec.poly_coeffs, support_radius);
  return spec;
}

namespace detail {

// Even-polynomial factor q (coefficients of u^0, u^2, ...) such that K = epanechnikov * q on
// [-r, r] satisfies int u^j K = delta_{j0} for j < k, plus int |u|^k K = abs_target when
// abs_target is given. The degree is raised until the system has full row rank.
inline Eigen::VectorXd correction_factor(int k, double r, std::optional<double> abs_target) {
  std::vector<int> powers;
  for (int j = 0; j < k; j += 2) powers.push_back(j);
  if (abs_target) powers.push_back(k);
  const int n_rows = static_cast<int>(powers.size());
  Eigen::VectorXd target = Eigen::VectorXd::Zero(n_rows);
  target(0) = 1.0;
  if (abs_target) target(n_rows - 1) = *abs_target;
  for (int extra = 0; extra <= 3; ++extra) {
    const int n_terms = n_rows + extra;
    Eigen::MatrixXd g(n_rows, n_terms);
    for (int i = 0; i < n_rows; ++i)
      for (int t = 0; t < n_terms; ++t) g(i, t) = epanechnikov_abs_moment(powers[i] + 2 * t, r);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(g);
    cod.setThreshold(1e-13);
    if (cod.rank() == n_rows) return cod.solve(target);
  }
  throw InvalidArgument("singular moment system for kernel order " + std::to_string(k));
}

inline double factor_abs_moment(const Eigen::VectorXd& q, int k, double r) {
  double m = 0.0;
  for (Eigen::Index t = 0; t < q.size(); ++t) m += q(t) * epanechnikov_abs_moment(k + 2 * static_cast<int>(t), r);
  return m;
}

} // namespace detail

/// Order-k kernel: the Epanechnikov density on [-support_radius, support_radius] times an
/// even polynomial correction, dilated so that int |u|^k K = 1.
///
/// The correction first takes the minimal-degree solution of int u^j K = delta_{j0}
/// (j < k). If its k-th absolute moment kappa is positive it is kept (k = 2 gives the plain
/// Epanechnikov density); otherwise (k = 3, 4) no dilation can normalise it, so the degree
/// is raised by one and int |u|^k K = |kappa| is imposed as an extra constraint.
///
/// Dilation makes the result independent of support_radius up to rounding; the returned
/// spec records the dilated radius.
inline KernelSpec build_order_k_kernel(int k, double support_radius = 1.0) {
  if (k < 2) throw InvalidArgument("kernel order must be at least 2");
  detail::require(support_radius > 0.0, "kernel support radius must be positive");
  const double r = support_radius;

  Eigen::VectorXd q = detail::correction_factor(k, r, std::nullopt);
  double kappa = detail::factor_abs_moment(q, k, r);
  if (!(kappa > 1e-12 * std::pow(r, k))) {
    kappa = std::abs(kappa);
    if (kappa <= 1e-12 * std::pow(r, k)) kappa = detail::epanechnikov_abs_moment(k, r);
    q = detail::correction_factor(k, r, kappa);
  }

  // p(u) = (3/(4r)) (1 - u^2/r^2) * sum_t q_t u^{2t}
  std::vector<double> p(2 * q.size() + 1, 0.0);
  const double c0 = 0.75 / r;
  for (Eigen::Index t = 0; t < q.size(); ++t) {
    p[2 * t] += c0 * q(t);
    p[2 * t + 2] -= c0 * q(t) / (r * r);
  }

  const double dilation = std::pow(kappa, -1.0 / k);
  std::vector<double> scaled(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) scaled[j] = p[j] / std::pow(dilation, static_cast<double>(j + 1));
  while (scaled.size() > 1 && scaled.back() == 0.0) scaled.pop_back();

  return make_kernel(k == 2 ? "epanechnikov" : "epanechnikov_order" + std::to_string(k), k, r * dilation,
                     std::move(scaled));
}

/// The nonnegative second-order kernel for practical runs, moment-normalised.
inline KernelSpec epanechnikov() { return build_order_k_kernel(2, 1.0); }

struct MomentReport {
  int order_k = 0;
  std::vector<double> moments;       // int u^j K, j = 0..k
  std::vector<double> targets;       // 1, 0, ..., 0 for j < k; NaN for j = k (unconstrained)
  std::vector<double> deviations;    // |moment - target| for j < k
  double abs_moment_k = 0.0;         // int |u|^k K
  double abs_moment_deviation = 0.0; // |int |u|^k K - 1|
  double max_difference_quotient = 0.0;
  bool moments_ok = false;
  bool abs_moment_ok = false;
  bool lipschitz_ok = false;
  bool support_ok = false;
  bool pass = false;
};

namespace detail {

// Composite 16-point Gauss-Legendre with >= 1024 nodes per unit length, split at 0 so
// that |u|^k is polynomial on each half.
template <typename F>
double integrate_on_support(F&& f, double r) {
  using Rule = boost::math::quadrature::gauss<double, 16>;
  const int panels = std::max(1, static_cast<int>(std::ceil(1024.0 * r / 16.0)));
  const double h = r / panels;
  double sum = 0.0;
  for (int i = 0; i < panels; ++i) {
    sum += Rule::integrate(f, -r + h * i, -r + h * (i + 1));
    sum += Rule::integrate(f, h * i, h * (i + 1));
  }
  return sum;
}

} // namespace detail

inline constexpr double kMomentTol = 1e-8;
inline constexpr double kAbsMomentTol = 1e-6;

/// Numerically certify the moment, support and Lipschitz properties of a kernel.
inline MomentReport kernel_moment_check(const KernelSpec& spec) {
  MomentReport rep;
  const int k = spec.order_k;
  const double r = spec.support_radius;
  rep.order_k = k;
  auto kern = [&](double u) { return kernel_eval(spec, u); };

  rep.moments_ok = true;
  for (int j = 0; j <= k; ++j) {
    const double m = detail::integrate_on_support([&](double u) { return std::pow(u, j) * kern(u); }, r);
    rep.moments.push_back(m);
    if (j < k) {
      const double target = j == 0 ? 1.0 : 0.0;
      rep.targets.push_back(target);
      rep.deviations.push_back(std::abs(m - target));
      if (!(std::abs(m - target) <= kMomentTol)) rep.moments_ok = false;
    } else {
      rep.targets.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  rep.abs_moment_k = detail::integrate_on_support([&](double u) { return std::pow(std::abs(u), k) * kern(u); }, r);
  rep.abs_moment_deviation = std::abs(rep.abs_moment_k - 1.0);
  rep.abs_moment_ok = rep.abs_moment_deviation <= kAbsMomentTol;

  // 10^4-point grid reaching past the support on both sides.
  constexpr int points = 10000;
  const double lo = -1.1 * r;
  const double h = 2.2 * r / (points - 1);
  double prev = kern(lo);
  for (int i = 1; i < points; ++i) {
    const double cur = kern(lo + h * i);
    rep.max_difference_quotient = std::max(rep.max_difference_quotient, std::abs(cur - prev) / h);
    prev = cur;
  }
  rep.lipschitz_ok = rep.max_difference_quotient <= spec.lipschitz_bound * (1.0 + 1e-6);

  const double outside = r * (1.0 + 1e-9);
  rep.support_ok = kern(outside) == 0.0 && kern(-outside) == 0.0 && kern(2.0 * r) == 0.0;

  rep.pass = rep.moments_ok && rep.abs_moment_ok && rep.lipschitz_ok && rep.support_ok;
  return rep;
}

} // namespace ksave

#endif // KSAVE_KERNELS_HPP
