#ifndef KSAVE_SAVE_CORE_HPP
#define KSAVE_SAVE_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "ksave/error.hpp"
#include "ksave/kernels.hpp"
#include "ksave/linalg.hpp"

namespace ksave {

/// b_n = n^{-c1}, e_n = n^{-c2}.
struct BandwidthSchedule {
  double c1 = 0.35;
  double c2 = 0.05;
  int k = 3;

  double b_n(double n_hat) const { return std::pow(n_hat, -c1); }
  double e_n(double n_hat) const { return std::pow(n_hat, -c2); }
  bool operator==(const BandwidthSchedule&) const = default;
};

struct SmoothedSite {
  double f_hat = 0.0;
  double f_e = 0.0;
  Vector m_hat;
  Matrix M_hat;
  Vector r_hat;
  Matrix R_hat;
  Matrix C_hat;
};

struct SaveMatrices {
  Matrix Psi_hat;
  Matrix Lambda_hat;
  Matrix Gamma_hat;
  Vector Z_bar;
};

/// Per-site smoothed quantities together with the assembled matrices.
struct SaveEstimate {
  double b = 0.0;
  double e = 0.0;
  std::vector<SmoothedSite> sites;
  SaveMatrices matrices;
};

struct SaveOptions {
  int threads = 1;
  bool keep_sites = true;
};

namespace detail {

inline void check_sample(const SampleMatrix& z, const Vector& y) {
  if (z.rows() == 0 || y.size() == 0) throw InvalidArgument("sample must be nonempty");
  if (z.rows() != y.size()) throw InvalidArgument("Z and Y sample lengths differ");
}

inline void check_bandwidths(double b, double e) {
  if (!(b > 0.0)) throw InvalidArgument("bandwidth b must be positive");
  if (!(e > 0.0)) throw InvalidArgument("truncation level e must be positive");
}

// Raw kernel-weighted sums, accumulated term by term in the order the caller visits.
struct SiteSums {
  double f = 0.0;
  Vector m;
  Matrix M; // upper triangle only until finished

  explicit SiteSums(Eigen::Index d) : m(Vector::Zero(d)), M(Matrix::Zero(d, d)) {}

  void reset() {
    f = 0.0;
    m.setZero();
    M.setZero();
  }

  // zz holds the upper-triangle products z_a * z_c, row by row.
  void add(double w, const double* z, const double* zz) {
    const auto d = m.size();
    f += w;
    for (Eigen::Index a = 0, p = 0; a < d; ++a) {
      m(a) += w * z[a];
      for (Eigen::Index c = a; c < d; ++c, ++p) M(a, c) += w * zz[p];
    }
  }

  SmoothedSite finish(double n, double b, double e) const {
    const auto d = m.size();
    SmoothedSite s;
    s.f_hat = f / (n * b);
    s.m_hat = m / (n * b);
    s.M_hat = Matrix(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c) s.M_hat(a, c) = s.M_hat(c, a) = M(a, c) / (n * b);
    s.f_e = std::max(e, s.f_hat);
    s.r_hat = s.m_hat / s.f_e;
    s.R_hat = s.M_hat / s.f_e;
    s.C_hat = Matrix(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c)
        s.C_hat(a, c) = s.C_hat(c, a) = s.R_hat(a, c) - s.r_hat(a) * s.r_hat(c);
    return s;
  }
};

inline std::vector<double> upper_products(const SampleMatrix& z) {
  const auto d = z.cols();
  const auto width = d * (d + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(z.rows() * width));
  for (Eigen::Index j = 0; j < z.rows(); ++j) {
    double* row = out.data() + j * width;
    for (Eigen::Index a = 0, p = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c, ++p) row[p] = z(j, a) * z(j, c);
  }
  return out;
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Run body(begin, end) over [0, n) split into contiguous chunks.
template <typename Body>
void parallel_chunks(std::int64_t n, int threads, Body&& body) {
  threads = static_cast<int>(std::min<std::int64_t>(std::max(threads, 1), std::max<std::int64_t>(n, 1)));
  if (threads == 1) {
    body(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    const std::int64_t lo = n * t / threads;
    const std::int64_t hi = n * (t + 1) / threads;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

} // namespace detail

/// Kernel-smoothed density, first and second conditional moments of Z at y_eval. Every
/// sample term is included, the evaluation site's own observation too.
inline SmoothedSite smooth_at(const SampleMatrix& z, const Vector& y, double y_eval, const KernelSpec& kernel,
                              double b, double e) {
  detail::check_sample(z, y);
  detail::check_bandwidths(b, e);
  const auto d = z.cols();
  detail::SiteSums sums(d);
  std::vector<double> zz(static_cast<std::size_t>(d * (d + 1) / 2));
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    for (Eigen::Index a = 0, p = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c, ++p) zz[p] = z(j, a) * z(j, c);
    sums.add(kernel_eval(kernel, (y_eval - y(j)) / b), z.row(j).data(), zz.data());
  }
  return sums.finish(static_cast<double>(y.size()), b, e);
}

/// Psi_hat, Lambda_hat and Gamma_hat = -I + 2 Psi_hat + Lambda_hat from the per-site
/// smoothed quantities, summed in site order.
inline SaveMatrices assemble_matrices(const SampleMatrix& z, const std::vector<SmoothedSite>& sites) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  const auto d = z.cols();
  SaveMatrices out;
  out.Z_bar = Vector::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index a = 0; a < d; ++a) out.Z_bar(a) += z(i, a);
  out.Z_bar /= static_cast<double>(n);

  Matrix rr = Matrix::Zero(d, d);
  Matrix cc = Matrix::Zero(d, d);
  for (const auto& s : sites) {
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c) {
        rr(a, c) += s.r_hat(a) * s.r_hat(c);
        double sq = 0.0;
        for (Eigen::Index t = 0; t < d; ++t) sq += s.C_hat(a, t) * s.C_hat(t, c);
        cc(a, c) += sq;
      }
  }
  out.Psi_hat = Matrix(d, d);
  out.Lambda_hat = Matrix(d, d);
  out.Gamma_hat = Matrix(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index c = a; c < d; ++c) {
      const double psi = rr(a, c) / static_cast<double>(n) - out.Z_bar(a) * out.Z_bar(c);
      const double lam = cc(a, c) / static_cast<double>(n);
      const double gam = (a == c ? -1.0 : 0.0) + 2.0 * psi + lam;
      out.Psi_hat(a, c) = out.Psi_hat(c, a) = psi;
      out.Lambda_hat(a, c) = out.Lambda_hat(c, a) = lam;
      out.Gamma_hat(a, c) = out.Gamma_hat(c, a) = gam;
    }
  return out;
}

/// Kernel SAVE estimate with explicit bandwidth b and truncation level e.
///
/// Only observations with |y - Y_j| <= b * support_radius carry weight; the scan skips the
/// others with a range test and keeps site order, so it reproduces the full double loop
/// exactly (the skipped terms are exact zeros). Sites are independent, so the result does
/// not depend on the thread count.
inline SaveEstimate save_estimate_with(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel, double b,
                                       double e, const SaveOptions& opt = {}) {
  detail::check_sample(z, y);
  detail::check_bandwidths(b, e);
  const auto n = static_cast<std::int64_t>(y.size());
  if (n < 2) throw InvalidArgument("save estimate needs at least two observations");
  if (z.cols() < 2) throw InvalidArgument("save estimate needs d >= 2");

  const auto d = z.cols();
  const auto width = d * (d + 1) / 2;
  const std::vector<double> zz = detail::upper_products(z);
  const double reach = b * kernel.support_radius * (1.0 + 1e-9);
  SaveEstimate est;
  est.b = b;
  est.e = e;
  est.sites.resize(static_cast<std::size_t>(n));

  detail::parallel_chunks(n, detail::resolve_threads(opt.threads), [&](std::int64_t lo, std::int64_t hi) {
    detail::SiteSums sums(d);
    for (std::int64_t i = lo; i < hi; ++i) {
      const double yi = y(i);
      sums.reset();
      for (std::int64_t j = 0; j < n; ++j) {
        if (std::abs(yi - y(j)) > reach) continue;
        sums.add(kernel_eval(kernel, (yi - y(j)) / b), z.row(j).data(), zz.data() + j * width);
      }
      est.sites[static_cast<std::size_t>(i)] = sums.finish(static_cast<double>(n), b, e);
    }
  });

  est.matrices = assemble_matrices(z, est.sites);
  if (!opt.keep_sites) est.sites.clear();
  return est;
}

inline SaveEstimate save_estimate(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel,
                                  const BandwidthSchedule& schedule, const SaveOptions& opt = {}) {
  const double n = static_cast<double>(y.size());
  if (y.size() < 2) throw InvalidArgument("save estimate needs at least two observations");
  return save_estimate_with(z, y, kernel, schedule.b_n(n), schedule.e_n(n), opt);
}

inline SaveMatrices save_matrices(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel,
                                  const BandwidthSchedule& schedule, const SaveOptions& opt = {}) {
  SaveOptions o = opt;
  o.keep_sites = false;
  return save_estimate(z, y, kernel, schedule, o).matrices;
}

struct ScheduleCheck {
  std::string name;
  bool pass = false;
  double value = 0.0; // the quantity being bounded
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

struct ScheduleReport {
  int k = 0;
  int L = 0;
  double theta = 0.0;
  double theta1 = 0.0;
  std::vector<ScheduleCheck> checks;
  /// Whether some (c1, c2) satisfies every check for this (k, L, theta).
  bool feasible_region_nonempty = false;
  bool pass = false;
};

/// Checks the bandwidth exponents against the admissibility inequalities and the two
/// rate side conditions n b^3 / log n -> 0 (c1 > 1/3) and n b^theta1 / log n -> inf
/// (c1 < 1/theta1), theta1 = (4L + theta) / (theta - 2L).
inline ScheduleReport validate_schedule(const BandwidthSchedule& s, int L, double theta) {
  ScheduleReport rep;
  rep.k = s.k;
  rep.L = L;
  rep.theta = theta;
  const double k = s.k;
  auto add = [&](std::string name, double value, double lower, double upper) {
    rep.checks.push_back({std::move(name), value > lower && value < upper, value, lower, upper});
  };
  const double inf = std::numeric_limits<double>::infinity();
  add("k >= 2", k, 1.5, inf);
  add("L >= 1", L, 0.5, inf);
  add("theta > 2L", theta, 2.0 * L, inf);
  rep.theta1 = theta > 2.0 * L ? (4.0 * L + theta) / (theta - 2.0 * L) : inf;
  add("c1 > 0", s.c1, 0.0, inf);
  add("0 < c2 < (2k-1)/(4(2k+1))", s.c2, 0.0, (2.0 * k - 1.0) / (4.0 * (2.0 * k + 1.0)));
  add("c2/k + 1/(4k) < c1 < 1/2 - 2 c2", s.c1, s.c2 / k + 1.0 / (4.0 * k), 0.5 - 2.0 * s.c2);
  add("c1 > 1/3 (n b^3 / log n -> 0)", s.c1, 1.0 / 3.0, inf);
  add("c1 < 1/theta1 (n b^theta1 / log n -> inf)", s.c1, -inf, 1.0 / rep.theta1);

  // As c2 -> 0+ the lower bounds on c1 decrease and the upper bounds increase, so the
  // region is nonempty iff the c2 -> 0 limits leave an open interval.
  const double lo = std::max(1.0 / (4.0 * k), 1.0 / 3.0);
  const double hi = std::min(0.5, 1.0 / rep.theta1);
  rep.feasible_region_nonempty = s.k >= 2 && L >= 1 && theta > 2.0 * L && lo < hi;

  rep.pass = std::all_of(rep.checks.begin(), rep.checks.end(), [](const auto& c) { return c.pass; });
  return rep;
}

/// Uniform-rate scale b^k + (1/b) sqrt(log n / n).
inline double phi_n(const BandwidthSchedule& s, double n_hat) {
  if (n_hat < 2) throw InvalidArgument("phi_n needs n_hat >= 2");
  const double b = s.b_n(n_hat);
  return std::pow(b, s.k) + std::sqrt(std::log(n_hat) / n_hat) / b;
}

} // namespace ksave

#endif // KSAVE_SAVE_CORE_HPP
