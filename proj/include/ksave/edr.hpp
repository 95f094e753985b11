#ifndef KSAVE_EDR_HPP
#define KSAVE_EDR_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ksave/error.hpp"
#include "ksave/linalg.hpp"
#include "ksave/save_core.hpp"

namespace ksave {

struct WhiteningResult {
  Vector X_bar;
  Matrix Sigma_hat;
  Matrix Sigma_inv_sqrt;
  SampleMatrix Z_hat;
};

namespace detail {

inline SampleMatrix apply_whitening(const SampleMatrix& x, const Vector& centre, const Matrix& inv_sqrt) {
  SampleMatrix z = x.rowwise() - centre.transpose();
  return z * inv_sqrt; // inv_sqrt is symmetric
}

} // namespace detail

/// Empirical whitening Z_i = Sigma_hat^{-1/2} (X_i - X_bar), Sigma_hat with divisor n and
/// its inverse square root taken through the symmetric eigendecomposition.
inline WhiteningResult whiten(const SampleMatrix& x) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n <= d) throw InvalidArgument("whitening needs more observations than dimensions");
  WhiteningResult w;
  w.X_bar = x.colwise().mean().transpose();
  const SampleMatrix centred = x.rowwise() - w.X_bar.transpose();
  w.Sigma_hat = (centred.transpose() * centred) / static_cast<double>(n);
  w.Sigma_hat = 0.5 * (w.Sigma_hat + w.Sigma_hat.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> solver(w.Sigma_hat);
  if (solver.info() != Eigen::Success) throw EigendecompositionFailure("covariance eigendecomposition failed");
  const Vector ev = solver.eigenvalues();
  if (!(ev.minCoeff() >= 1e-10 * ev.maxCoeff()) || !(ev.maxCoeff() > 0.0))
    throw NearSingularCovariance("sample covariance is numerically singular");
  w.Sigma_inv_sqrt = solver.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                     solver.eigenvectors().transpose();
  w.Z_hat = detail::apply_whitening(x, w.X_bar, w.Sigma_inv_sqrt);
  return w;
}

/// Whitening with the model's exact mean and covariance.
inline WhiteningResult oracle_whiten(const SampleMatrix& x, const Vector& mean, const Matrix& sigma) {
  detail::require(mean.size() == x.cols() && sigma.rows() == x.cols(), "oracle whitening dimension mismatch");
  WhiteningResult w;
  w.X_bar = mean;
  w.Sigma_hat = sigma;
  w.Sigma_inv_sqrt = sym_inv_sqrt(sigma);
  w.Z_hat = detail::apply_whitening(x, mean, w.Sigma_inv_sqrt);
  return w;
}

struct EdrEstimate {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns tau_hat_j, orthonormal
  Matrix beta_hat;      // d x N, columns Sigma_hat^{-1/2} tau_hat_j
  int N_used = 0;
  std::vector<std::string> warnings;
};

inline constexpr double kEigengapWarning = 1e-8;

/// Spectral extraction of the EDR directions from Gamma_hat. Each eigenvector is signed so
/// that its largest-magnitude component is positive.
inline EdrEstimate edr_directions(const SaveMatrices& m, const WhiteningResult& w, int N) {
  const auto d = m.Gamma_hat.rows();
  if (N < 1 || N >= d) throw InvalidArgument("edr_directions needs 1 <= N < d");
  if (max_abs_asymmetry(m.Gamma_hat) > 1e-10) throw InvalidArgument("Gamma_hat must be symmetric");
  detail::require(w.Sigma_inv_sqrt.rows() == d, "whitening dimension does not match Gamma_hat");

  SymEigen eig = sym_eigen_descending(m.Gamma_hat);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index at;
    eig.vectors.col(j).cwiseAbs().maxCoeff(&at);
    if (eig.vectors(at, j) < 0.0) eig.vectors.col(j) = -eig.vectors.col(j);
  }
  EdrEstimate out;
  out.eigenvalues = eig.values;
  out.eigenvectors = eig.vectors;
  out.N_used = N;
  out.beta_hat = w.Sigma_inv_sqrt * eig.vectors.leftCols(N);
  const double gap = eig.values(N - 1) - eig.values(N);
  if (gap < kEigengapWarning)
    out.warnings.push_back("eigengap collapse: lambda_N - lambda_{N+1} = " + format_g17(gap));
  return out;
}

/// ||P_A - P_B||_F / sqrt(2m) for the orthogonal projectors onto the column spans.
inline double subspace_distance(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "subspace_distance needs equal shapes");
  const auto m = a.cols();
  detail::require(m >= 1, "subspace_distance needs at least one column");
  auto projector = [m](const Matrix& x) {
    Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU);
    const Vector& s = svd.singularValues();
    if (!(s(m - 1) > 1e-12 * s(0))) throw RankDeficient("subspace_distance: matrix is rank deficient");
    const Matrix u = svd.matrixU().leftCols(m);
    return Matrix(u * u.transpose());
  };
  const double dist = (projector(a) - projector(b)).norm() / std::sqrt(2.0 * static_cast<double>(m));
  return std::min(dist, 1.0);
}

/// Per-column ||beta_hat_j - (+/-) target_j||, with the sign chosen to minimise the error.
inline std::vector<double> aligned_vector_errors(const Matrix& beta_hat, const Matrix& targets) {
  detail::require(beta_hat.rows() == targets.rows() && beta_hat.cols() == targets.cols(),
                  "aligned_vector_errors needs equal shapes");
  std::vector<double> out;
  for (Eigen::Index j = 0; j < beta_hat.cols(); ++j)
    out.push_back(std::min((beta_hat.col(j) - targets.col(j)).norm(), (beta_hat.col(j) + targets.col(j)).norm()));
  return out;
}

struct SupNormReport {
  double sup_f = 0.0;
  double sup_m = 0.0; // Euclidean norm
  double sup_M = 0.0; // spectral norm
};

/// Sup over the grid of |f_hat - f|, ||m_hat - m|| and ||M_hat - M||. `estimate(y)` must return
/// something with f_hat, m_hat, M_hat members and `truth(y)` a ConditionalMoments-like value.
template <typename Estimate, typename Truth>
SupNormReport supnorm_errors(std::span<const double> grid, Estimate&& estimate, Truth&& truth) {
  if (grid.empty()) throw InvalidArgument("supnorm_errors needs a nonempty grid");
  SupNormReport rep;
  for (double y : grid) {
    const auto est = estimate(y);
    const auto tr = truth(y);
    rep.sup_f = std::max(rep.sup_f, std::abs(est.f_hat - tr.f));
    rep.sup_m = std::max(rep.sup_m, (est.m_hat - tr.m).norm());
    rep.sup_M = std::max(rep.sup_M, spectral_norm(est.M_hat - tr.M));
  }
  return rep;
}

/// Sup-norm errors of the smoothed estimates built from (z, y) with bandwidth b.
template <typename Truth>
SupNormReport supnorm_errors(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel, double b,
                             std::span<const double> grid, Truth&& truth) {
  return supnorm_errors(
      grid, [&](double g) { return smooth_at(z, y, g, kernel, b, 1.0); }, std::forward<Truth>(truth));
}

} // namespace ksave

#endif // KSAVE_EDR_HPP
