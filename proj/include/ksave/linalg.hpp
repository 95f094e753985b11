#ifndef KSAVE_LINALG_HPP
#define KSAVE_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "ksave/error.hpp"

namespace ksave {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// n x d sample, one lattice site per row in row-major lattice order.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Symmetric eigendecomposition with eigenvalues sorted descending.
struct SymEigen {
  Vector values;
  Matrix vectors; // columns
};

inline SymEigen sym_eigen_descending(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success)
    throw EigendecompositionFailure("symmetric eigendecomposition did not converge");
  const auto d = a.rows();
  SymEigen out{Vector(d), Matrix(d, d)};
  for (Eigen::Index j = 0; j < d; ++j) {
    out.values(j) = solver.eigenvalues()(d - 1 - j);
    out.vectors.col(j) = solver.eigenvectors().col(d - 1 - j);
  }
  return out;
}

/// f(A) = V f(diag) V^T for symmetric A.
template <typename F>
Matrix sym_apply(const Matrix& a, F&& f) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success)
    throw EigendecompositionFailure("symmetric eigendecomposition did not converge");
  Vector mapped = solver.eigenvalues().unaryExpr(std::forward<F>(f));
  return solver.eigenvectors() * mapped.asDiagonal() * solver.eigenvectors().transpose();
}

inline Matrix sym_sqrt(const Matrix& a) {
  return sym_apply(a, [](double v) { return std::sqrt(std::max(v, 0.0)); });
}

inline Matrix sym_inv_sqrt(const Matrix& a) {
  return sym_apply(a, [](double v) { return 1.0 / std::sqrt(v); });
}

inline double max_abs_asymmetry(const Matrix& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

inline double min_sym_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

/// Shortest round-trippable text for a double (17 significant digits).
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace ksave

#endif // KSAVE_LINALG_HPP
