#ifndef KSAVE_ORACLE_HPP
#define KSAVE_ORACLE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ksave/error.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/kernels.hpp"
#include "ksave/save_core.hpp"

// Brute-force reference for the kernel SAVE estimator: straight double loops over every
// pair of sites, fixed summation order, no windowing and no threads.
namespace ksave::oracle {

inline constexpr std::int64_t kMaxReferenceSites = 4096;

struct ReferenceOutputs {
  std::vector<SmoothedSite> sites;
  SaveMatrices matrices;
  std::string provenance = "reference";
};

inline ReferenceOutputs reference_save_with(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel, double b,
                                            double e) {
  const std::int64_t n = y.size();
  const Eigen::Index d = z.cols();
  if (n == 0 || z.rows() != n) throw InvalidArgument("reference_save: empty or mismatched sample");
  if (n > kMaxReferenceSites) throw SampleTooLarge("reference_save is limited to 4096 sites");
  if (!(b > 0.0) || !(e > 0.0)) throw InvalidArgument("reference_save: bandwidths must be positive");

  const double nd = static_cast<double>(n);
  ReferenceOutputs out;
  out.sites.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double f = 0.0;
    std::vector<double> m(d, 0.0);
    std::vector<double> M(d * d, 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
      const double w = kernel_eval(kernel, (y(i) - y(j)) / b);
      f += w;
      for (Eigen::Index a = 0; a < d; ++a) {
        m[a] += w * z(j, a);
        for (Eigen::Index c = a; c < d; ++c) M[a * d + c] += w * (z(j, a) * z(j, c));
      }
    }
    SmoothedSite& s = out.sites[static_cast<std::size_t>(i)];
    s.f_hat = f / (nd * b);
    s.f_e = s.f_hat > e ? s.f_hat : e;
    s.m_hat.resize(d);
    s.r_hat.resize(d);
    s.M_hat.resize(d, d);
    s.R_hat.resize(d, d);
    s.C_hat.resize(d, d);
    for (Eigen::Index a = 0; a < d; ++a) {
      s.m_hat(a) = m[a] / (nd * b);
      s.r_hat(a) = s.m_hat(a) / s.f_e;
    }
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c) {
        s.M_hat(a, c) = s.M_hat(c, a) = M[a * d + c] / (nd * b);
        s.R_hat(a, c) = s.R_hat(c, a) = s.M_hat(a, c) / s.f_e;
      }
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c) s.C_hat(a, c) = s.C_hat(c, a) = s.R_hat(a, c) - s.r_hat(a) * s.r_hat(c);
  }

  SaveMatrices& mat = out.matrices;
  mat.Z_bar = Vector::Zero(d);
  for (std::int64_t i = 0; i < n; ++i)
    for (Eigen::Index a = 0; a < d; ++a) mat.Z_bar(a) += z(i, a);
  mat.Z_bar /= nd;

  mat.Psi_hat = Matrix::Zero(d, d);
  mat.Lambda_hat = Matrix::Zero(d, d);
  mat.Gamma_hat = Matrix::Zero(d, d);
  Matrix rr = Matrix::Zero(d, d);
  Matrix cc = Matrix::Zero(d, d);
  for (const SmoothedSite& s : out.sites)
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index c = a; c < d; ++c) {
        rr(a, c) += s.r_hat(a) * s.r_hat(c);
        double sq = 0.0;
        for (Eigen::Index t = 0; t < d; ++t) sq += s.C_hat(a, t) * s.C_hat(t, c);
        cc(a, c) += sq;
      }
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index c = a; c < d; ++c) {
      mat.Psi_hat(a, c) = mat.Psi_hat(c, a) = rr(a, c) / nd - mat.Z_bar(a) * mat.Z_bar(c);
      mat.Lambda_hat(a, c) = mat.Lambda_hat(c, a) = cc(a, c) / nd;
      mat.Gamma_hat(a, c) = mat.Gamma_hat(c, a) =
          (a == c ? -1.0 : 0.0) + 2.0 * mat.Psi_hat(a, c) + mat.Lambda_hat(a, c);
    }
  return out;
}

inline ReferenceOutputs reference_save(const SampleMatrix& z, const Vector& y, const KernelSpec& kernel,
                                       const BandwidthSchedule& schedule) {
  if (y.size() > kMaxReferenceSites) throw SampleTooLarge("reference_save is limited to 4096 sites");
  const double n = static_cast<double>(y.size());
  return reference_save_with(z, y, kernel, schedule.b_n(n), schedule.e_n(n));
}

/// ||Gamma_hat - Gamma||_F.
inline double finite_sample_gamma_error(const SaveMatrices& estimate, const PopulationTruth& truth) {
  const Matrix& gamma = truth.gamma();
  if (gamma.rows() != estimate.Gamma_hat.rows() || gamma.cols() != estimate.Gamma_hat.cols())
    throw InvalidArgument("finite_sample_gamma_error: dimension mismatch");
  return (estimate.Gamma_hat - gamma).norm();
}

/// Frobenius error of the estimate built from the dataset's oracle-whitened predictors.
inline double finite_sample_gamma_error(const FieldDataset& ds, const PopulationTruth& truth,
                                        const BandwidthSchedule& schedule, const KernelSpec& kernel) {
  if (!ds.Z_oracle) throw InvalidArgument("finite_sample_gamma_error: dataset has no oracle whitening");
  if (ds.Z_oracle->cols() != truth.d) throw InvalidArgument("finite_sample_gamma_error: dimension mismatch");
  return finite_sample_gamma_error(save_matrices(*ds.Z_oracle, ds.Y, kernel, schedule), truth);
}

} // namespace ksave::oracle

#endif // KSAVE_ORACLE_HPP
