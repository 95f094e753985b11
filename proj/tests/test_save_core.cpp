#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "ksave/edr.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/oracle.hpp"
#include "ksave/save_core.hpp"

namespace {

using namespace ksave;

double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

struct Sample {
  SampleMatrix z;
  Vector y;
};

Sample quadratic_sample(int side, std::uint64_t seed, int r = 0) {
  const ModelSpec m = preset_model("quadratic", r);
  const FieldDataset ds = simulate_field(m, square_lattice(side), seed);
  return {*ds.Z_oracle, ds.Y};
}

void expect_matrix_invariants(const SaveMatrices& m) {
  const auto d = m.Gamma_hat.rows();
  const Matrix I = Matrix::Identity(d, d);
  EXPECT_LE((m.Gamma_hat + I - 2.0 * m.Psi_hat - m.Lambda_hat).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(max_abs_asymmetry(m.Gamma_hat), 1e-12);
  EXPECT_LE(max_abs_asymmetry(m.Psi_hat), 1e-12);
  EXPECT_LE(max_abs_asymmetry(m.Lambda_hat), 1e-12);
  EXPECT_GE(min_sym_eigenvalue(m.Lambda_hat), -1e-10);
  EXPECT_GE(min_sym_eigenvalue(m.Psi_hat + m.Z_bar * m.Z_bar.transpose()), -1e-10);
}

TEST(Schedule, BandwidthsPositiveAndDecreasing) {
  const BandwidthSchedule s;
  double prev_b = 2.0, prev_e = 2.0;
  for (double n = 2; n < 1e7; n *= 1.7) {
    EXPECT_GT(s.b_n(n), 0.0);
    EXPECT_GT(s.e_n(n), 0.0);
    EXPECT_LT(s.b_n(n), prev_b);
    EXPECT_LT(s.e_n(n), prev_e);
    prev_b = s.b_n(n);
    prev_e = s.e_n(n);
  }
}

TEST(SmoothAt, SingleObservation) {
  const KernelSpec K = build_order_k_kernel(3);
  SampleMatrix z(1, 3);
  z << 0.5, -1.0, 2.0;
  Vector y(1);
  y << 0.7;
  const double b = 0.3;
  const SmoothedSite s = smooth_at(z, y, 0.7, K, b, 1e-3);
  const double k0 = kernel_eval(K, 0.0);
  EXPECT_DOUBLE_EQ(s.f_hat, k0 / b);
  const Vector zz = z.row(0).transpose();
  EXPECT_LE((s.m_hat - k0 * zz / b).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((s.M_hat - k0 * zz * zz.transpose() / b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SmoothAt, FarFromEverySample) {
  const KernelSpec K = epanechnikov();
  const Sample smp = quadratic_sample(8, 1);
  const double b = 0.1, e = 0.25;
  const double far = smp.y.maxCoeff() + 2.0 * b * K.support_radius;
  const SmoothedSite s = smooth_at(smp.z, smp.y, far, K, b, e);
  EXPECT_EQ(s.f_hat, 0.0);
  EXPECT_EQ(s.f_e, e);
  EXPECT_EQ(s.r_hat.norm(), 0.0);
  EXPECT_EQ(s.C_hat.norm(), 0.0);
}

TEST(SmoothAt, MatchesReferenceAtEverySite) {
  const KernelSpec K = epanechnikov();
  const Sample smp = quadratic_sample(8, 4);
  const double n = static_cast<double>(smp.y.size());
  BandwidthSchedule s;
  s.k = 2;
  const auto ref = oracle::reference_save(smp.z, smp.y, K, s);
  for (Eigen::Index i = 0; i < smp.y.size(); ++i) {
    const SmoothedSite site = smooth_at(smp.z, smp.y, smp.y(i), K, s.b_n(n), s.e_n(n));
    const SmoothedSite& r = ref.sites[static_cast<std::size_t>(i)];
    EXPECT_LE(std::abs(site.f_hat - r.f_hat), 1e-10 * std::max(1.0, std::abs(r.f_hat)));
    EXPECT_LE(rel_diff(site.m_hat, r.m_hat), 1e-10);
    EXPECT_LE(rel_diff(site.M_hat, r.M_hat), 1e-10);
    EXPECT_LE(rel_diff(site.C_hat, r.C_hat), 1e-10);
  }
}

TEST(SmoothAt, RejectsBadInput) {
  const KernelSpec K = epanechnikov();
  const Sample smp = quadratic_sample(8, 1);
  EXPECT_THROW(smooth_at(smp.z, smp.y, 0.0, K, 0.0, 0.1), InvalidArgument);
  EXPECT_THROW(smooth_at(smp.z, smp.y, 0.0, K, 0.1, -1.0), InvalidArgument);
  EXPECT_THROW(smooth_at(smp.z, Vector(smp.y.head(10)), 0.0, K, 0.1, 0.1), InvalidArgument);
  EXPECT_THROW(smooth_at(SampleMatrix(0, 3), Vector(0), 0.0, K, 0.1, 0.1), InvalidArgument);
}

TEST(SaveMatrices, ZeroFieldGivesMinusIdentity) {
  const KernelSpec K = build_order_k_kernel(3);
  const SampleMatrix z = SampleMatrix::Zero(50, 4);
  Vector y = Vector::LinSpaced(50, -1.0, 1.0);
  const SaveMatrices m = save_matrices(z, y, K, BandwidthSchedule{});
  EXPECT_EQ(m.Psi_hat.norm(), 0.0);
  EXPECT_EQ(m.Lambda_hat.norm(), 0.0);
  EXPECT_EQ((m.Gamma_hat + Matrix::Identity(4, 4)).norm(), 0.0);
}

TEST(SaveMatrices, SiteInvariantsAndMatrixIdentities) {
  for (int k : {2, 3}) {
    const KernelSpec K = k == 2 ? epanechnikov() : build_order_k_kernel(3);
    BandwidthSchedule s;
    s.k = k;
    for (const char* preset : {"linear", "quadratic", "two_index", "independent_gaussian"}) {
      const FieldDataset ds = simulate_field(preset_model(preset, 1), square_lattice(24), 3);
      const SaveEstimate est = save_estimate(*ds.Z_oracle, ds.Y, K, s);
      for (const auto& site : est.sites) {
        EXPECT_GE(site.f_e, est.e);
        EXPECT_EQ(site.f_e, std::max(est.e, site.f_hat));
        EXPECT_LE((site.r_hat - site.m_hat / site.f_e).cwiseAbs().maxCoeff(), 1e-15 * (1.0 + site.r_hat.norm()));
        EXPECT_LE((site.R_hat - site.M_hat / site.f_e).cwiseAbs().maxCoeff(), 1e-15 * (1.0 + site.R_hat.norm()));
        EXPECT_LE(max_abs_asymmetry(site.C_hat), 1e-12);
      }
      expect_matrix_invariants(est.matrices);
    }
  }
}

TEST(SaveMatrices, PermutationInvariance) {
  const KernelSpec K = build_order_k_kernel(3);
  const Sample smp = quadratic_sample(24, 8, 1);
  const SaveMatrices base = save_matrices(smp.z, smp.y, K, BandwidthSchedule{});
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(smp.y.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  SampleMatrix z2(smp.z.rows(), smp.z.cols());
  Vector y2(smp.y.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    z2.row(static_cast<Eigen::Index>(i)) = smp.z.row(perm[i]);
    y2(static_cast<Eigen::Index>(i)) = smp.y(perm[i]);
  }
  const SaveMatrices shuffled = save_matrices(z2, y2, K, BandwidthSchedule{});
  EXPECT_LE(rel_diff(base.Gamma_hat, shuffled.Gamma_hat), 1e-10);
  EXPECT_LE(rel_diff(base.Psi_hat, shuffled.Psi_hat), 1e-10);
  EXPECT_LE(rel_diff(base.Lambda_hat, shuffled.Lambda_hat), 1e-10);
}

TEST(SaveMatrices, ThreadCountDoesNotChangeResult) {
  const KernelSpec K = build_order_k_kernel(3);
  const Sample smp = quadratic_sample(32, 2);
  SaveOptions one, many;
  many.threads = 4;
  const SaveEstimate a = save_estimate(smp.z, smp.y, K, BandwidthSchedule{}, one);
  const SaveEstimate b = save_estimate(smp.z, smp.y, K, BandwidthSchedule{}, many);
  EXPECT_TRUE((a.matrices.Gamma_hat.array() == b.matrices.Gamma_hat.array()).all());
  for (std::size_t i = 0; i < a.sites.size(); ++i) EXPECT_EQ(a.sites[i].f_hat, b.sites[i].f_hat);
}

TEST(SaveMatrices, EightByEightIsBitIdenticalToReference) {
  for (const char* preset : {"linear", "quadratic", "two_index", "independent_gaussian"}) {
    for (int k : {2, 3}) {
      const KernelSpec K = k == 2 ? epanechnikov() : build_order_k_kernel(3);
      BandwidthSchedule s;
      s.k = k;
      const FieldDataset ds = simulate_field(preset_model(preset, 1), square_lattice(8), 21);
      const SaveEstimate est = save_estimate(*ds.Z_oracle, ds.Y, K, s);
      const auto ref = oracle::reference_save(*ds.Z_oracle, ds.Y, K, s);
      EXPECT_TRUE((est.matrices.Gamma_hat.array() == ref.matrices.Gamma_hat.array()).all()) << preset << k;
      EXPECT_TRUE((est.matrices.Psi_hat.array() == ref.matrices.Psi_hat.array()).all()) << preset << k;
      EXPECT_TRUE((est.matrices.Lambda_hat.array() == ref.matrices.Lambda_hat.array()).all()) << preset << k;
      for (std::size_t i = 0; i < est.sites.size(); ++i) {
        EXPECT_EQ(est.sites[i].f_hat, ref.sites[i].f_hat);
        EXPECT_TRUE((est.sites[i].C_hat.array() == ref.sites[i].C_hat.array()).all());
      }
    }
  }
}

TEST(SaveMatrices, RejectsTooSmall) {
  const KernelSpec K = epanechnikov();
  EXPECT_THROW(save_matrices(SampleMatrix::Zero(1, 3), Vector::Zero(1), K, BandwidthSchedule{}), InvalidArgument);
  EXPECT_THROW(save_matrices(SampleMatrix::Zero(5, 1), Vector::Zero(5), K, BandwidthSchedule{}), InvalidArgument);
}

const ScheduleCheck& find_check(const ScheduleReport& r, const std::string& prefix) {
  for (const auto& c : r.checks)
    if (c.name.rfind(prefix, 0) == 0) return c;
  throw std::runtime_error("no check " + prefix);
}

TEST(ValidateSchedule, DefaultPassesEveryCondition) {
  const ScheduleReport rep = validate_schedule(BandwidthSchedule{}, 2, 20.0);
  EXPECT_TRUE(rep.pass);
  EXPECT_TRUE(rep.feasible_region_nonempty);
  for (const auto& c : rep.checks) EXPECT_TRUE(c.pass) << c.name;
  // Direct arithmetic: theta1 = (4L + theta) / (theta - 2L) = 28 / 16.
  EXPECT_DOUBLE_EQ(rep.theta1, 28.0 / 16.0);
  EXPECT_DOUBLE_EQ(find_check(rep, "0 < c2").upper, 5.0 / 28.0);
  EXPECT_DOUBLE_EQ(find_check(rep, "c2/k").lower, 0.05 / 3.0 + 1.0 / 12.0);
  EXPECT_DOUBLE_EQ(find_check(rep, "c2/k").upper, 0.4);
  EXPECT_DOUBLE_EQ(find_check(rep, "c1 < 1/theta1").upper, 16.0 / 28.0);
  EXPECT_DOUBLE_EQ(find_check(rep, "c1 > 1/3").lower, 1.0 / 3.0);
}

TEST(ValidateSchedule, LargeC2Fails) {
  BandwidthSchedule s;
  s.c2 = 0.25;
  const ScheduleReport rep = validate_schedule(s, 2, 20.0);
  EXPECT_FALSE(rep.pass);
  EXPECT_FALSE(find_check(rep, "0 < c2").pass);
}

TEST(ValidateSchedule, HalfC1Fails) {
  for (double c2 : {0.01, 0.05, 0.1}) {
    BandwidthSchedule s;
    s.c1 = 0.5;
    s.c2 = c2;
    const ScheduleReport rep = validate_schedule(s, 2, 20.0);
    EXPECT_FALSE(rep.pass);
    EXPECT_FALSE(find_check(rep, "c2/k").pass);
  }
}

TEST(ValidateSchedule, ThetaBelowTwoLFails) {
  const ScheduleReport rep = validate_schedule(BandwidthSchedule{}, 2, 3.0);
  EXPECT_FALSE(rep.pass);
  EXPECT_FALSE(rep.feasible_region_nonempty);
}

TEST(PhiN, UnitBandwidthLimit) {
  BandwidthSchedule s;
  s.c1 = 1e-15;
  for (double n : {10.0, 1000.0, 1e6}) EXPECT_NEAR(phi_n(s, n), 1.0 + std::sqrt(std::log(n) / n), 1e-12);
}

TEST(PhiN, MatchesHighPrecisionEvaluation) {
  using boost::multiprecision::cpp_dec_float_50;
  const cpp_dec_float_50 n = 4096;
  const cpp_dec_float_50 b = pow(n, cpp_dec_float_50(-35) / 100);
  const cpp_dec_float_50 expected = b * b * b + sqrt(log(n) / n) / b;
  const double got = phi_n(BandwidthSchedule{}, 4096.0);
  EXPECT_NEAR(got, expected.convert_to<double>(), 1e-15 * got);
  EXPECT_THROW(phi_n(BandwidthSchedule{}, 1.0), InvalidArgument);
}

TEST(PhiN, DecreasesOverDeskRange) {
  const BandwidthSchedule s;
  double prev_phi = std::numeric_limits<double>::infinity();
  double prev_ratio = std::numeric_limits<double>::infinity();
  for (int p = 10; p <= 20; ++p) {
    const double n = std::ldexp(1.0, p);
    const double phi = phi_n(s, n);
    EXPECT_LT(phi, prev_phi) << p;
    EXPECT_LT(phi / s.e_n(n), prev_ratio) << p;
    prev_phi = phi;
    prev_ratio = phi / s.e_n(n);
  }
}

TEST(PhiN, RootNScaledRatioGrows) {
  // sqrt(n) phi_n / e_n behaves like n^(c1 + c2) sqrt(log n) and grows on 2^10..2^20.
  const BandwidthSchedule s;
  double prev = 0.0;
  for (int p = 10; p <= 20; ++p) {
    const double n = std::ldexp(1.0, p);
    const double v = std::sqrt(n) * phi_n(s, n) / s.e_n(n);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

} // namespace
