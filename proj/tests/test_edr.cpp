#include <gtest/gtest.h>

#include <random>

#include "ksave/edr.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/save_core.hpp"

namespace {

using namespace ksave;

SampleMatrix random_sample(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  SampleMatrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) x(i, c) = g(rng);
  return x;
}

// Centred sample whose divisor-n covariance is exactly diag(scales^2) up to rounding.
SampleMatrix sample_with_covariance(int n, const Vector& scales, std::uint64_t seed) {
  const int d = static_cast<int>(scales.size());
  SampleMatrix x = random_sample(n, d, seed);
  x = x.rowwise() - x.colwise().mean();
  // The thin Q spans the centred columns, so its columns are orthonormal and centred.
  const Eigen::HouseholderQR<Matrix> qr{Matrix(x)};
  const Matrix q = qr.householderQ() * Matrix::Identity(n, d);
  return q * (std::sqrt(static_cast<double>(n)) * scales).asDiagonal();
}

Matrix random_invertible(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix a(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) a(i, j) = u(rng);
  a += 2.0 * Matrix::Identity(d, d);
  return a;
}

TEST(Whiten, IdentityCovariance) {
  const SampleMatrix x = sample_with_covariance(400, Vector::Ones(3), 1);
  const WhiteningResult w = whiten(x);
  EXPECT_LE((w.Sigma_hat - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((w.Sigma_inv_sqrt - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  const SampleMatrix centred = x.rowwise() - x.colwise().mean();
  EXPECT_LE((w.Z_hat - centred).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Whiten, DiagonalCovariance) {
  Vector scales(2);
  scales << 2.0, 1.0;
  const WhiteningResult w = whiten(sample_with_covariance(300, scales, 2));
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 0.5;
  expected(1, 1) = 1.0;
  EXPECT_LE((w.Sigma_inv_sqrt - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Whiten, WhitenedSampleHasIdentityCovariance) {
  const Matrix a = random_invertible(4, 3);
  const SampleMatrix x = (random_sample(500, 4, 4) * a.transpose()).rowwise() + Eigen::RowVectorXd::Constant(4, 3.0);
  const WhiteningResult w = whiten(x);
  const auto n = static_cast<double>(x.rows());
  EXPECT_LE(max_abs_asymmetry(w.Sigma_hat), 1e-12);
  EXPECT_LE((w.Sigma_inv_sqrt * w.Sigma_hat * w.Sigma_inv_sqrt - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(w.Z_hat.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  const SampleMatrix zc = w.Z_hat.rowwise() - w.Z_hat.colwise().mean();
  EXPECT_LE((zc.transpose() * zc / n - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Whiten, Idempotent) {
  const WhiteningResult w = whiten(random_sample(300, 4, 5) * random_invertible(4, 6));
  const WhiteningResult again = whiten(w.Z_hat);
  EXPECT_LE((again.Sigma_inv_sqrt - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Whiten, Errors) {
  SampleMatrix x = random_sample(100, 3, 7);
  x.col(2) = 2.0 * x.col(0) - x.col(1);
  EXPECT_THROW(whiten(x), NearSingularCovariance);
  EXPECT_THROW(whiten(random_sample(3, 3, 8)), InvalidArgument);
}

SaveMatrices with_gamma(const Matrix& g) {
  SaveMatrices m;
  m.Gamma_hat = g;
  m.Psi_hat = Matrix::Zero(g.rows(), g.cols());
  m.Lambda_hat = g + Matrix::Identity(g.rows(), g.cols());
  m.Z_bar = Vector::Zero(g.rows());
  return m;
}

WhiteningResult identity_whitening(int d) {
  WhiteningResult w;
  w.X_bar = Vector::Zero(d);
  w.Sigma_hat = Matrix::Identity(d, d);
  w.Sigma_inv_sqrt = Matrix::Identity(d, d);
  return w;
}

TEST(EdrDirections, DiagonalGamma) {
  Matrix g = Matrix::Zero(4, 4);
  g(0, 0) = 1.0;
  const EdrEstimate e = edr_directions(with_gamma(g), identity_whitening(4), 1);
  EXPECT_DOUBLE_EQ(e.eigenvalues(0), 1.0);
  EXPECT_LE((e.beta_hat.col(0) - Vector::Unit(4, 0)).norm(), 1e-15);
  EXPECT_TRUE(e.warnings.empty());
}

TEST(EdrDirections, DegenerateSpectrumWarnsButReturnsBasis) {
  const EdrEstimate e = edr_directions(with_gamma(Matrix::Identity(4, 4)), identity_whitening(4), 2);
  ASSERT_EQ(e.warnings.size(), 1u);
  EXPECT_NE(e.warnings[0].find("eigengap"), std::string::npos);
  EXPECT_LE((e.eigenvectors.transpose() * e.eigenvectors - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
  const EdrEstimate again = edr_directions(with_gamma(Matrix::Identity(4, 4)), identity_whitening(4), 2);
  EXPECT_TRUE((e.eigenvectors.array() == again.eigenvectors.array()).all());
}

TEST(EdrDirections, EigenpairInvariantsAndSigns) {
  const KernelSpec K = build_order_k_kernel(3);
  const FieldDataset ds = simulate_field(preset_model("two_index", 1), square_lattice(24), 3);
  const WhiteningResult w = whiten(ds.X);
  const SaveMatrices m = save_matrices(w.Z_hat, ds.Y, K, BandwidthSchedule{});
  const EdrEstimate e = edr_directions(m, w, 2);
  const Matrix& q = e.eigenvectors;
  EXPECT_LE((q.transpose() * q - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
  for (int j = 0; j < 4; ++j) {
    if (j > 0) EXPECT_GE(e.eigenvalues(j - 1), e.eigenvalues(j));
    const Vector lhs = m.Gamma_hat * q.col(j);
    EXPECT_LE((lhs - e.eigenvalues(j) * q.col(j)).norm(), 1e-8 * std::max(1.0, std::abs(e.eigenvalues(j))));
    Eigen::Index at;
    q.col(j).cwiseAbs().maxCoeff(&at);
    EXPECT_GT(q(at, j), 0.0);
  }
  EXPECT_LE((e.beta_hat - w.Sigma_inv_sqrt * q.leftCols(2)).cwiseAbs().maxCoeff(), 1e-15);
  const EdrEstimate again = edr_directions(m, w, 2);
  EXPECT_TRUE((e.beta_hat.array() == again.beta_hat.array()).all());
}

TEST(EdrDirections, RejectsBadInput) {
  EXPECT_THROW(edr_directions(with_gamma(Matrix::Identity(3, 3)), identity_whitening(3), 0), InvalidArgument);
  EXPECT_THROW(edr_directions(with_gamma(Matrix::Identity(3, 3)), identity_whitening(3), 3), InvalidArgument);
  Matrix g = Matrix::Identity(3, 3);
  g(0, 1) = 0.5;
  EXPECT_THROW(edr_directions(with_gamma(g), identity_whitening(3), 1), InvalidArgument);
}

TEST(SubspaceDistance, Examples) {
  const Matrix e1 = Vector::Unit(3, 0);
  EXPECT_NEAR(subspace_distance(e1, e1), 0.0, 1e-15);
  EXPECT_NEAR(subspace_distance(e1, Matrix(Vector::Unit(3, 1))), 1.0, 1e-15);
  // P_A = e1 e1^T, P_B = [[.5,.5,0],[.5,.5,0],[0,0,0]]: ||P_A - P_B||_F^2 = 4 * 0.25 = 1.
  Matrix b(3, 1);
  b << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0;
  Matrix pa = Matrix::Zero(3, 3);
  pa(0, 0) = 1.0;
  const Matrix pb = b * b.transpose();
  const double oracle = (pa - pb).norm() / std::sqrt(2.0);
  EXPECT_NEAR(oracle, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(subspace_distance(e1, b), oracle, 1e-15);
  // Orthogonal 2-dim spans in d = 4.
  Matrix a2 = Matrix::Zero(4, 2), b2 = Matrix::Zero(4, 2);
  a2(0, 0) = a2(1, 1) = 1.0;
  b2(2, 0) = b2(3, 1) = 1.0;
  EXPECT_NEAR(subspace_distance(a2, b2), 1.0, 1e-15);
}

TEST(SubspaceDistance, BasisInvariantPseudometric) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  auto rand_mat = [&](int r, int c) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
  };
  for (int t = 0; t < 50; ++t) {
    const Matrix a = rand_mat(5, 2), b = rand_mat(5, 2), c = rand_mat(5, 2);
    const Matrix mix = rand_mat(2, 2) + 3.0 * Matrix::Identity(2, 2);
    EXPECT_NEAR(subspace_distance(a, a * mix), 0.0, 1e-12);
    EXPECT_EQ(subspace_distance(a, b), subspace_distance(b, a));
    EXPECT_LE(subspace_distance(a, c), subspace_distance(a, b) + subspace_distance(b, c) + 1e-12);
    const double dab = subspace_distance(a, b);
    EXPECT_GE(dab, 0.0);
    EXPECT_LE(dab, 1.0);
  }
  Matrix deficient = Matrix::Zero(4, 2);
  deficient(0, 0) = deficient(0, 1) = 1.0;
  EXPECT_THROW(subspace_distance(deficient, Matrix::Identity(4, 2)), RankDeficient);
}

TEST(AlignedErrors, SignAlignment) {
  Matrix t = Matrix::Zero(3, 2);
  t(0, 0) = 1.0;
  t(1, 1) = 1.0;
  Matrix b = -t;
  b(2, 1) = 0.1;
  const auto err = aligned_vector_errors(b, t);
  EXPECT_NEAR(err[0], 0.0, 1e-15);
  EXPECT_NEAR(err[1], 0.1, 1e-15);
}

TEST(AffineMaps, EigenvaluesInvariantAndSpansEquivariant) {
  const KernelSpec K = build_order_k_kernel(3);
  const FieldDataset ds = simulate_field(preset_model("quadratic", 1), square_lattice(24), 12);
  const WhiteningResult w0 = whiten(ds.X);
  const SaveMatrices m0 = save_matrices(w0.Z_hat, ds.Y, K, BandwidthSchedule{});
  const EdrEstimate e0 = edr_directions(m0, w0, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix a = random_invertible(4, 100 + s);
    Vector shift = Vector::LinSpaced(4, -2.0, 5.0);
    const SampleMatrix x1 = (ds.X * a.transpose()).rowwise() + shift.transpose();
    const WhiteningResult w1 = whiten(x1);
    const SaveMatrices m1 = save_matrices(w1.Z_hat, ds.Y, K, BandwidthSchedule{});
    const EdrEstimate e1 = edr_directions(m1, w1, 1);
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(e1.eigenvalues(j), e0.eigenvalues(j), 1e-8 * std::max(1.0, std::abs(e0.eigenvalues(j))));
    const Matrix mapped = a.transpose().inverse() * e0.beta_hat;
    EXPECT_LE(subspace_distance(e1.beta_hat, mapped), 1e-6);
  }
}

TEST(SupNorm, SelfComparisonIsZero) {
  const KernelSpec K = build_order_k_kernel(3);
  const FieldDataset ds = simulate_field(preset_model("linear"), square_lattice(16), 1);
  const std::vector<double> grid{-0.3, 0.0, 0.2};
  auto est = [&](double y) { return smooth_at(*ds.Z_oracle, ds.Y, y, K, 0.1, 1.0); };
  auto truth = [&](double y) {
    const SmoothedSite s = est(y);
    return ConditionalMoments{s.f_hat, s.m_hat, s.M_hat};
  };
  const SupNormReport r = supnorm_errors(grid, est, truth);
  EXPECT_EQ(r.sup_f, 0.0);
  EXPECT_EQ(r.sup_m, 0.0);
  EXPECT_EQ(r.sup_M, 0.0);
  EXPECT_THROW(supnorm_errors(std::vector<double>{}, est, truth), InvalidArgument);
}

TEST(SupNorm, IndependenceSecondMomentTracksDensity) {
  // Under independence R(y) = I, so M_hat(y) - f_hat(y) I is a pure noise term.
  const KernelSpec K = build_order_k_kernel(3);
  const ModelSpec m = preset_model("independent_gaussian");
  const PopulationTruth t = population_truth(m, 100000, 1);
  const FieldDataset ds = simulate_field(m, square_lattice(64), 4);
  const double b = BandwidthSchedule{}.b_n(static_cast<double>(ds.n_hat()));
  for (double y = -0.6; y <= 0.6; y += 0.05) {
    if (t.conditional_moments(y).f <= 0.1) continue;
    const SmoothedSite s = smooth_at(*ds.Z_oracle, ds.Y, y, K, b, 1.0);
    EXPECT_LE(spectral_norm(s.M_hat - s.f_hat * Matrix::Identity(4, 4)), 0.5 * std::max(s.f_hat, 0.5)) << y;
  }
}

} // namespace
