#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "ksave/io.hpp"
#include "ksave/oracle.hpp"

namespace {

using namespace ksave;

const std::filesystem::path kFixtures = KSAVE_FIXTURE_DIR;

double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

std::vector<std::string> fixture_names() {
  return io::read_json((kFixtures / "index.json").string()).get<std::vector<std::string>>();
}

TEST(Fixtures, IndexCoversEveryCase) {
  const auto names = fixture_names();
  EXPECT_EQ(names.size(), 48u);
  for (const auto& n : names) {
    EXPECT_TRUE(std::filesystem::exists(kFixtures / (n + ".csv"))) << n;
    EXPECT_TRUE(std::filesystem::exists(kFixtures / (n + ".json"))) << n;
  }
}

TEST(Fixtures, OptimisedPathMatchesReferenceAndStoredRecord) {
  for (const auto& name : fixture_names()) {
    SCOPED_TRACE(name);
    const io::CsvDataset data = io::parse_dataset_csv(io::read_text((kFixtures / (name + ".csv")).string()));
    const Json expected = io::read_json((kFixtures / (name + ".json")).string());
    const KernelSpec kernel = io::kernel_from_json(expected.at("kernel"));
    const BandwidthSchedule schedule = io::schedule_from_json(expected.at("schedule"));
    const SaveEstimate est = save_estimate(data.X, data.Y, kernel, schedule);
    const auto ref = oracle::reference_save(data.X, data.Y, kernel, schedule);

    const auto& m = expected.at("matrices");
    for (const char* key : {"Gamma_hat", "Psi_hat", "Lambda_hat"}) {
      const Matrix stored = io::matrix_from_json(m.at(key), key);
      const Matrix& got = key == std::string("Gamma_hat") ? est.matrices.Gamma_hat
                          : key == std::string("Psi_hat") ? est.matrices.Psi_hat
                                                          : est.matrices.Lambda_hat;
      const Matrix& live = key == std::string("Gamma_hat") ? ref.matrices.Gamma_hat
                           : key == std::string("Psi_hat") ? ref.matrices.Psi_hat
                                                           : ref.matrices.Lambda_hat;
      EXPECT_LE(rel_diff(got, stored), 1e-10) << key;
      EXPECT_LE(rel_diff(got, live), 1e-10) << key;
    }
    const auto f_hat = expected.at("f_hat").get<std::vector<double>>();
    ASSERT_EQ(f_hat.size(), est.sites.size());
    for (std::size_t i = 0; i < f_hat.size(); ++i)
      EXPECT_LE(std::abs(est.sites[i].f_hat - f_hat[i]), 1e-10 * std::max(1.0, std::abs(f_hat[i])));
    if (data.shape.dims[0] == 8)
      EXPECT_TRUE((est.matrices.Gamma_hat.array() == ref.matrices.Gamma_hat.array()).all());
  }
}

TEST(Reference, SingleObservation) {
  const KernelSpec K = build_order_k_kernel(3);
  SampleMatrix z(1, 2);
  z << 1.5, -0.5;
  Vector y(1);
  y << 0.2;
  const auto ref = oracle::reference_save_with(z, y, K, 0.4, 1e-6);
  const double k0 = kernel_eval(K, 0.0);
  EXPECT_DOUBLE_EQ(ref.sites[0].f_hat, k0 / 0.4);
  EXPECT_DOUBLE_EQ(ref.sites[0].m_hat(0), k0 * 1.5 / 0.4);
  EXPECT_DOUBLE_EQ(ref.sites[0].M_hat(0, 1), k0 * (1.5 * -0.5) / 0.4);
  EXPECT_EQ(ref.provenance, "reference");
}

TEST(Reference, ZeroFieldGivesMinusIdentity) {
  const auto ref = oracle::reference_save(SampleMatrix::Zero(30, 3), Vector::LinSpaced(30, 0.0, 1.0),
                                          build_order_k_kernel(3), BandwidthSchedule{});
  EXPECT_EQ((ref.matrices.Gamma_hat + Matrix::Identity(3, 3)).norm(), 0.0);
}

TEST(Reference, SizeGuard) {
  EXPECT_THROW(oracle::reference_save(SampleMatrix::Zero(4097, 2), Vector::Zero(4097), epanechnikov(), BandwidthSchedule{}),
               SampleTooLarge);
}

TEST(GammaError, SelfAndIndependence) {
  const ModelSpec m = preset_model("independent_uniform");
  const PopulationTruth t = population_truth(m, 20000, 1);
  const FieldDataset ds = simulate_field(m, square_lattice(16), 3);
  const KernelSpec K = build_order_k_kernel(3);
  const SaveMatrices est = save_matrices(*ds.Z_oracle, ds.Y, K, BandwidthSchedule{});
  EXPECT_DOUBLE_EQ(oracle::finite_sample_gamma_error(est, t), est.Gamma_hat.norm());
  EXPECT_DOUBLE_EQ(oracle::finite_sample_gamma_error(ds, t, BandwidthSchedule{}, K), est.Gamma_hat.norm());

  PopulationTruth self = t;
  self.gamma_exact = est.Gamma_hat;
  EXPECT_EQ(oracle::finite_sample_gamma_error(est, self), 0.0);

  PopulationTruth wrong = t;
  wrong.gamma_exact = Matrix::Zero(3, 3);
  EXPECT_THROW(oracle::finite_sample_gamma_error(est, wrong), InvalidArgument);
}

TEST(GammaError, LinearModelErrorShrinksFrom32To64) {
  const ModelSpec m = preset_model("linear");
  const PopulationTruth t = population_truth(m, 20000, 1);
  ASSERT_TRUE(t.gamma_exact.has_value());
  const KernelSpec K = build_order_k_kernel(3);
  auto median_error = [&](int side) {
    std::vector<double> errs;
    for (std::uint64_t s = 1; s <= 20; ++s)
      errs.push_back(oracle::finite_sample_gamma_error(simulate_field(m, square_lattice(side), s), t,
                                                       BandwidthSchedule{}, K));
    std::sort(errs.begin(), errs.end());
    return 0.5 * (errs[9] + errs[10]);
  };
  EXPECT_LT(median_error(64), median_error(32));
}

} // namespace
