// Regenerates the committed test fixtures.
//
//   ksave_fixtures datasets DIR      reference datasets + expected outputs (48 cases)
//   ksave_fixtures thresholds FILE   pilot-calibrated acceptance thresholds
//
// Datasets carry the oracle-whitened predictor in their x columns, so the expected outputs
// are a function of the CSV alone. Expected outputs come from the brute-force reference.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ksave/ksave.hpp"

namespace {

using namespace ksave;

struct FixtureCase {
  std::string preset;
  InnovationLaw law;
  int side;
  int k;
};

std::vector<FixtureCase> fixture_cases() {
  std::vector<FixtureCase> out;
  for (int side : {8, 12, 16})
    for (const char* preset : {"independent_gaussian", "linear", "quadratic", "two_index"})
      for (InnovationLaw law : {InnovationLaw::bounded_uniform, InnovationLaw::gaussian})
        for (int k : {2, 3}) out.push_back({preset, law, side, k});
  return out;
}

std::string fixture_name(const FixtureCase& c) {
  return c.preset + "_" + std::string(to_string(c.law)) + "_" + std::to_string(c.side) + "x" +
         std::to_string(c.side) + "_k" + std::to_string(c.k);
}

int write_datasets(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Json index = Json::array();
  std::uint64_t seed = 100;
  for (const auto& c : fixture_cases()) {
    ++seed;
    const ModelSpec model = preset_model(c.preset, 1, c.law);
    const LatticeShape shape = square_lattice(c.side);
    const FieldDataset ds = simulate_field(model, shape, seed);
    const KernelSpec kernel = c.k == 2 ? epanechnikov() : build_order_k_kernel(c.k);
    BandwidthSchedule schedule;
    schedule.k = c.k;

    // Re-read the CSV so the expected values are computed from exactly the stored doubles.
    const std::string csv = io::dataset_csv(shape, *ds.Z_oracle, ds.Y);
    const io::CsvDataset back = io::parse_dataset_csv(csv);
    const auto ref = oracle::reference_save(back.X, back.Y, kernel, schedule);

    std::vector<double> f_hat;
    for (const auto& s : ref.sites) f_hat.push_back(s.f_hat);
    const double n = static_cast<double>(shape.n_hat());
    Json expected{{"name", fixture_name(c)},
                  {"provenance", ref.provenance},
                  {"seed", seed},
                  {"shape", shape.dims},
                  {"model", io::to_json(model)},
                  {"kernel", io::to_json(kernel)},
                  {"schedule", io::to_json(schedule)},
                  {"b_n", schedule.b_n(n)},
                  {"e_n", schedule.e_n(n)},
                  {"f_hat", f_hat},
                  {"matrices", io::to_json(ref.matrices)}};
    io::write_text((dir / (fixture_name(c) + ".csv")).string(), csv);
    io::write_text((dir / (fixture_name(c) + ".json")).string(), io::dump(expected));
    index.push_back(fixture_name(c));
  }
  io::write_text((dir / "index.json").string(), io::dump(index));
  std::cout << index.size() << " fixtures written to " << dir << "\n";
  return 0;
}

// Linear-interpolation percentile (order statistics at positions p (n - 1)).
double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

constexpr std::uint64_t kPilotFirstSeed = 1001;
constexpr int kPilotSeeds = 50;
constexpr int kPilotSide = 64;

int write_thresholds(const std::filesystem::path& file) {
  const KernelSpec kernel = build_order_k_kernel(3);
  const BandwidthSchedule schedule;
  const LatticeShape shape = square_lattice(kPilotSide);

  const ModelSpec null_model = preset_model("independent_uniform");
  const ModelSpec edr_model = preset_model("quadratic");
  std::vector<double> null_vals, edr_vals;
  for (int i = 0; i < kPilotSeeds; ++i) {
    const std::uint64_t seed = kPilotFirstSeed + static_cast<std::uint64_t>(i);
    {
      const FieldDataset ds = simulate_field(null_model, shape, seed);
      const WhiteningResult w = whiten(ds.X);
      null_vals.push_back(save_matrices(w.Z_hat, ds.Y, kernel, schedule).Gamma_hat.norm());
    }
    {
      const FieldDataset ds = simulate_field(edr_model, shape, seed);
      const WhiteningResult w = whiten(ds.X);
      const EdrEstimate edr = edr_directions(save_matrices(w.Z_hat, ds.Y, kernel, schedule), w, edr_model.N);
      edr_vals.push_back(subspace_distance(edr.beta_hat, edr_model.B_true));
    }
    std::cerr << "pilot seed " << seed << " done\n";
  }
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < kPilotSeeds; ++i) seeds.push_back(kPilotFirstSeed + static_cast<std::uint64_t>(i));
  auto entry = [&](const std::string& preset, const std::string& metric, const std::vector<double>& vals) {
    return Json{{"preset", preset},
                {"metric", metric},
                {"shape", shape.dims},
                {"whitening", "empirical"},
                {"schedule", io::to_json(schedule)},
                {"kernel_order", kernel.order_k},
                {"percentile", 0.95},
                {"pilot_seeds", seeds},
                {"pilot_values", vals},
                {"threshold", percentile(vals, 0.95)}};
  };
  Json out{{"protocol", "95th percentile (linear interpolation) over 50 pilot seeds disjoint from the test seeds"},
           {"null_gamma_fro", entry("independent_uniform", "gamma_err_fro", null_vals)},
           {"edr_subspace_dist", entry("quadratic", "subspace_dist", edr_vals)}};
  io::write_text(file.string(), io::dump(out));
  std::cout << "thresholds: null " << out["null_gamma_fro"]["threshold"] << ", edr "
            << out["edr_subspace_dist"]["threshold"] << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: ksave_fixtures datasets DIR | thresholds FILE\n";
    return 1;
  }
  const std::string mode = argv[1];
  try {
    if (mode == "datasets") return write_datasets(argv[2]);
    if (mode == "thresholds") return write_thresholds(argv[2]);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "unknown mode '" << mode << "'\n";
  return 1;
}
