#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "peierls/pipeline.hpp"

using namespace peierls;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("peierls_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const char* kChain =
    "[model]\nkind = ssh1d\n[numerics]\nbz_points = 64\nwannier_radius = 24\nhopping_radius = 24\n"
    "[island]\nlower = -2\nupper = 0\n[magnetic]\ngauge = none\n";

}  // namespace

TEST(Output, DoublesUseSixteenDigitScientificNotation) {
  EXPECT_EQ(format_double(1.0), "1.0000000000000000e+00");
  EXPECT_EQ(format_double(-0.125), "-1.2500000000000000e-01");
  EXPECT_EQ(format_double(std::nan("")), "nan");
}

TEST(ParallelMap, PreservesOrderAndRethrows) {
  const auto r = parallel_map(50, 4, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], static_cast<int>(i * i));
  EXPECT_THROW(parallel_map(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw NumericalError("boom");
                              return 1;
                            }),
               NumericalError);
}

TEST(Pipeline, BandsOnTheChainHaveTwoRowsPerNode) {
  const auto out = scratch("bands");
  const auto cfg = parse_config_text(kChain, "chain.ini", ".");
  run_pipeline(cfg, "bands", out);
  const auto rows = lines(out / "bands.csv");
  EXPECT_EQ(rows.front(), "theta_1,theta_2,band_index,energy");
  EXPECT_EQ(rows.size(), 1u + 2u * 64u);
  EXPECT_TRUE(fs::exists(out / "report.json"));
}

TEST(Pipeline, CorruptCacheIsRecomputedWithAWarning) {
  const auto out = scratch("cache");
  const auto cfg = parse_config_text(kChain, "chain.ini", ".");
  const auto first = run_pipeline(cfg, "hoppings", out);
  EXPECT_EQ(first.results.at("cache").at("main"), "miss");
  const auto csv = lines(out / "hoppings.csv");
  const auto warm = run_pipeline(cfg, "hoppings", out);
  EXPECT_EQ(warm.results.at("cache").at("main"), "hit");
  EXPECT_EQ(lines(out / "hoppings.csv"), csv);
  std::ofstream(out / "cache" / (first.config_hash + "-main.json")) << "{ not json";
  const auto again = run_pipeline(cfg, "hoppings", out);
  EXPECT_EQ(again.results.at("cache").at("main"), "miss");
  ASSERT_EQ(again.warnings.size(), 1u);
  EXPECT_NE(again.warnings[0].find("corrupt"), std::string::npos);
  EXPECT_EQ(lines(out / "hoppings.csv"), csv);
}

TEST(Pipeline, WannierDecayTableHasFiveMomentsPerFunction) {
  const auto out = scratch("wannier");
  run_pipeline(parse_config_text(kChain, "chain.ini", "."), "wannier", out);
  const auto rows = lines(out / "wannier_decay.csv");
  EXPECT_EQ(rows.front(), "j,m,moment,fitted_rate");
  EXPECT_EQ(rows.size(), 6u);
}

TEST(Pipeline, MissingIslandIsAValidationError) {
  const auto cfg = parse_config_text("[model]\nkind = ssh1d\n", "chain.ini", ".");
  EXPECT_THROW(run_pipeline(cfg, "island", scratch("noisland")), ValidationError);
  EXPECT_THROW(run_pipeline(cfg, "unknown", scratch("nocommand")), ValidationError);
}

TEST(Pipeline, ButterflyRowCountMatchesDirectEnumeration) {
  const auto out = scratch("butterfly");
  const auto cfg = parse_config_text(
      "[model]\nkind = square2d\nq = 1\npotential = 0\n[numerics]\nmagnetic_k_points = 2\n[magnetic]\nq_max = 9\n",
      "free.ini", ".");
  run_pipeline(cfg, "butterfly", out);
  const auto host = square2d(1, {0.0}, 1.0);
  std::size_t want = 0;
  for (int q = 1; q <= 9; ++q)
    for (int p = 0; p < q; ++p) {
      if (std::gcd(p, q) != 1) continue;
      FieldSpec f;
      f.kind = GaugeKind::landau_uniform;
      f.epsilon = kTwoPi * p / q;
      want += magnetic_bloch_spectrum(peierls_host(host, f), 2, 2).values.size();
    }
  EXPECT_EQ(lines(out / "spectrum.csv").size(), want + 1);
}
