#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "peierls/magnetic.hpp"
#include "peierls/spectra.hpp"

using namespace peierls;

namespace {

FieldSpec landau(double eps, double b = 1.0) {
  FieldSpec f;
  f.kind = GaugeKind::landau_uniform;
  f.epsilon = eps;
  f.b = b;
  return f;
}

std::vector<double> eigenvalues(const MatrixXcd& h) {
  const VectorXd v = hermitian_eigenvalues(h);
  return {v.data(), v.data() + v.size()};
}

}  // namespace

TEST(PeierlsHost, ZeroFieldLeavesTheHostUnchanged) {
  const auto h = fixtures::harper_host();
  const auto w = make_window(cells_in_box(2, 2), 4);
  EXPECT_LE(max_abs(window_matrix(peierls_host(h, FieldSpec{}), w) - window_matrix(h.op, w)), 0.0);
}

TEST(MagneticMatrix, ZeroFieldIsTheHoppingMatrix) {
  const auto h = fixtures::harper_host();
  const auto e = effective_hamiltonian(h, fixtures::frame_for(h, fixtures::harper_interval(), 16, site_trials(4, {0})), 5);
  const auto w = make_window(cells_in_box(2, 3), 1);
  EXPECT_LE(max_abs(window_matrix(magnetic_matrix(e, h.lattice(), FieldSpec{}), w) - window_matrix(e.as_operator(h.lattice()), w)),
            0.0);
}

TEST(MagneticMatrix, FreeLatticeSymbolGivesTheHarperMatrix) {
  const auto h = square2d(1, {0.0}, 1.0);
  const auto e = effective_hamiltonian(h, fixtures::frame_for(h, {-5, 5}, 8), 2);
  const auto f = landau(kTwoPi / 7);
  const auto w = make_window(cells_in_box(2, 4), 1);
  EXPECT_LE(max_abs(window_matrix(magnetic_matrix(e, h.lattice(), f), w) - window_matrix(peierls_host(h, f), w)), 1e-12);
}

TEST(MagneticMatrix, PureGaugeIsUnitarilyEquivalent) {
  const auto h = fixtures::harper_host();
  const auto e = effective_hamiltonian(h, fixtures::frame_for(h, fixtures::harper_interval(), 16, site_trials(4, {0})), 5);
  FieldSpec g;
  g.kind = GaugeKind::pure_gauge;
  g.epsilon = 0.6;
  g.gauge = {{Vec2(0.3, 0.7), 2.0, 0.1}, {Vec2(-0.5, 0.2), 1.0, 2.0}};
  const auto w = make_window(cells_in_box(2, 4), 1);
  const auto a = eigenvalues(window_matrix(magnetic_matrix(e, h.lattice(), FieldSpec{}), w));
  const auto b = eigenvalues(window_matrix(magnetic_matrix(e, h.lattice(), g), w));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(MinimalCoupling, UniformFieldBlocksEqualTheMagneticMatrix) {
  const auto h = fixtures::harper_host();
  const auto e = effective_hamiltonian(h, fixtures::frame_for(h, fixtures::harper_interval(), 16, site_trials(4, {0})), 5);
  const auto f = landau(kTwoPi * 3 / 256);
  const auto w = make_window(cells_in_box(2, 4), 1);
  EXPECT_LE(max_abs(window_matrix(minimally_coupled_matrix(e, h.lattice(), f), w) -
                    window_matrix(magnetic_matrix(e, h.lattice(), f), w)),
            1e-12);
}

TEST(MinimalCoupling, ModulatedFieldDiffersAtOrderEpsilon) {
  const auto h = fixtures::harper_host();
  const auto e = effective_hamiltonian(h, fixtures::frame_for(h, fixtures::harper_interval(), 16, site_trials(4, {0})), 5);
  const auto w = make_window(cells_in_box(2, 4), 1);
  std::vector<double> eps, diff;
  for (int p = 1; p <= 4; ++p) {
    FieldSpec f;
    f.kind = GaugeKind::slowly_varying;
    f.epsilon = kTwoPi * p / 256;
    f.modulation = 0.5;
    eps.push_back(f.epsilon);
    diff.push_back(max_abs(window_matrix(minimally_coupled_matrix(e, h.lattice(), f), w) -
                           window_matrix(magnetic_matrix(e, h.lattice(), f), w)));
  }
  EXPECT_GT(diff.front(), 0.0);
  const double slope = std::log(diff.back() / diff.front()) / std::log(eps.back() / eps.front());
  EXPECT_GT(slope, 0.8);
}

TEST(BlochSpectrum, FreeLatticeEndpoints) {
  const auto h = square2d(1, {0.0}, 1.0);
  const auto s0 = magnetic_bloch_spectrum(peierls_host(h, FieldSpec{}), 4, 4).values;
  EXPECT_NEAR(s0.front(), -4.0, 1e-8);
  EXPECT_NEAR(s0.back(), 4.0, 1e-8);
  const auto s1 = magnetic_bloch_spectrum(peierls_host(h, landau(kTwoPi / 2)), 4, 4).values;
  EXPECT_NEAR(s1.front(), -2 * std::sqrt(2.0), 1e-8);
  EXPECT_NEAR(s1.back(), 2 * std::sqrt(2.0), 1e-8);
}

TEST(BlochSpectrum, DecoupledSiteIsItsOnsiteEnergy) {
  const auto h = hopping_list_host("0 0 0 0 0.7 0", {Vec2(1, 0), Vec2(0, 1)}, {Vec2::Zero()});
  for (double v : magnetic_bloch_spectrum(peierls_host(h, landau(kTwoPi / 3)), 2, 2).values) EXPECT_NEAR(v, 0.7, 1e-12);
}

TEST(BlochSpectrum, FluxAndComplementaryFluxAgree) {
  const auto h = square2d(1, {0.0}, 1.0);
  for (const auto& [p, q] : {std::pair{1, 5}, std::pair{2, 7}, std::pair{3, 8}}) {
    const auto a = magnetic_bloch_spectrum(peierls_host(h, landau(kTwoPi * p / q)), 3, 3).values;
    const auto b = magnetic_bloch_spectrum(peierls_host(h, landau(kTwoPi * (q - p) / q)), 3, 3).values;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
  }
}

TEST(BlochSpectrum, ZoneReductionMatchesTheFullZone) {
  const auto h = fixtures::harper_host();
  const auto op = peierls_host(h, landau(kTwoPi * 3 / 64));
  const auto sc = find_supercell(op);
  const auto reduced = magnetic_bloch_spectrum(op, 4, 4, sc, true);
  EXPECT_GT(reduced.reduction[0] * reduced.reduction[1], 1);
  const auto a = magnetic_bloch_spectrum(op, 4 * reduced.reduction[0], 4 * reduced.reduction[1], sc, false).values;
  const auto b = reduced.values;
  // every reduced value appears in the full-zone sampling
  EXPECT_LE(hausdorff(b, a), 1e-2);
  for (double v : b) {
    const auto it = std::lower_bound(a.begin(), a.end(), v - 1e-9);
    ASSERT_NE(it, a.end());
    EXPECT_NEAR(*it, v, 1e-9);
  }
}

TEST(Torus, RequiresAnIntegerFlux) {
  const auto lat = build_lattice({Vec2(1, 0), Vec2(0, 1)});
  EXPECT_NO_THROW(make_torus(lat, landau(kTwoPi / 64), 8));
  EXPECT_THROW(make_torus(lat, landau(kTwoPi / 100), 8), GeometryError);
  FieldSpec mod;
  mod.kind = GaugeKind::slowly_varying;
  mod.epsilon = kTwoPi / 64;
  mod.modulation = 0.5;
  EXPECT_THROW(make_torus(lat, mod, 8), GeometryError);
}

TEST(Torus, MatrixIsHermitianAndTracePreserving) {
  const auto h = fixtures::harper_host();
  const auto t = make_torus(h.lattice(), landau(kTwoPi * 2 / 256), 16);
  const MatrixXcd m = torus_matrix(peierls_host(h, landau(kTwoPi * 2 / 256)), t);
  EXPECT_LE(hermiticity_defect(m), 1e-12);
  EXPECT_NEAR(m.trace().real(), -3.0 * 256, 1e-9);
}

TEST(ModifiedWannier, ZeroFieldGivesTranslates) {
  const auto h = fixtures::harper_host();
  const auto wb = wannier_functions(h, fixtures::frame_for(h, fixtures::harper_interval(), 8, site_trials(4, {0})),
                                    WannierOptions{-1, 1e-10, 16});
  const auto t = make_torus(h.lattice(), FieldSpec{}, 8);
  const MatrixXcd w = modified_wannier(wb, FieldSpec{}, t);
  const auto gd = gram_and_loewdin(w, 0.0);
  EXPECT_LE(max_abs(gd.gram - MatrixXcd::Identity(64, 64)), 1e-12);
  EXPECT_EQ(max_abs(gd.x), 0.0);
  EXPECT_LE(max_abs(w * gd.inv_sqrt - w), 1e-12);
  const int col = t.cell_index.at({1, 2});
  for (const auto& [c, v] : wb.functions[0].values) {
    const auto [rep, wrap] = t.reduce(c + Cell{1, 2});
    for (int s = 0; s < 4; ++s) EXPECT_NEAR(std::abs(w(torus_row(t, rep, s, 4), col) - v[s]), 0.0, 1e-14);
  }
}

TEST(BandProjection, ZeroFieldMatchesTheFiberProjection) {
  const auto h = fixtures::harper_host();
  const auto t = make_torus(h.lattice(), FieldSpec{}, 8);
  const auto mp = magnetic_band_projection(torus_matrix(peierls_host(h, FieldSpec{}), t), fixtures::harper_interval());
  const auto grid = bz_grid(h.lattice(), 8);
  const auto isl = detect_island(band_structure(h, grid), fixtures::harper_interval());
  const auto k = band_kernel(h, isl, grid, 4);
  const MatrixXcd p = mp.projector();
  for (const auto& [c, b] : k.op.kernel) {
    const auto [rep, wrap] = t.reduce(c);
    EXPECT_LE(max_abs(p.block(torus_row(t, rep, 0, 4), torus_row(t, {0, 0}, 0, 4), 4, 4) - b), 1e-10);
  }
}

TEST(BandProjection, PureGaugeKeepsTheTrace) {
  const auto h = fixtures::harper_host();
  FieldSpec g;
  g.kind = GaugeKind::pure_gauge;
  g.epsilon = 1.0;
  g.gauge = {{h.lattice().dual.col(0) / 8.0, 0.8, 0.3}};
  const auto t = make_torus(h.lattice(), g, 8);
  const auto a = magnetic_band_projection(torus_matrix(peierls_host(h, FieldSpec{}), t), fixtures::harper_interval());
  const auto b = magnetic_band_projection(torus_matrix(peierls_host(h, g), t), fixtures::harper_interval());
  EXPECT_EQ(a.rank, b.rank);
  EXPECT_NEAR(a.projector().trace().real(), b.projector().trace().real(), 1e-10);
}

TEST(SzNagy, IdenticalProjectionsGiveTheIdentity) {
  MatrixXcd p = MatrixXcd::Zero(3, 3);
  p(0, 0) = p(2, 2) = 1.0;
  EXPECT_LE(max_abs(sz_nagy(p, p) - MatrixXcd::Identity(3, 3)), 1e-14);
}

TEST(SzNagy, RotatedLineGivesTheRotation) {
  const double phi = 0.3;
  MatrixXcd r(2, 2);
  r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  MatrixXcd q = MatrixXcd::Zero(2, 2);
  q(0, 0) = 1.0;
  const MatrixXcd p = r * q * r.adjoint();
  EXPECT_LE(max_abs(sz_nagy(p, q) - r), 1e-14);
}

TEST(SzNagy, DistantProjectionsAreNotConnectable) {
  MatrixXcd p = MatrixXcd::Zero(2, 2), q = MatrixXcd::Zero(2, 2);
  p(0, 0) = q(1, 1) = 1.0;
  EXPECT_THROW(sz_nagy(p, q), NotConnectable);
}

TEST(SzNagy, RandomPairsAreIntertwinedUnitarily) {
  std::mt19937 rng(3);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXcd a(6, 2), n(6, 2);
    for (int i = 0; i < 12; ++i) a(i % 6, i / 6) = cplx(g(rng), g(rng)), n(i % 6, i / 6) = cplx(g(rng), g(rng));
    const auto proj = [](const MatrixXcd& m) {
      const MatrixXcd q = Eigen::HouseholderQR<MatrixXcd>(m).householderQ() * MatrixXcd::Identity(6, 2);
      return MatrixXcd(q * q.adjoint());
    };
    const MatrixXcd p = proj(a), q = proj(a + 0.1 * n);
    const MatrixXcd u = sz_nagy(p, q);
    EXPECT_LE(max_abs(u.adjoint() * u - MatrixXcd::Identity(6, 6)), 1e-12);
    EXPECT_LE(max_abs(u * q * u.adjoint() - p), 1e-12);
  }
}

TEST(MagneticWannier, ZeroFieldResidualVanishes) {
  const auto h = fixtures::harper_host();
  const int l = 8;
  const auto frame = fixtures::frame_for(h, fixtures::harper_interval(), l, site_trials(4, {0}));
  const auto wb = wannier_functions(h, frame, WannierOptions{-1, 1e-10, 16});
  const auto e = effective_hamiltonian(h, frame, l / 2 - 1);
  const auto t = make_torus(h.lattice(), FieldSpec{}, l);
  const MatrixXcd ht = torus_matrix(peierls_host(h, FieldSpec{}), t);
  const auto fam = magnetic_wannier(wb, FieldSpec{}, t, ht, fixtures::harper_interval());
  const MatrixXcd m = torus_matrix(magnetic_matrix(e, h.lattice(), FieldSpec{}), t);
  EXPECT_LE(matrix_element_residual(fam.matrix_elements, m, t, 1, 2), 1e-8);
  EXPECT_LE(fam.projector_gap, 1e-10);
}

TEST(MagneticWannier, SmallFieldKeepsTheFamilyOrthonormal) {
  const auto h = fixtures::harper_host();
  const int l = 8;
  const auto f = landau(kTwoPi / 64);
  const auto frame = fixtures::frame_for(h, fixtures::harper_interval(), l, site_trials(4, {0}));
  const auto wb = wannier_functions(h, frame, WannierOptions{-1, 1e-10, 16});
  const auto t = make_torus(h.lattice(), f, l);
  const MatrixXcd ht = torus_matrix(peierls_host(h, f), t);
  const auto fam = magnetic_wannier(wb, f, t, ht, fixtures::harper_interval());
  EXPECT_LE(max_abs(fam.final.adjoint() * fam.final - MatrixXcd::Identity(64, 64)), 1e-10);
  EXPECT_GT(fam.gram.deviation, 0.0);
  EXPECT_LT(fam.projector_gap, 1.0);
  const MatrixXcd p = fam.projection.projector();
  EXPECT_LE(max_abs(p * fam.final - fam.final), 1e-10);
}
