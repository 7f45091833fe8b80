#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "peierls/config.hpp"
#include "peierls/magnetic.hpp"
#include "peierls/pipeline.hpp"

namespace fs = std::filesystem;
using namespace peierls;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double slope_of(const RunReport& r, const std::string& name) {
  const auto& s = r.slopes.at(name).at("slope");
  return s.is_null() ? std::numeric_limits<double>::quiet_NaN() : s.get<double>();
}

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

std::vector<double> sorted_eigenvalues(const MatrixXcd& h) {
  const VectorXd ev = hermitian_eigenvalues(0.5 * (h + h.adjoint()));
  return {ev.data(), ev.data() + ev.size()};
}

double max_gap(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

struct Context {
  fs::path configs, out;
  RunConfig harper;
  std::optional<RunReport> sweep;
  double sweep_seconds = 0.0;

  const RunReport& harper_sweep() {
    if (!sweep) {
      const auto start = std::chrono::steady_clock::now();
      sweep = run_pipeline(harper, "compare-sweep", out / "sweep_a", 1);
      sweep_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return *sweep;
  }
};

Outcome ac1(Context& c) {
  const auto& r = c.harper_sweep();
  const double s = slope_of(r, "d_full_vs_effective");
  const bool ok = in_range(s, 0.8, 1.2) && c.sweep_seconds <= 300.0;
  return {ok, "slope " + fmt(s) + " (want [0.8, 1.2]), runtime " + fmt(c.sweep_seconds) + " s"};
}

Outcome ac2(Context& c) {
  const auto modulated = run_pipeline(parse_config(c.configs / "harper_modulated.ini"), "minimal-coupling",
                                      c.out / "modulated", 1);
  const double s = slope_of(modulated, "d_effective_vs_minimal");
  c.harper_sweep();
  double uniform = 0.0;
  const auto rows = read_file(c.out / "sweep_a" / "sweep.csv");
  std::istringstream in(rows);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    uniform = std::max(uniform, std::stod(cells.at(3)));
  }
  const bool ok = in_range(s, 0.8, 1.2) && uniform <= 1e-10;
  return {ok, "modulated slope " + fmt(s) + " (want [0.8, 1.2]), uniform max " + fmt(uniform) + " (want <= 1e-10)"};
}

Outcome ac3(Context& c) {
  const auto host = build_host(c.harper.model);
  const auto interval = c.harper.interval();
  const int l = c.harper.numerics.window_cells;
  const auto grid = bz_grid(host.lattice(), l);
  const auto island = detect_island(band_structure(host, grid), interval);
  const auto frame = smooth_frame(host, island, grid, site_trials(host.fiber_dimension(), c.harper.numerics.trial_sites));
  const auto eff = effective_hamiltonian(host, frame, l / 2 - 1);
  FieldSpec base = field_for(c.harper, {3, 256});

  std::mt19937 rng(static_cast<unsigned>(c.harper.numerics.seed));
  std::uniform_int_distribution<int> mode(-2, 2);
  std::uniform_real_distribution<double> amp(-1.5, 1.5), phase(0.0, kTwoPi), wave(-1.0, 1.0);

  const auto t = make_torus(host.lattice(), base, l);
  const auto h0 = peierls_host(host, base);
  const auto m0 = magnetic_matrix(eff, host.lattice(), base);
  const auto window = make_window(cells_in_box(2, 3), host.op.orbitals());
  const auto eff_window = make_window(cells_in_box(2, 3), eff.count());
  const MatrixXcd ht = torus_matrix(h0, t);
  const auto band_spectrum = [&](const MatrixXcd& h) {
    const auto mp = magnetic_band_projection(h, interval);
    return sorted_eigenvalues(mp.range.adjoint() * h * mp.range);
  };
  const auto ref_h = sorted_eigenvalues(ht);
  const auto ref_m = sorted_eigenvalues(torus_matrix(m0, t));
  const auto ref_p = band_spectrum(ht);
  const auto ref_wh = sorted_eigenvalues(window_matrix(h0, window));
  const auto ref_wm = sorted_eigenvalues(window_matrix(m0, eff_window));

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    FieldSpec f = base;
    std::vector<GaugeTerm> periodic, free;
    for (int k = 0; k < 3; ++k) {
      GaugeTerm g;
      g.k = host.lattice().dual * Vec2(mode(rng), mode(rng)) / static_cast<double>(l);
      g.amplitude = amp(rng);
      g.phase = phase(rng);
      periodic.push_back(g);
      GaugeTerm h;
      h.k = Vec2(wave(rng), wave(rng));
      h.amplitude = amp(rng);
      h.phase = phase(rng);
      free.push_back(h);
    }
    f.gauge_shift = periodic;
    const auto tf = make_torus(host.lattice(), f, l);
    const MatrixXcd hf = torus_matrix(peierls_host(host, f), tf);
    worst = std::max(worst, max_gap(ref_h, sorted_eigenvalues(hf)));
    worst = std::max(worst, max_gap(ref_m, sorted_eigenvalues(torus_matrix(magnetic_matrix(eff, host.lattice(), f), tf))));
    worst = std::max(worst, max_gap(ref_p, band_spectrum(hf)));
    f.gauge_shift = free;
    worst = std::max(worst, max_gap(ref_wh, sorted_eigenvalues(window_matrix(peierls_host(host, f), window))));
    worst = std::max(worst,
                     max_gap(ref_wm, sorted_eigenvalues(window_matrix(magnetic_matrix(eff, host.lattice(), f), eff_window))));
  }
  return {worst <= 1e-10, "max spectral change " + fmt(worst) + " over 20 gauges (want <= 1e-10)"};
}

const nlohmann::json& point_at(const RunReport& r, const std::string& flux) {
  for (const auto& p : r.results.at("points"))
    if (p.at("flux").get<std::string>() == flux) return p;
  throw std::runtime_error("sweep has no point at flux " + flux);
}

Outcome ac4(Context& c) {
  const auto& r = c.harper_sweep();
  const auto& p = point_at(r, "1/256").at("torus");
  const auto& p0 = point_at(r, "0/1").at("torus");
  bool finite = true;
  for (const auto& row : p.at("moments"))
    for (const auto& v : row) finite = finite && std::isfinite(v.get<double>());
  double rate = 1e300, rate0 = 1e300;
  for (const auto& v : p.at("decay_rate")) rate = std::min(rate, v.get<double>());
  for (const auto& v : p0.at("decay_rate")) rate0 = std::min(rate0, v.get<double>());
  const double rel = std::abs(rate - rate0) / rate0;
  const bool ok = finite && rate > 0.0 && rel <= 0.1;
  return {ok, "moments finite " + std::string(finite ? "yes" : "no") + ", rate " + fmt(rate) + " vs non-magnetic " +
                  fmt(rate0) + " (relative " + fmt(rel) + ", want <= 0.1)"};
}

Outcome ac5(Context& c) {
  const auto& r = c.harper_sweep();
  const double s = slope_of(r, "max_matrix_element_residual");
  const double r0 = point_at(r, "0/1").at("torus").at("residual").get<double>();
  const bool ok = in_range(s, 0.8, 1.2) && r0 <= 1e-8;
  return {ok, "slope " + fmt(s) + " (want [0.8, 1.2]), residual at 0 " + fmt(r0) + " (want <= 1e-8)"};
}

Outcome ac6(Context& c) {
  const auto& r = c.harper_sweep();
  const double s = slope_of(r, "gram_deviation");
  double loewdin = 0.0, exponent = 1e300;
  for (const auto& p : r.results.at("points")) {
    const auto& t = p.at("torus");
    loewdin = std::max(loewdin, t.at("loewdin_residual").get<double>());
    if (p.at("epsilon").get<double>() > 0.0) {
      const auto& e = t.at("x_decay_exponent");
      exponent = std::min(exponent, e.is_null() ? std::numeric_limits<double>::infinity() : e.get<double>());
    }
  }
  const bool ok = s >= 0.8 && loewdin <= 1e-10 && exponent >= 4.0;
  return {ok, "||G - 1|| slope " + fmt(s) + " (want >= 0.8), Loewdin residual " + fmt(loewdin) +
                  " (want <= 1e-10), min X decay exponent " + fmt(exponent) + " (want >= 4)"};
}

Outcome ac7(Context& c) {
  const auto host = build_host(c.harper.model);
  const auto interval = c.harper.interval();
  const int l = c.harper.numerics.window_cells;
  const auto grid = bz_grid(host.lattice(), l);
  const auto island = detect_island(band_structure(host, grid), interval);

  // band Hamiltonian kernel by fiber quadrature vs the compressed host on the torus
  const auto kernel = band_kernel(host, island, grid, l / 2 - 1, KernelKind::hamiltonian, 1.0);
  FieldSpec zero;
  const auto t = make_torus(host.lattice(), zero, l);
  const MatrixXcd ht = torus_matrix(peierls_host(host, zero), t);
  const auto mp = magnetic_band_projection(ht, interval);
  const MatrixXcd hp = ht * mp.projector();
  const int n = host.op.orbitals();
  double kernel_err = 0.0;
  for (const auto& [gamma, block] : kernel.op.kernel) {
    const auto [rep, wrap] = t.reduce(gamma);
    const MatrixXcd real_space = hp.block(torus_row(t, rep, 0, n), torus_row(t, {0, 0}, 0, n), n, n);
    kernel_err = std::max(kernel_err, max_abs(block - real_space));
  }

  // fiber multiplier vs lattice convolution
  std::mt19937 rng(static_cast<unsigned>(c.harper.numerics.seed));
  std::normal_distribution<double> gauss;
  KernelOperator conv;
  conv.lattice = host.lattice();
  conv.orbitals = 2;
  for (const auto& cell : cells_in_box(2, 3)) {
    MatrixXcd b(2, 2);
    for (int i = 0; i < 4; ++i) b(i % 2, i / 2) = cplx(gauss(rng), gauss(rng));
    conv.kernel.emplace(cell, b);
  }
  std::vector<MatrixXcd> rho;
  for (const auto& theta : grid.nodes) rho.push_back(conv.symbol(theta));
  const auto mult = fiber_multiplier(rho, grid, host.lattice());
  double conv_err = 0.0;
  for (const auto& [cell, block] : mult.kernel) conv_err = std::max(conv_err, max_abs(block - conv.at(cell)));
  LatticeFunction f;
  f.orbitals = 2;
  for (const auto& cell : cells_in_box(2, 2)) f.values.emplace(cell, VectorXcd::Random(2));
  const auto direct = conv.apply(f);
  auto fibers = bloch_transform(f, grid, host.lattice());
  for (std::size_t k = 0; k < fibers.size(); ++k) fibers[k] = rho[k] * fibers[k];
  const auto via_fibers = inverse_bloch_transform(fibers, grid, host.lattice(), cells_in_box(2, 5));
  for (const auto& [cell, v] : via_fibers.values) conv_err = std::max(conv_err, (v - direct.at(cell)).cwiseAbs().maxCoeff());

  // Pi_jk algebra
  const auto frame = smooth_frame(host, island, grid, site_trials(host.fiber_dimension(), c.harper.numerics.trial_sites));
  const auto pi = pi_kernel(frame, host.lattice(), 0, 0);
  const auto pi2 = compose_periodic(pi, pi, l);
  const auto proj = band_kernel(host, island, grid, l, KernelKind::projection, 1.0);
  double algebra_err = 0.0;
  for (const auto& [cell, block] : pi.kernel) {
    algebra_err = std::max(algebra_err, max_abs(block - pi.at(t.reduce(-cell).first).adjoint()));
    algebra_err = std::max(algebra_err, max_abs(pi2.at(cell) - block));
    algebra_err = std::max(algebra_err, max_abs(proj.op.at(cell) - block));
  }

  // non-magnetic evolution identity at t = 1 on the periodic torus
  WannierOptions wo;
  wo.max_radius = -1;
  const auto wb = wannier_functions(host, frame, wo);
  const auto eff = effective_hamiltonian(host, frame);
  const MatrixXcd w = modified_wannier(wb, zero, t);
  const MatrixXcd evolved = w.adjoint() * unitary_propagator(hermitian_eig(ht, "torus host"), 1.0) * w;
  std::vector<MatrixXcd> mu_t;
  for (const auto& mu : eff.mu) mu_t.push_back(unitary_propagator(hermitian_eig(mu), 1.0));
  const auto coeff = grid_fourier(mu_t, grid, host.lattice(), t.cells);
  const int nb = wb.count;
  double evo_err = 0.0;
  for (const auto& a : t.cells)
    for (const auto& b : t.cells) {
      const MatrixXcd block = evolved.block(t.cell_index.at(a) * nb, t.cell_index.at(b) * nb, nb, nb);
      evo_err = std::max(evo_err, max_abs(block - coeff.at(t.cell_difference(a, b))));
    }

  const bool ok = kernel_err <= 1e-8 && conv_err <= 1e-10 && algebra_err <= 1e-8 && evo_err <= 1e-6;
  return {ok, "band kernel " + fmt(kernel_err) + " (<= 1e-8), multiplier " + fmt(conv_err) + " (<= 1e-10), Pi algebra " +
                  fmt(algebra_err) + " (<= 1e-8), evolution " + fmt(evo_err) + " (<= 1e-6)"};
}

Outcome ac8(Context& c) {
  const auto free = square2d(1, {0.0}, 1.0);
  FieldSpec zero;
  FieldSpec half;
  half.kind = GaugeKind::landau_uniform;
  half.epsilon = kTwoPi / 2.0;
  const auto s0 = magnetic_bloch_spectrum(peierls_host(free, zero), 4, 4).values;
  const auto s1 = magnetic_bloch_spectrum(peierls_host(free, half), 4, 4).values;
  const double r = 2.0 * std::sqrt(2.0);
  const double endpoint_err = std::max({std::abs(s0.front() + 4.0), std::abs(s0.back() - 4.0),
                                        std::abs(s1.front() + r), std::abs(s1.back() - r)});

  std::mt19937 rng(static_cast<unsigned>(c.harper.numerics.seed));
  std::normal_distribution<double> gauss;
  std::uniform_int_distribution<int> rank(1, 5);
  const auto random = [&](int rows, int cols) {
    MatrixXcd m(rows, cols);
    for (int j = 0; j < cols; ++j)
      for (int i = 0; i < rows; ++i) m(i, j) = cplx(gauss(rng), gauss(rng));
    return m;
  };
  const auto projector = [](const MatrixXcd& a) {
    const Eigen::HouseholderQR<MatrixXcd> qr(a);
    const MatrixXcd q = qr.householderQ() * MatrixXcd::Identity(a.rows(), a.cols());
    return MatrixXcd(q * q.adjoint());
  };
  double unitarity = 0.0, intertwining = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const int dim = 8, k = rank(rng);
    const MatrixXcd a = random(dim, k);
    const MatrixXcd p = projector(a);
    const MatrixXcd q = projector(a + 0.1 * random(dim, k));
    const MatrixXcd u = sz_nagy(p, q);
    unitarity = std::max(unitarity, max_abs(u.adjoint() * u - MatrixXcd::Identity(dim, dim)));
    intertwining = std::max(intertwining, max_abs(u * q - p * u));
  }
  const bool ok = endpoint_err <= 1e-8 && unitarity <= 1e-12 && intertwining <= 1e-12;
  return {ok, "endpoint error " + fmt(endpoint_err) + " (<= 1e-8), unitarity " + fmt(unitarity) +
                  ", intertwining " + fmt(intertwining) + " (<= 1e-12)"};
}

Outcome ac9(Context& c) {
  const auto r = run_pipeline(c.harper, "evolve", c.out / "evolve", 1);
  const double s = slope_of(r, "evolve_error_t1");
  bool duhamel = true;
  for (const auto& p : r.results.at("points")) duhamel = duhamel && p.at("duhamel_holds").get<bool>();
  const bool ok = in_range(s, 0.8, 1.2) && duhamel;
  return {ok, "err(1) slope " + fmt(s) + " (want [0.8, 1.2]), Duhamel bound " + (duhamel ? "holds" : "violated")};
}

nlohmann::json without_timings(const fs::path& report) {
  auto j = nlohmann::json::parse(read_file(report));
  j.erase("timings");
  j["results"].erase("cache");
  j.erase("warnings");
  return j;
}

Outcome ac10(Context& c) {
  c.harper_sweep();
  const fs::path a = c.out / "sweep_a";
  const std::string first = read_file(a / "sweep.csv");
  const auto report_first = without_timings(a / "report.json");
  const auto warm = run_pipeline(c.harper, "compare-sweep", a, 2);
  const bool warm_same = read_file(a / "sweep.csv") == first && without_timings(a / "report.json") == report_first;
  const bool hit = warm.results.at("cache").at("main") == "hit" && warm.results.at("cache").at("torus") == "hit";
  fs::remove_all(a / "cache");
  run_pipeline(c.harper, "compare-sweep", a, 1);
  const bool cold_same = read_file(a / "sweep.csv") == first && without_timings(a / "report.json") == report_first;
  const bool ok = warm_same && cold_same && hit;
  return {ok, std::string("repeat (2 threads, cached) ") + (warm_same ? "identical" : "differs") + ", cache " +
                  (hit ? "hit" : "missed") + ", after cache deletion " + (cold_same ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.configs = argc > 1 ? fs::path(argv[1]) : fs::path("configs");
  ctx.out = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_out");
  fs::remove_all(ctx.out);
  fs::create_directories(ctx.out);
  ctx.harper = parse_config(ctx.configs / "harper.ini");

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"AC1 isospectrality of the magnetic effective matrix", ac1},
      {"AC2 minimal coupling of the effective symbol", ac2},
      {"AC3 gauge covariance", ac3},
      {"AC4 localization of magnetic Wannier functions", ac4},
      {"AC5 matrix-element residual", ac5},
      {"AC6 Gram and Loewdin estimates", ac6},
      {"AC7 oracle equivalences", ac7},
      {"AC8 exact landmarks", ac8},
      {"AC9 dynamics", ac9},
      {"AC10 determinism", ac10}};
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
