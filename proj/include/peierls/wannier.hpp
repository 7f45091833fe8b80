#pragma once

// Smooth Bloch frames of an isolated island, composite Wannier functions, the
// effective Hamiltonian mu(theta) with its hopping coefficients, the Pi_jk
// operators and the non-magnetic evolution identity.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "peierls/bloch.hpp"
#include "peierls/errors.hpp"
#include "peierls/host.hpp"
#include "peierls/lattice.hpp"
#include "peierls/linalg.hpp"

namespace peierls {

/// A (A^* A)^{-1/2}; throws SingularTrial when A^* A has an eigenvalue below `floor`.
inline MatrixXcd lowdin(const MatrixXcd& a, double floor, const std::string& where, double* smallest = nullptr) {
  const MatrixXcd g = a.adjoint() * a;
  const auto eig = hermitian_eig(0.5 * (g + g.adjoint()), where);
  const double lo = eig.values.minCoeff();
  if (smallest) *smallest = lo;
  if (!(lo > floor)) {
    std::ostringstream os;
    os << "trial Gram matrix is singular at " << where << " (smallest eigenvalue " << lo << ")";
    throw SingularTrial(os.str());
  }
  return a * hermitian_function(eig, [](double x) { return cplx(1.0 / std::sqrt(x)); });
}

/// Identification of the fiber at theta + e*_1 with the fiber at theta.
/// Discrete hosts have periodic fibers; plane-wave fibers shift the index by one.
inline MatrixXcd seam_map(const HostModel& host, const MatrixXcd& v) {
  if (host.is_discrete()) return v;
  MatrixXcd out = MatrixXcd::Zero(v.rows(), v.cols());
  out.bottomRows(v.rows() - 1) = v.topRows(v.rows() - 1);
  return out;
}

struct BlochFrame {
  BrillouinGrid grid;
  std::vector<MatrixXcd> frame;  ///< n_f x N per node
  std::optional<int> chern_number;
  int winding = 0;
  double min_trial_gram = 1.0;
  double smoothness_constant = 0.0;  ///< M * max nearest-node increment
  std::vector<std::string> warnings;

  int count() const { return frame.empty() ? 0 : static_cast<int>(frame.front().cols()); }
};

/// Fukui-Hatsugai-Suzuki lattice field strength; `bases` holds an orthonormal
/// basis of the island subspace at each node of a 2D grid.
inline double lattice_chern_number(const std::vector<MatrixXcd>& bases, const BrillouinGrid& grid) {
  const int m = grid.points_per_dim;
  const auto link = [&](std::size_t a, std::size_t b) {
    const cplx d = (bases[a].adjoint() * bases[b]).determinant();
    return std::abs(d) > 0.0 ? d / std::abs(d) : cplx(1.0);
  };
  double total = 0.0;
  for (int k1 = 0; k1 < m; ++k1)
    for (int k2 = 0; k2 < m; ++k2) {
      const auto n00 = grid.index_of(k1, k2), n10 = grid.index_of(k1 + 1, k2);
      const auto n11 = grid.index_of(k1 + 1, k2 + 1), n01 = grid.index_of(k1, k2 + 1);
      total += std::arg(link(n00, n10) * link(n10, n11) * std::conj(link(n01, n11)) * std::conj(link(n00, n01)));
    }
  return total / kTwoPi;
}

/// Default trials: island eigenvectors of the fiber at theta = 0.
inline MatrixXcd default_trials(const HostModel& host, const SpectralIsland& island) {
  return island_eigenvectors(fiber_hamiltonian(host, Vec2::Zero()), island);
}

/// Unit vectors on the given fiber indices.
inline MatrixXcd site_trials(int fiber_dim, const std::vector<int>& sites) {
  MatrixXcd t = MatrixXcd::Zero(fiber_dim, static_cast<Eigen::Index>(sites.size()));
  for (std::size_t j = 0; j < sites.size(); ++j) {
    if (sites[j] < 0 || sites[j] >= fiber_dim) throw ValidationError("trial orbital index out of range");
    t(sites[j], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return t;
}

struct FrameOptions {
  double singular_floor = 1e-8;
  double chern_tolerance = 1e-6;
};

/// Smooth orthonormal frame of the island subspace on the grid: projection
/// method against fixed trials in d = 2 (after a zero-Chern check), parallel
/// transport with holonomy correction in d = 1.
inline BlochFrame smooth_frame(const HostModel& host, const SpectralIsland& island, const BrillouinGrid& grid,
                               std::optional<MatrixXcd> trials = std::nullopt, const FrameOptions& opts = {}) {
  const int n = island.count;
  std::vector<MatrixXcd> bases;
  bases.reserve(grid.size());
  for (const auto& theta : grid.nodes) bases.push_back(island_eigenvectors(fiber_hamiltonian(host, theta), island));
  MatrixXcd t = trials ? *trials : default_trials(host, island);
  if (t.rows() != host.fiber_dimension() || t.cols() != n)
    throw ValidationError("trial matrix must be fiber_dimension x N");

  BlochFrame bf;
  bf.grid = grid;
  bf.frame.resize(grid.size());
  const int m = grid.points_per_dim;

  if (grid.dim == 2) {
    const double c = lattice_chern_number(bases, grid);
    const long ci = std::lround(c);
    if (std::abs(c - static_cast<double>(ci)) > opts.chern_tolerance)
      bf.warnings.push_back("lattice Chern number is not close to an integer: grid too coarse");
    bf.chern_number = static_cast<int>(ci);
    if (ci != 0)
      throw TopologicalObstruction("island has Chern number " + std::to_string(ci) +
                                   "; no smooth periodic frame exists");
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const MatrixXcd pt = bases[k] * (bases[k].adjoint() * t);
      double smallest = 0.0;
      bf.frame[k] = lowdin(pt, opts.singular_floor, format_theta(grid.nodes[k]), &smallest);
      bf.min_trial_gram = std::min(bf.min_trial_gram, smallest);
    }
  } else {
    const auto project = [&](std::size_t k, const MatrixXcd& v) { return MatrixXcd(bases[k] * (bases[k].adjoint() * v)); };
    double smallest = 0.0;
    bf.frame[0] = lowdin(project(0, t), opts.singular_floor, format_theta(grid.nodes[0]), &smallest);
    bf.min_trial_gram = smallest;
    for (int k = 1; k < m; ++k)
      bf.frame[k] = lowdin(project(k, bf.frame[k - 1]), opts.singular_floor, format_theta(grid.nodes[k]));
    const MatrixXcd closed =
        lowdin(project(0, seam_map(host, bf.frame[m - 1])), opts.singular_floor, "the zone boundary");
    const MatrixXcd holonomy = bf.frame[0].adjoint() * closed;
    Eigen::ComplexEigenSolver<MatrixXcd> es(holonomy);
    if (es.info() != Eigen::Success) throw NumericalError("holonomy eigendecomposition failed");
    const MatrixXcd v = es.eigenvectors();
    const MatrixXcd vinv = v.inverse();
    VectorXd phases(n);
    for (int a = 0; a < n; ++a) phases[a] = std::arg(es.eigenvalues()[a]);
    for (int k = 1; k < m; ++k) {
      VectorXcd d(n);
      for (int a = 0; a < n; ++a) d[a] = std::exp(-kI * phases[a] * (static_cast<double>(k) / m));
      bf.frame[k] = bf.frame[k] * (v * d.asDiagonal() * vinv);
    }
    double wind = 0.0;
    for (int k = 0; k < m; ++k) {
      const cplx cur = (t.adjoint() * bf.frame[k]).determinant();
      const cplx next = (t.adjoint() * bf.frame[(k + 1) % m]).determinant();
      wind += std::arg(next / cur);
    }
    bf.winding = static_cast<int>(std::lround(wind / kTwoPi));
  }

  double worst = 0.0;
  for (int k1 = 0; k1 < m; ++k1)
    for (int k2 = 0; k2 < (grid.dim == 2 ? m : 1); ++k2) {
      const auto a = grid.index_of(k1, k2);
      const MatrixXcd next1 = k1 + 1 == m ? seam_map(host, bf.frame[a]) : bf.frame[grid.index_of(k1 + 1, k2)];
      if (k1 + 1 == m) {
        worst = std::max(worst, (bf.frame[grid.index_of(0, k2)] - next1).norm());
      } else {
        worst = std::max(worst, (next1 - bf.frame[a]).norm());
      }
      if (grid.dim == 2) worst = std::max(worst, (bf.frame[grid.index_of(k1, k2 + 1)] - bf.frame[a]).norm());
    }
  bf.smoothness_constant = worst * m;
  return bf;
}

// ---------------------------------------------------------------------------
// Wannier functions

struct DecayFit {
  double rate = 0.0;  ///< fitted exponential rate (inverse length), > 0 for localized functions
  int points = 0;
};

/// Least-squares fit of log(max |f| in unit-width distance shells) against distance.
inline DecayFit fit_exponential_decay(const std::vector<std::pair<double, double>>& samples, double shell_width,
                                      double floor = 1e-13) {
  std::map<long, double> shells;
  double peak = 0.0;
  for (const auto& [r, v] : samples) {
    auto& s = shells[static_cast<long>(std::floor(r / shell_width))];
    s = std::max(s, v);
    peak = std::max(peak, v);
  }
  std::vector<double> xs, ys;
  for (const auto& [k, v] : shells) {
    if (k == 0) continue;
    if (!(v > floor * peak)) break;
    xs.push_back((k + 0.5) * shell_width);
    ys.push_back(std::log(v));
  }
  DecayFit fit;
  fit.points = static_cast<int>(xs.size());
  if (xs.size() < 2) return fit;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= xs.size();
  my /= xs.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
  fit.rate = -sxy / sxx;
  return fit;
}

struct WannierBasis {
  LatticeSpec lattice;
  std::vector<Vec2> positions;
  int count = 0;
  std::vector<LatticeFunction> functions;  ///< discrete hosts: w_j on cells within the window
  // continuum hosts: samples of w_j(x) on a uniform x grid
  std::vector<double> sample_x;
  std::vector<VectorXcd> samples;
  int window_radius = 0;
  double dropped_mass = 0.0;
  std::vector<std::array<double, 5>> moments;  ///< sup <x>^m |w_j(x)|, m = 0..4
  std::vector<double> decay_rate;
};

struct WannierOptions {
  int max_radius = 12;          ///< R_w upper bound; < 0 keeps the full grid period
  double mass_tolerance = 1e-10;
  int samples_per_cell = 16;    ///< continuum sampling density
};

namespace detail {
inline void fill_decay(WannierBasis& wb, const std::vector<std::vector<std::pair<double, double>>>& profiles,
                       double shell) {
  wb.moments.assign(wb.count, {0, 0, 0, 0, 0});
  wb.decay_rate.assign(wb.count, 0.0);
  for (int j = 0; j < wb.count; ++j) {
    for (const auto& [r, v] : profiles[j]) {
      const double br = std::sqrt(1.0 + r * r);
      for (int m = 0; m <= 4; ++m) wb.moments[j][m] = std::max(wb.moments[j][m], std::pow(br, m) * v);
    }
    wb.decay_rate[j] = fit_exponential_decay(profiles[j], shell).rate;
  }
}
}  // namespace detail

/// w_j(s, gamma) = M^{-d} sum_theta Psi_{s j}(theta) exp(-i <theta, gamma>), kept on
/// the smallest Chebyshev window whose dropped l^2 mass is within tolerance.
inline WannierBasis wannier_functions(const HostModel& host, const BlochFrame& frame, const WannierOptions& opts = {}) {
  WannierBasis wb;
  wb.lattice = host.lattice();
  wb.count = frame.count();
  const auto& grid = frame.grid;
  const int dim = wb.lattice.dim;
  const double shell = std::min(wb.lattice.basis.col(0).norm(), dim == 2 ? wb.lattice.basis.col(1).norm() : 1e300);

  if (!host.is_discrete()) {
    const int radius = opts.max_radius < 0 ? grid.points_per_dim / 2 : opts.max_radius;
    const double a = wb.lattice.basis(0, 0);
    const int per = opts.samples_per_cell;
    for (int i = -radius * per; i <= radius * per; ++i) wb.sample_x.push_back(a * static_cast<double>(i) / per);
    wb.samples.assign(wb.sample_x.size(), VectorXcd::Zero(wb.count));
    const double w = 1.0 / static_cast<double>(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const Vec2& theta = grid.nodes[k];
      for (std::size_t i = 0; i < wb.sample_x.size(); ++i) {
        VectorXcd basis(host.fiber_dimension());
        for (int b = 0; b < host.fiber_dimension(); ++b) basis[b] = continuum_basis_value(host, b, theta, wb.sample_x[i]);
        wb.samples[i] += w * (frame.frame[k].transpose() * basis);
      }
    }
    wb.window_radius = radius;
    double kept = 0.0;
    for (const auto& s : wb.samples) kept += s.squaredNorm() * (a / per);
    wb.dropped_mass = std::max(0.0, wb.count - kept);
    std::vector<std::vector<std::pair<double, double>>> profiles(wb.count);
    for (std::size_t i = 0; i < wb.sample_x.size(); ++i)
      for (int j = 0; j < wb.count; ++j) profiles[j].emplace_back(std::abs(wb.sample_x[i]), std::abs(wb.samples[i][j]));
    detail::fill_decay(wb, profiles, std::abs(a));
    return wb;
  }

  wb.positions = host.op.positions;
  const auto period = cells_in_period(dim, grid.points_per_dim);
  const auto full = grid_fourier(frame.frame, grid, wb.lattice, period);  // cell -> n_f x N

  int radius = grid.points_per_dim;  // covers the whole period
  double dropped = 0.0;
  if (opts.max_radius >= 0) {
    std::map<int, double> shell_mass;
    for (const auto& [c, block] : full) shell_mass[chebyshev_norm(c)] += block.squaredNorm();
    double tail = 0.0;
    for (const auto& [r, mass] : shell_mass) tail += mass;
    radius = -1;
    double outside = tail;
    for (const auto& [r, mass] : shell_mass) {
      outside -= mass;
      if (r > opts.max_radius) break;
      if (outside <= opts.mass_tolerance * wb.count) {
        radius = r;
        dropped = std::max(0.0, outside);
        break;
      }
    }
    if (radius < 0) {
      std::ostringstream os;
      os << "Wannier window saturated: dropped mass exceeds " << opts.mass_tolerance
         << " at radius " << opts.max_radius << "; increase bz_points or wannier_radius";
      throw NumericalError(os.str());
    }
  }
  wb.window_radius = radius;
  wb.dropped_mass = dropped;
  wb.functions.assign(wb.count, LatticeFunction{host.op.orbitals(), {}});
  std::vector<std::vector<std::pair<double, double>>> profiles(wb.count);
  for (const auto& [c, block] : full) {
    if (chebyshev_norm(c) > radius) continue;
    for (int j = 0; j < wb.count; ++j) {
      wb.functions[j].values.emplace(c, block.col(j));
      for (int s = 0; s < host.op.orbitals(); ++s)
        profiles[j].emplace_back((wb.lattice.point(c) + wb.positions[s]).norm(), std::abs(block(s, j)));
    }
  }
  detail::fill_decay(wb, profiles, shell);
  return wb;
}

// ---------------------------------------------------------------------------
// Effective Hamiltonian

struct EffectiveHamiltonian {
  BrillouinGrid grid;
  std::vector<MatrixXcd> mu;                ///< N x N per node
  std::map<Cell, MatrixXcd> hoppings;       ///< mu_hat(gamma) = M^{-d} sum mu(theta) exp(-i <theta, gamma>)
  int radius = 0;
  double dropped_mass = 0.0;

  int count() const { return mu.empty() ? 0 : static_cast<int>(mu.front().rows()); }

  MatrixXcd coefficient(const Cell& c) const {
    const auto it = hoppings.find(c);
    return it == hoppings.end() ? MatrixXcd::Zero(count(), count()) : it->second;
  }

  /// The effective model as a periodic operator with every orbital at the cell origin.
  PeriodicOperator as_operator(const LatticeSpec& lat) const {
    PeriodicOperator op;
    op.lattice = lat;
    op.positions.assign(count(), Vec2::Zero());
    for (const auto& [c, block] : hoppings) op.hoppings.emplace(-c, block);
    return op;
  }

  MatrixXcd symbol(const Vec2& theta, const LatticeSpec& lat) const {
    MatrixXcd s = MatrixXcd::Zero(count(), count());
    for (const auto& [c, block] : hoppings) s += block * std::exp(kI * theta.dot(lat.point(c)));
    return s;
  }
};

/// mu(theta) = Psi^* H(theta) Psi and its hopping coefficients; `radius` < 0
/// keeps the full grid period, otherwise coefficients beyond it are dropped.
inline EffectiveHamiltonian effective_hamiltonian(const HostModel& host, const BlochFrame& frame, int radius = -1) {
  EffectiveHamiltonian eff;
  eff.grid = frame.grid;
  double total = 0.0;
  for (std::size_t k = 0; k < frame.grid.size(); ++k) {
    const MatrixXcd h = fiber_hamiltonian(host, frame.grid.nodes[k]).matrix;
    MatrixXcd mu = frame.frame[k].adjoint() * h * frame.frame[k];
    mu = 0.5 * (mu + mu.adjoint());
    total += mu.squaredNorm();
    eff.mu.push_back(std::move(mu));
  }
  total /= static_cast<double>(frame.grid.size());
  std::vector<Cell> cells;
  for (const auto& c : cells_in_period(host.lattice().dim, frame.grid.points_per_dim))
    if (radius < 0 || chebyshev_norm(c) <= radius) cells.push_back(c);
  eff.hoppings = grid_fourier(eff.mu, frame.grid, host.lattice(), cells);
  eff.radius = radius < 0 ? frame.grid.points_per_dim : radius;
  double kept = 0.0;
  for (const auto& [c, block] : eff.hoppings) kept += block.squaredNorm();
  eff.dropped_mass = std::max(0.0, total - kept);
  return eff;
}

// ---------------------------------------------------------------------------
// Pi_jk operators

/// Kernel of U^{-1} |psi_k><psi_j| U over one full grid period.
inline KernelOperator pi_kernel(const BlochFrame& frame, const LatticeSpec& lat, int j, int k) {
  if (j < 0 || k < 0 || j >= frame.count() || k >= frame.count()) throw ValidationError("Pi_jk index out of range");
  std::vector<MatrixXcd> fibers;
  fibers.reserve(frame.grid.size());
  for (const auto& psi : frame.frame) fibers.push_back(psi.col(k) * psi.col(j).adjoint());
  return fiber_multiplier(fibers, frame.grid, lat);
}

/// Composition of two kernels that are periodic with the grid period (cyclic convolution).
inline KernelOperator compose_periodic(const KernelOperator& a, const KernelOperator& b, int period) {
  KernelOperator out;
  out.lattice = a.lattice;
  out.orbitals = a.orbitals;
  const int lo = -(period / 2);
  const auto wrap = [&](int v) { return ((v - lo) % period + period) % period + lo; };
  for (const auto& [ga, ba] : a.kernel)
    for (const auto& [gb, bb] : b.kernel) {
      Cell c{wrap(ga[0] + gb[0]), a.lattice.dim == 2 ? wrap(ga[1] + gb[1]) : 0};
      auto [it, inserted] = out.kernel.try_emplace(c, MatrixXcd::Zero(a.orbitals, a.orbitals));
      it->second += ba * bb;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Finite windows of a periodic operator

/// Index of the sites in a box of cells: (cell, orbital) -> row.
struct SiteWindow {
  std::vector<Cell> cells;
  std::map<Cell, int> cell_index;
  int orbitals = 1;

  int size() const { return static_cast<int>(cells.size()) * orbitals; }
  int row(const Cell& c, int s) const {
    const auto it = cell_index.find(c);
    return it == cell_index.end() ? -1 : it->second * orbitals + s;
  }
};

inline SiteWindow make_window(const std::vector<Cell>& cells, int orbitals) {
  SiteWindow w;
  w.cells = cells;
  w.orbitals = orbitals;
  for (std::size_t i = 0; i < cells.size(); ++i) w.cell_index.emplace(cells[i], static_cast<int>(i));
  return w;
}

/// Open-boundary restriction of a periodic operator to a window.
inline MatrixXcd window_matrix(const PeriodicOperator& op, const SiteWindow& w) {
  MatrixXcd h = MatrixXcd::Zero(w.size(), w.size());
  for (const auto& c : w.cells)
    for (const auto& [gamma, block] : op.hoppings) {
      const Cell d = c + gamma;
      if (!w.cell_index.count(d)) continue;
      for (int s = 0; s < op.orbitals(); ++s)
        for (int sp = 0; sp < op.orbitals(); ++sp) {
          const cplx amp = block(s, sp);
          if (amp != cplx{}) h(w.row(c, s), w.row(d, sp)) += amp;
        }
    }
  return h;
}

/// Embeds tau_{-alpha} w (the function w(. - alpha)) into the window.
inline VectorXcd embed(const LatticeFunction& f, const Cell& alpha, const SiteWindow& w) {
  VectorXcd v = VectorXcd::Zero(w.size());
  for (const auto& [c, val] : f.values) {
    const int r = w.row(c + alpha, 0);
    if (r >= 0) v.segment(r, w.orbitals) = val;
  }
  return v;
}

struct EvolutionCheck {
  double residual = 0.0;
  int pairs = 0;
};

/// Compares <W_alpha, exp(-itH) W_beta> from a dense exponential of the host on
/// an open window of half-width `half_window` cells with the grid Fourier
/// coefficients of exp(-it mu(theta)), for alpha, beta within `pair_radius` of the centre.
inline EvolutionCheck nonmagnetic_evolution_check(const HostModel& host, const WannierBasis& wb,
                                                  const EffectiveHamiltonian& eff, double t, int half_window,
                                                  int pair_radius = 2) {
  if (!host.is_discrete()) throw ValidationError("evolution check needs a discrete host");
  const int dim = host.lattice().dim;
  const auto w = make_window(cells_in_box(dim, half_window), host.op.orbitals());
  const auto eig = hermitian_eig(window_matrix(host.op, w), "windowed host");
  const MatrixXcd u = unitary_propagator(eig, t);

  std::vector<MatrixXcd> mu_t;
  for (const auto& mu : eff.mu) mu_t.push_back(unitary_propagator(hermitian_eig(mu), t));
  const auto centre = cells_in_box(dim, pair_radius);
  std::vector<Cell> diffs;
  for (const auto& c : cells_in_box(dim, 2 * pair_radius)) diffs.push_back(c);
  const auto coeff = grid_fourier(mu_t, eff.grid, host.lattice(), diffs);

  EvolutionCheck out;
  std::map<std::pair<Cell, int>, VectorXcd> vecs, evolved;
  for (const auto& a : centre)
    for (int j = 0; j < wb.count; ++j) {
      vecs.emplace(std::make_pair(a, j), embed(wb.functions[j], a, w));
      evolved.emplace(std::make_pair(a, j), u * vecs.at({a, j}));
    }
  for (const auto& a : centre)
    for (const auto& b : centre)
      for (int j = 0; j < wb.count; ++j)
        for (int k = 0; k < wb.count; ++k) {
          const cplx lhs = vecs.at({a, j}).dot(evolved.at({b, k}));
          const cplx rhs = coeff.at(a - b)(j, k);
          out.residual = std::max(out.residual, std::abs(lhs - rhs));
          ++out.pairs;
        }
  return out;
}

}  // namespace peierls
