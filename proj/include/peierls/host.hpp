#pragma once

// Concrete Gamma-periodic Hamiltonians and their Bloch fibers.
//
// Discrete hosts are finite-range hopping operators on l^2(Gamma; C^{n_s}):
//   amplitude(s, s', gamma) = < (s, alpha) | H | (s', alpha + gamma) >
// and the fiber at quasi-momentum theta is
//   H(theta)_{s s'} = sum_gamma amplitude(s, s', gamma) exp(-i <theta, gamma>).
// Fiber eigenvectors are cell-periodic; the phase exp(-i <theta, [x]>) is
// applied when synthesising Wannier functions.
//
// The continuum host -d^2/dx^2 + V(x) on a 1D lattice of spacing a uses the
// plane waves exp(-i 2 pi n x / a), |n| <= n_max, so that the fiber reads
//   H(theta)_{n n'} = (theta + 2 pi n / a)^2 delta_{n n'} + V_{n - n'}.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "peierls/errors.hpp"
#include "peierls/lattice.hpp"
#include "peierls/linalg.hpp"

namespace peierls {

/// A Gamma-periodic finite-range operator on l^2(Gamma; C^n): the common
/// shape of discrete hosts and of effective (Wannier) models.
struct PeriodicOperator {
  LatticeSpec lattice;
  std::vector<Vec2> positions;            ///< position of each orbital inside the cell
  std::map<Cell, MatrixXcd> hoppings;     ///< amplitude blocks keyed by gamma

  int orbitals() const { return static_cast<int>(positions.size()); }

  MatrixXcd fiber(const Vec2& theta) const {
    MatrixXcd h = MatrixXcd::Zero(orbitals(), orbitals());
    for (const auto& [gamma, block] : hoppings)
      h += block * std::exp(-kI * theta.dot(lattice.point(gamma)));
    return h;
  }

  int range_radius() const {
    int r = 0;
    for (const auto& [gamma, block] : hoppings) r = std::max(r, chebyshev_norm(gamma));
    return r;
  }

  /// max |amp(gamma) - amp(-gamma)^*| over all stored blocks.
  double hermiticity_defect() const {
    double worst = 0.0;
    for (const auto& [gamma, block] : hoppings) {
      const auto it = hoppings.find(-gamma);
      const MatrixXcd partner = it == hoppings.end() ? MatrixXcd::Zero(block.rows(), block.cols())
                                                      : MatrixXcd(it->second.adjoint());
      worst = std::max(worst, max_abs(block - partner));
    }
    return worst;
  }
};

enum class HostKind { discrete_2d, discrete_1d, continuum_1d };

struct HostModel {
  HostKind kind = HostKind::discrete_2d;
  PeriodicOperator op;  ///< discrete hosts; for the continuum only lattice is used
  std::string family;

  // continuum_1d
  std::map<int, cplx> potential_coefficients;  ///< V_m of V(x) = sum_m V_m exp(-i 2 pi m x / a)
  int n_max = 0;

  const LatticeSpec& lattice() const { return op.lattice; }
  bool is_discrete() const { return kind != HostKind::continuum_1d; }
  int fiber_dimension() const { return is_discrete() ? op.orbitals() : 2 * n_max + 1; }
  int sites_per_cell() const { return fiber_dimension(); }
};

struct FiberHamiltonian {
  Vec2 theta = Vec2::Zero();
  MatrixXcd matrix;
};

/// Parameters of the built-in model families.
struct ModelConfig {
  std::string kind = "ssh1d";  ///< square2d | ssh1d | mathieu1d | hopping_list
  // square2d
  int q = 1;
  std::vector<double> potential;  ///< q*q onsite values, site (i, j) at index i + q*j
  double hopping = 1.0;
  // ssh1d
  double t1 = 1.0;
  double t2 = 0.5;
  // mathieu1d
  double v = 1.0;
  int n_max = 8;
  // hopping_list
  std::string file;
  std::vector<Vec2> basis;
  std::vector<Vec2> positions;
};

inline void validate_host(const HostModel& host, double tol = 1e-12) {
  if (host.is_discrete()) {
    if (host.op.orbitals() < 1) throw ValidationError("host needs at least one site per cell");
    for (const auto& [gamma, block] : host.op.hoppings) {
      if (block.rows() != host.op.orbitals() || block.cols() != host.op.orbitals())
        throw ValidationError("hopping block has the wrong shape");
      if (!block.allFinite()) throw ValidationError("hopping amplitudes must be finite");
      if (host.lattice().dim == 1 && gamma[1] != 0)
        throw ValidationError("one-dimensional host has a hopping with a second lattice coordinate");
    }
    const double scale = std::max(1.0, [&] {
      double m = 0.0;
      for (const auto& [g, b] : host.op.hoppings) m = std::max(m, max_abs(b));
      return m;
    }());
    if (host.op.hermiticity_defect() > tol * scale)
      throw ValidationError("host hoppings are not Hermitian: amplitude(s,s',g) != conj(amplitude(s',s,-g))");
  } else {
    if (host.n_max < 0) throw ValidationError("plane-wave cutoff must be nonnegative");
    for (const auto& [m, value] : host.potential_coefficients) {
      const auto it = host.potential_coefficients.find(-m);
      const cplx partner = it == host.potential_coefficients.end() ? cplx{} : std::conj(it->second);
      if (std::abs(value - partner) > tol * std::max(1.0, std::abs(value)))
        throw ValidationError("continuum potential coefficients are not conjugate-symmetric");
    }
  }
}

namespace detail {
inline void add_hopping(PeriodicOperator& op, int from, int to, const Cell& gamma, cplx amp) {
  auto [it, inserted] = op.hoppings.try_emplace(gamma, MatrixXcd::Zero(op.orbitals(), op.orbitals()));
  it->second(from, to) += amp;
}
}  // namespace detail

/// Square lattice with nearest-neighbour hopping t and a q-periodic onsite
/// potential, folded into the supercell lattice q Z^2 with q^2 sites per cell.
inline HostModel square2d(int q, std::vector<double> potential, double t) {
  if (q < 1) throw ValidationError("square2d needs q >= 1");
  if (potential.empty()) potential.assign(static_cast<std::size_t>(q) * q, 0.0);
  if (static_cast<int>(potential.size()) != q * q)
    throw ValidationError("square2d potential must have q*q values");
  HostModel host;
  host.kind = HostKind::discrete_2d;
  host.family = "square2d";
  host.op.lattice = build_lattice({Vec2(q, 0.0), Vec2(0.0, q)});
  const int shift = q / 2;
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < q; ++i) host.op.positions.emplace_back(i - shift, j - shift);
  const auto site = [q](int i, int j) { return i + q * j; };
  const auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  host.op.hoppings[{0, 0}] = MatrixXcd::Zero(q * q, q * q);
  for (int j = 0; j < q; ++j) {
    for (int i = 0; i < q; ++i) {
      host.op.hoppings[{0, 0}](site(i, j), site(i, j)) += potential[site(i, j)];
      const int steps[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& st : steps) {
        const int ni = i + st[0], nj = j + st[1];
        const int ci = floor_div(ni, q), cj = floor_div(nj, q);
        detail::add_hopping(host.op, site(i, j), site(ni - ci * q, nj - cj * q), {ci, cj}, t);
      }
    }
  }
  validate_host(host);
  return host;
}

/// Dimerised chain: sites A (x = -1/4) and B (x = +1/4), intra-cell hopping t1
/// between A and B, inter-cell hopping t2 between B and the next cell's A.
inline HostModel ssh1d(double t1, double t2) {
  HostModel host;
  host.kind = HostKind::discrete_1d;
  host.family = "ssh1d";
  host.op.lattice = build_lattice({Vec2(1.0, 0.0)});
  host.op.positions = {Vec2(-0.25, 0.0), Vec2(0.25, 0.0)};
  detail::add_hopping(host.op, 0, 1, {0, 0}, t1);
  detail::add_hopping(host.op, 1, 0, {0, 0}, t1);
  detail::add_hopping(host.op, 1, 0, {1, 0}, t2);
  detail::add_hopping(host.op, 0, 1, {-1, 0}, t2);
  validate_host(host);
  return host;
}

/// -d^2/dx^2 + 2 v cos(2 pi x) truncated to 2 n_max + 1 plane waves.
inline HostModel mathieu1d(double v, int n_max) {
  HostModel host;
  host.kind = HostKind::continuum_1d;
  host.family = "mathieu1d";
  host.op.lattice = build_lattice({Vec2(1.0, 0.0)});
  host.n_max = n_max;
  if (v != 0.0) {
    host.potential_coefficients[1] = v;
    host.potential_coefficients[-1] = v;
  }
  validate_host(host);
  return host;
}

/// Parses the hopping-list text format: one `s s' gamma_1 gamma_2 re im`
/// line per amplitude, `#` starts a comment. Hermitian partners must be listed.
inline HostModel hopping_list_host(std::istream& in, const std::vector<Vec2>& basis,
                                   const std::vector<Vec2>& positions) {
  HostModel host;
  host.family = "hopping_list";
  host.op.lattice = build_lattice(std::span<const Vec2>(basis));
  host.kind = host.op.lattice.dim == 1 ? HostKind::discrete_1d : HostKind::discrete_2d;
  host.op.positions = positions;
  if (positions.empty()) throw ValidationError("hopping list host needs site positions");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int s = 0, sp = 0, g1 = 0, g2 = 0;
    double re = 0.0, im = 0.0;
    if (!(ls >> s)) continue;
    if (!(ls >> sp >> g1 >> g2 >> re >> im))
      throw ValidationError("hopping list line " + std::to_string(lineno) + ": expected `s s' g1 g2 re im`");
    std::string extra;
    if (ls >> extra) throw ValidationError("hopping list line " + std::to_string(lineno) + ": trailing text");
    if (s < 0 || sp < 0 || s >= host.op.orbitals() || sp >= host.op.orbitals())
      throw ValidationError("hopping list line " + std::to_string(lineno) + ": site index out of range");
    detail::add_hopping(host.op, s, sp, {g1, g2}, {re, im});
  }
  if (!host.op.hoppings.count({0, 0})) host.op.hoppings[{0, 0}] = MatrixXcd::Zero(host.op.orbitals(), host.op.orbitals());
  validate_host(host);
  return host;
}

inline HostModel hopping_list_host(const std::string& text, const std::vector<Vec2>& basis,
                                   const std::vector<Vec2>& positions) {
  std::istringstream in(text);
  return hopping_list_host(in, basis, positions);
}

inline HostModel build_host(const ModelConfig& cfg) {
  if (cfg.kind == "square2d") return square2d(cfg.q, cfg.potential, cfg.hopping);
  if (cfg.kind == "ssh1d") return ssh1d(cfg.t1, cfg.t2);
  if (cfg.kind == "mathieu1d") return mathieu1d(cfg.v, cfg.n_max);
  if (cfg.kind == "hopping_list") {
    std::ifstream in(cfg.file);
    if (!in) throw ValidationError("cannot open hopping list file '" + cfg.file + "'");
    return hopping_list_host(in, cfg.basis, cfg.positions);
  }
  throw ValidationError("unknown model kind '" + cfg.kind + "'");
}

inline FiberHamiltonian fiber_hamiltonian(const HostModel& host, const Vec2& theta_in) {
  FiberHamiltonian fh;
  fh.theta = reduce_to_dual_cell(theta_in, host.lattice());
  if (host.is_discrete()) {
    fh.matrix = host.op.fiber(fh.theta);
    return fh;
  }
  const int n = host.fiber_dimension();
  const double g = kTwoPi / host.lattice().basis(0, 0);
  fh.matrix = MatrixXcd::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    const double k = fh.theta.x() + g * (a - host.n_max);
    fh.matrix(a, a) = k * k;
    for (const auto& [m, value] : host.potential_coefficients) {
      const int b = a - m;  // H_{n n'} = V_{n - n'}
      if (b >= 0 && b < n) fh.matrix(a, b) += value;
    }
  }
  return fh;
}

/// Plane-wave value exp(-i (theta + 2 pi n / a) x) of continuum basis function n
/// at position x, the continuum counterpart of a site orbital.
inline cplx continuum_basis_value(const HostModel& host, int basis_index, const Vec2& theta, double x) {
  const double g = kTwoPi / host.lattice().basis(0, 0);
  return std::exp(-kI * (theta.x() + g * (basis_index - host.n_max)) * x);
}

}  // namespace peierls
