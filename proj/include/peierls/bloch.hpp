#pragma once

// Band structures, spectral islands, fiber band projections, the Bloch-Floquet
// transform pair on a Brillouin grid and lattice kernels of Gamma-periodic
// operators reconstructed from their fibers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "peierls/errors.hpp"
#include "peierls/host.hpp"
#include "peierls/lattice.hpp"
#include "peierls/linalg.hpp"

namespace peierls {

inline std::string format_theta(const Vec2& theta) {
  std::ostringstream os;
  os.precision(6);
  os << "theta=(" << theta.x() << ", " << theta.y() << ")";
  return os.str();
}

struct BandStructure {
  BrillouinGrid grid;
  std::vector<VectorXd> energies;   ///< ascending per node
  std::vector<MatrixXcd> vectors;   ///< eigenvector columns per node, empty unless requested

  int bands() const { return energies.empty() ? 0 : static_cast<int>(energies.front().size()); }
};

inline BandStructure band_structure(const HostModel& host, const BrillouinGrid& grid, bool keep_vectors = false) {
  BandStructure bs;
  bs.grid = grid;
  bs.energies.reserve(grid.size());
  for (const auto& theta : grid.nodes) {
    const auto fiber = fiber_hamiltonian(host, theta);
    if (keep_vectors) {
      auto eig = hermitian_eig(fiber.matrix, format_theta(theta));
      bs.energies.push_back(eig.values);
      bs.vectors.push_back(std::move(eig.vectors));
    } else {
      bs.energies.push_back(hermitian_eigenvalues(fiber.matrix, format_theta(theta)));
    }
  }
  return bs;
}

/// Open interval (lo, hi).
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x > lo && x < hi; }
  double distance(double x) const { return x <= lo ? lo - x : (x >= hi ? x - hi : 0.0); }
  double boundary_distance(double x) const { return std::min(std::abs(x - lo), std::abs(x - hi)); }
};

struct SpectralIsland {
  Interval interval;
  int first_band = 0;  ///< zero-based index of the lowest island band
  int count = 0;       ///< N, number of bands in the island
  double gap = std::numeric_limits<double>::infinity();  ///< +inf when no other bands exist
  double range_lo = 0.0;
  double range_hi = 0.0;
  std::vector<std::string> warnings;

  bool gap_unbounded() const { return std::isinf(gap); }
  bool contains_band(int j) const { return j >= first_band && j < first_band + count; }
};

struct IslandOptions {
  double boundary_tolerance = 1e-8;  ///< band values this close to the interval edge count as touching
  double margin_fraction = 0.1;      ///< warn when the island sits closer than margin * gap to an edge
};

inline SpectralIsland detect_island(const BandStructure& bands, const Interval& interval,
                                    const IslandOptions& opts = {}) {
  if (!(interval.lo < interval.hi) || !std::isfinite(interval.lo) || !std::isfinite(interval.hi))
    throw ValidationError("island interval must be bounded with lo < hi");
  const int nb = bands.bands();
  std::vector<int> inside;
  bool any_value_inside = false;
  for (int j = 0; j < nb; ++j) {
    bool all_in = true, some_in = false;
    std::size_t offending = 0;
    for (std::size_t n = 0; n < bands.energies.size(); ++n) {
      const double e = bands.energies[n][j];
      const bool in = interval.contains(e);
      const bool touching = interval.boundary_distance(e) <= opts.boundary_tolerance;
      if (in && !touching) some_in = true;
      if (!in || touching) {
        if (all_in) offending = n;
        all_in = false;
      }
      if (touching) {
        throw NotIsolated("band " + std::to_string(j + 1) + " touches the boundary of I at " +
                          format_theta(bands.grid.nodes[n]));
      }
    }
    if (some_in) any_value_inside = true;
    if (all_in) {
      inside.push_back(j);
    } else if (some_in) {
      throw NotIsolated("band " + std::to_string(j + 1) + " crosses the boundary of I at " +
                        format_theta(bands.grid.nodes[offending]));
    }
  }
  if (!any_value_inside || inside.empty()) throw NoIsland("no Bloch band lies inside I");

  SpectralIsland isl;
  isl.interval = interval;
  isl.first_band = inside.front();
  isl.count = static_cast<int>(inside.size());
  isl.range_lo = std::numeric_limits<double>::infinity();
  isl.range_hi = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < bands.energies.size(); ++n) {
    for (int j = 0; j < nb; ++j) {
      const double e = bands.energies[n][j];
      if (isl.contains_band(j)) {
        isl.range_lo = std::min(isl.range_lo, e);
        isl.range_hi = std::max(isl.range_hi, e);
      } else {
        isl.gap = std::min(isl.gap, interval.distance(e));
      }
    }
  }
  if (!isl.gap_unbounded()) {
    const double edge = std::min(isl.range_lo - interval.lo, interval.hi - isl.range_hi);
    if (edge < opts.margin_fraction * isl.gap) {
      std::ostringstream os;
      os << "island lies within " << edge << " of the interval edge (margin " << opts.margin_fraction * isl.gap << ")";
      isl.warnings.push_back(os.str());
    }
  }
  return isl;
}

/// Island certification on grids M and 2M; warns when the gap moves by more than 5%.
inline SpectralIsland detect_island_refined(const HostModel& host, const Interval& interval, int points_per_dim,
                                            const IslandOptions& opts = {}) {
  const auto coarse = detect_island(band_structure(host, bz_grid(host.lattice(), points_per_dim)), interval, opts);
  auto fine = detect_island(band_structure(host, bz_grid(host.lattice(), 2 * points_per_dim)), interval, opts);
  fine.warnings.insert(fine.warnings.begin(), coarse.warnings.begin(), coarse.warnings.end());
  if (!coarse.gap_unbounded() && std::abs(fine.gap - coarse.gap) > 0.05 * coarse.gap) {
    std::ostringstream os;
    os << "gap changed from " << coarse.gap << " to " << fine.gap << " under grid refinement";
    fine.warnings.push_back(os.str());
  }
  if (fine.first_band != coarse.first_band || fine.count != coarse.count)
    throw NotIsolated("island band set changes under grid refinement");
  return fine;
}

/// Eigenvectors of the island bands at one fiber, after checking the split.
inline MatrixXcd island_eigenvectors(const FiberHamiltonian& fiber, const SpectralIsland& island,
                                     VectorXd* values = nullptr, double boundary_tolerance = 1e-8) {
  const auto eig = hermitian_eig(fiber.matrix, format_theta(fiber.theta));
  for (Eigen::Index j = 0; j < eig.values.size(); ++j) {
    const double e = eig.values[j];
    const bool member = island.contains_band(static_cast<int>(j));
    if (island.interval.boundary_distance(e) <= boundary_tolerance || member != island.interval.contains(e))
      throw NotIsolated("degenerate split of the fiber spectrum by I at " + format_theta(fiber.theta));
  }
  if (values) *values = eig.values.segment(island.first_band, island.count);
  return eig.vectors.middleCols(island.first_band, island.count);
}

/// P(theta): spectral sum over the island bands.
inline MatrixXcd band_projection(const FiberHamiltonian& fiber, const SpectralIsland& island,
                                 double boundary_tolerance = 1e-8) {
  const MatrixXcd v = island_eigenvectors(fiber, island, nullptr, boundary_tolerance);
  return v * v.adjoint();
}

// ---------------------------------------------------------------------------
// Bloch-Floquet transform on the grid

/// Finitely supported function on the sites: one value vector per cell.
struct LatticeFunction {
  int orbitals = 1;
  std::map<Cell, VectorXcd> values;

  VectorXcd at(const Cell& c) const {
    const auto it = values.find(c);
    return it == values.end() ? VectorXcd::Zero(orbitals) : it->second;
  }
  double norm_squared() const {
    double s = 0.0;
    for (const auto& [c, v] : values) s += v.squaredNorm();
    return s;
  }
};

/// (U f)(s, theta) = sum_gamma exp(-i <theta, gamma>) f(s - gamma) = sum_c exp(i <theta, c>) f(s, c).
inline std::vector<VectorXcd> bloch_transform(const LatticeFunction& f, const BrillouinGrid& grid,
                                              const LatticeSpec& lat) {
  std::vector<VectorXcd> out(grid.size(), VectorXcd::Zero(f.orbitals));
  for (std::size_t n = 0; n < grid.size(); ++n)
    for (const auto& [c, v] : f.values) out[n] += std::exp(kI * grid.nodes[n].dot(lat.point(c))) * v;
  return out;
}

/// Grid Fourier coefficients (1/|nodes|) sum_theta F(theta) exp(-i <theta, gamma>) for each requested cell.
template <class M>
std::map<Cell, M> grid_fourier(const std::vector<M>& values, const BrillouinGrid& grid, const LatticeSpec& lat,
                               const std::vector<Cell>& cells) {
  std::map<Cell, M> out;
  const double w = 1.0 / static_cast<double>(grid.size());
  for (const auto& c : cells) {
    const Vec2 gamma = lat.point(c);
    M acc = values[0] * std::exp(-kI * grid.nodes[0].dot(gamma));
    for (std::size_t n = 1; n < grid.size(); ++n) acc += values[n] * std::exp(-kI * grid.nodes[n].dot(gamma));
    out.emplace(c, w * acc);
  }
  return out;
}

/// Inverse transform by grid quadrature, evaluated on the given cells.
inline LatticeFunction inverse_bloch_transform(const std::vector<VectorXcd>& fibers, const BrillouinGrid& grid,
                                               const LatticeSpec& lat, const std::vector<Cell>& cells) {
  LatticeFunction f;
  f.orbitals = static_cast<int>(fibers.front().size());
  f.values = grid_fourier(fibers, grid, lat, cells);
  return f;
}

/// Lattice convolution operator: (K f)(s, c) = sum_{c', s'} K(c - c')_{s s'} f(s', c').
struct KernelOperator {
  LatticeSpec lattice;
  int orbitals = 1;
  std::map<Cell, MatrixXcd> kernel;

  MatrixXcd at(const Cell& c) const {
    const auto it = kernel.find(c);
    return it == kernel.end() ? MatrixXcd::Zero(orbitals, orbitals) : it->second;
  }

  LatticeFunction apply(const LatticeFunction& f) const {
    LatticeFunction out;
    out.orbitals = orbitals;
    for (const auto& [gamma, block] : kernel)
      for (const auto& [c, v] : f.values) {
        auto [it, inserted] = out.values.try_emplace(c + gamma, VectorXcd::Zero(orbitals));
        it->second += block * v;
      }
    return out;
  }

  /// Fiber sum_gamma K(gamma) exp(i <theta, gamma>).
  MatrixXcd symbol(const Vec2& theta) const {
    MatrixXcd s = MatrixXcd::Zero(orbitals, orbitals);
    for (const auto& [gamma, block] : kernel) s += block * std::exp(kI * theta.dot(lattice.point(gamma)));
    return s;
  }

  double self_adjointness_defect() const {
    double worst = 0.0;
    for (const auto& [gamma, block] : kernel) worst = std::max(worst, max_abs(block - at(-gamma).adjoint()));
    return worst;
  }
};

/// The lattice operator U^{-1} M_rho U for a (matrix-valued) fiber function on the grid.
inline KernelOperator fiber_multiplier(const std::vector<MatrixXcd>& rho, const BrillouinGrid& grid,
                                       const LatticeSpec& lat) {
  KernelOperator k;
  k.lattice = lat;
  k.orbitals = static_cast<int>(rho.front().rows());
  k.kernel = grid_fourier(rho, grid, lat, cells_in_period(lat.dim, grid.points_per_dim));
  return k;
}

inline KernelOperator fiber_multiplier(const std::vector<cplx>& rho, const BrillouinGrid& grid,
                                       const LatticeSpec& lat) {
  std::vector<MatrixXcd> m;
  m.reserve(rho.size());
  for (const auto& r : rho) m.push_back(MatrixXcd::Constant(1, 1, r));
  return fiber_multiplier(m, grid, lat);
}

enum class KernelKind { projection, hamiltonian };

struct BandKernel {
  KernelOperator op;
  KernelKind kind = KernelKind::projection;
  int window_radius = 0;
  double truncation_mass = 0.0;  ///< squared Frobenius mass of the dropped entries
  std::vector<std::string> warnings;

  /// sup_gamma <gamma>^m ||K(gamma)|| for m = 0..4.
  std::vector<double> decay_moments() const {
    std::vector<double> out(5, 0.0);
    for (const auto& [gamma, block] : op.kernel) {
      const double r = std::sqrt(1.0 + op.lattice.point(gamma).squaredNorm());
      const double mag = block.norm();
      for (int m = 0; m <= 4; ++m) out[m] = std::max(out[m], std::pow(r, m) * mag);
    }
    return out;
  }
};

/// Kernel of the band projection (or band Hamiltonian) by grid quadrature of
/// P(theta) (or H(theta) P(theta)), truncated to Chebyshev radius `radius`.
inline BandKernel band_kernel(const HostModel& host, const SpectralIsland& island, const BrillouinGrid& grid,
                              int radius, KernelKind kind = KernelKind::projection, double mass_tolerance = 1e-10) {
  if (!host.is_discrete()) throw ValidationError("band kernels need a discrete host");
  if (radius < 1) throw ValidationError("kernel window radius must be >= 1");
  std::vector<MatrixXcd> fibers;
  fibers.reserve(grid.size());
  double total_mass = 0.0;
  for (const auto& theta : grid.nodes) {
    VectorXd lambda;
    const MatrixXcd v = island_eigenvectors(fiber_hamiltonian(host, theta), island, &lambda);
    MatrixXcd f = kind == KernelKind::projection ? MatrixXcd(v * v.adjoint())
                                                 : MatrixXcd(v * lambda.asDiagonal() * v.adjoint());
    total_mass += f.squaredNorm();
    fibers.push_back(std::move(f));
  }
  total_mass /= static_cast<double>(grid.size());  // grid Parseval

  BandKernel bk;
  bk.kind = kind;
  bk.op.lattice = host.lattice();
  bk.op.orbitals = host.op.orbitals();
  std::vector<Cell> cells;
  for (const auto& c : cells_in_period(host.lattice().dim, grid.points_per_dim))
    if (chebyshev_norm(c) <= radius) cells.push_back(c);
  bk.window_radius = radius;
  bk.op.kernel = grid_fourier(fibers, grid, host.lattice(), cells);
  double kept = 0.0;
  for (const auto& [c, block] : bk.op.kernel) kept += block.squaredNorm();
  bk.truncation_mass = std::max(0.0, total_mass - kept);
  if (bk.truncation_mass > mass_tolerance) {
    std::ostringstream os;
    os << "kernel window radius " << radius << " drops mass " << bk.truncation_mass;
    bk.warnings.push_back(os.str());
  }
  return bk;
}

}  // namespace peierls
