#pragma once

// Lattice and dual-lattice geometry, the half-open cell decomposition,
// uniform Brillouin-zone grids and Fourier sums over the lattice.
//
// Everything lives in a two-component world: one-dimensional lattices use the
// first coordinate only and keep the second coordinate of every point, cell
// and quasi-momentum at zero.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include "peierls/errors.hpp"

namespace peierls {

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Integer coordinates of a lattice vector with respect to the basis.
using Cell = std::array<int, 2>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr cplx kI{0.0, 1.0};

inline Cell operator+(const Cell& a, const Cell& b) { return {a[0] + b[0], a[1] + b[1]}; }
inline Cell operator-(const Cell& a, const Cell& b) { return {a[0] - b[0], a[1] - b[1]}; }
inline Cell operator-(const Cell& a) { return {-a[0], -a[1]}; }

inline int chebyshev_norm(const Cell& c) { return std::max(std::abs(c[0]), std::abs(c[1])); }

struct LatticeSpec {
  int dim = 2;
  Mat2 basis = Mat2::Identity();  ///< columns e_j
  Mat2 dual = kTwoPi * Mat2::Identity();  ///< columns e*_j with <e*_j, e_k> = 2 pi delta_jk
  double cell_volume = 1.0;
  double dual_cell_volume = kTwoPi * kTwoPi;

  Vec2 point(const Cell& c) const {
    return basis.col(0) * c[0] + (dim == 2 ? Vec2(basis.col(1) * c[1]) : Vec2::Zero());
  }
  /// Dual point with coefficients (t1, t2) in the dual basis.
  Vec2 dual_point(double t1, double t2) const {
    return dual.col(0) * t1 + (dim == 2 ? Vec2(dual.col(1) * t2) : Vec2::Zero());
  }
};

/// Builds the lattice generated by `basis` (one vector along x for d = 1, two
/// vectors for d = 2) together with its dual basis and cell volumes.
inline LatticeSpec build_lattice(std::span<const Vec2> basis) {
  LatticeSpec lat;
  if (basis.size() == 1) {
    const double a = basis[0].x();
    if (std::abs(basis[0].y()) > 0.0 || !(std::abs(a) > 1e-14) || !std::isfinite(a))
      throw GeometryError("one-dimensional lattice needs a nonzero basis vector along x");
    lat.dim = 1;
    lat.basis << a, 0.0, 0.0, 1.0;
    lat.dual << kTwoPi / a, 0.0, 0.0, kTwoPi;
    lat.cell_volume = std::abs(a);
    lat.dual_cell_volume = kTwoPi / std::abs(a);
    return lat;
  }
  if (basis.size() != 2) throw GeometryError("lattice dimension must be 1 or 2");
  lat.dim = 2;
  lat.basis.col(0) = basis[0];
  lat.basis.col(1) = basis[1];
  const double det = lat.basis.determinant();
  const double scale = basis[0].norm() * basis[1].norm();
  if (!std::isfinite(det) || !(std::abs(det) > 1e-12 * scale))
    throw GeometryError("lattice basis vectors are linearly dependent");
  // <e*_j, e_k> = 2 pi delta_jk  <=>  dual^T basis = 2 pi 1
  lat.dual = kTwoPi * lat.basis.transpose().inverse();
  lat.cell_volume = std::abs(det);
  lat.dual_cell_volume = std::abs(lat.dual.determinant());
  return lat;
}

inline LatticeSpec build_lattice(std::initializer_list<Vec2> basis) {
  std::vector<Vec2> b(basis);
  return build_lattice(std::span<const Vec2>(b));
}

struct CellDecomposition {
  Cell lattice_part{0, 0};
  Vec2 fractional = Vec2::Zero();    ///< x - [x], lies in the fundamental cell E
  Vec2 coefficients = Vec2::Zero();  ///< coefficients of the fractional part, in [-1/2, 1/2)
};

/// Unique splitting x = [x] + x^ with every basis coefficient of x^ in [-1/2, 1/2).
inline CellDecomposition decompose(const Vec2& x, const LatticeSpec& lat) {
  CellDecomposition out;
  Vec2 t;
  if (lat.dim == 1) {
    t = Vec2(x.x() / lat.basis(0, 0), 0.0);
  } else {
    t = lat.basis.partialPivLu().solve(x);
  }
  for (int j = 0; j < lat.dim; ++j) {
    const double n = std::floor(t[j] + 0.5);
    out.lattice_part[j] = static_cast<int>(n);
    out.coefficients[j] = t[j] - n;
    // rounding can leave t - n at exactly +1/2; the half-open convention excludes it
    if (out.coefficients[j] >= 0.5) {
      out.lattice_part[j] += 1;
      out.coefficients[j] -= 1.0;
    }
  }
  out.fractional = x - lat.point(out.lattice_part);
  return out;
}

/// Same splitting on the dual side: reduces a quasi-momentum into E_*.
inline Vec2 reduce_to_dual_cell(const Vec2& theta, const LatticeSpec& lat) {
  LatticeSpec dual_lat;
  dual_lat.dim = lat.dim;
  dual_lat.basis = lat.dual;
  const auto d = decompose(theta, dual_lat);
  return d.fractional;
}

/// Finitely supported map from the lattice to C.
using LatticeSequence = std::map<Cell, cplx>;

/// |E|^{-1/2} sum_gamma v(gamma) exp(-i <theta, gamma>).
inline cplx fourier_gamma(const LatticeSequence& v, const Vec2& theta, const LatticeSpec& lat) {
  cplx acc{0.0, 0.0};
  for (const auto& [cell, value] : v) acc += value * std::exp(-kI * theta.dot(lat.point(cell)));
  return acc / std::sqrt(lat.cell_volume);
}

/// Uniform half-open grid on E_*: theta = sum_j (k_j / M - 1/2) e*_j.
struct BrillouinGrid {
  int dim = 2;
  int points_per_dim = 1;
  std::vector<Vec2> nodes;
  std::vector<Cell> indices;  ///< integer grid coordinates k of each node
  double quadrature_weight = 0.0;
  double dual_cell_volume = 0.0;

  std::size_t size() const { return nodes.size(); }
  /// Node index for (wrapped) integer coordinates.
  std::size_t index_of(int k1, int k2) const {
    const int m = points_per_dim;
    const int a = ((k1 % m) + m) % m;
    if (dim == 1) return static_cast<std::size_t>(a);
    const int b = ((k2 % m) + m) % m;
    return static_cast<std::size_t>(a) * m + b;
  }
  template <class F>
  auto integrate(F&& f) const {
    auto acc = f(nodes[0]) * quadrature_weight;
    for (std::size_t n = 1; n < nodes.size(); ++n) acc += f(nodes[n]) * quadrature_weight;
    return acc;
  }
};

inline BrillouinGrid bz_grid(const LatticeSpec& lat, int points_per_dim) {
  if (points_per_dim < 1) throw ValidationError("Brillouin grid needs at least one point per dimension");
  BrillouinGrid g;
  g.dim = lat.dim;
  g.points_per_dim = points_per_dim;
  g.dual_cell_volume = lat.dual_cell_volume;
  const int m = points_per_dim;
  const int total = lat.dim == 1 ? m : m * m;
  g.quadrature_weight = lat.dual_cell_volume / total;
  g.nodes.reserve(total);
  g.indices.reserve(total);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < (lat.dim == 1 ? 1 : m); ++b) {
      const double t1 = static_cast<double>(a) / m - 0.5;
      const double t2 = lat.dim == 1 ? 0.0 : static_cast<double>(b) / m - 0.5;
      g.nodes.push_back(lat.dual_point(t1, t2));
      g.indices.push_back({a, b});
    }
  }
  return g;
}

/// Cells with every coordinate in [-radius, radius] (lexicographic order).
inline std::vector<Cell> cells_in_box(int dim, int radius) {
  std::vector<Cell> out;
  for (int a = -radius; a <= radius; ++a) {
    if (dim == 1) {
      out.push_back({a, 0});
      continue;
    }
    for (int b = -radius; b <= radius; ++b) out.push_back({a, b});
  }
  return out;
}

/// One full period of an M-periodic lattice function: coordinates in [-M/2, M/2).
inline std::vector<Cell> cells_in_period(int dim, int m) {
  std::vector<Cell> out;
  const int lo = -(m / 2);
  for (int a = lo; a < lo + m; ++a) {
    if (dim == 1) {
      out.push_back({a, 0});
      continue;
    }
    for (int b = lo; b < lo + m; ++b) out.push_back({a, b});
  }
  return out;
}

}  // namespace peierls
