#pragma once

// Magnetic operators: Peierls-twisted hosts, Hofstadter-type matrices built
// from effective hoppings, the minimally coupled model, exact bulk spectra at
// rational flux, and the magnetic torus on which the Wannier-family objects
// (Gram matrix, Loewdin family, band projection, Sz.-Nagy intertwiner,
// magnetic Wannier basis) are computed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "peierls/bloch.hpp"
#include "peierls/errors.hpp"
#include "peierls/field.hpp"
#include "peierls/host.hpp"
#include "peierls/lattice.hpp"
#include "peierls/linalg.hpp"
#include "peierls/wannier.hpp"

namespace peierls {

/// A periodic kernel whose entries are multiplied by link phases of a field:
/// H_eps(x, y) = Lambda(x, y) H(x, y).
struct MagneticOperator {
  PeriodicOperator base;
  FieldSpec field;
  LinkRule rule = LinkRule::straight_line;

  Vec2 site(const Cell& c, int s) const { return base.lattice.point(c) + base.positions[s]; }
  cplx phase(const Vec2& x, const Vec2& y) const { return link_phase(field, x, y, rule); }
};

inline MagneticOperator peierls_host(const HostModel& host, const FieldSpec& field) {
  if (!host.is_discrete()) throw ValidationError("Peierls substitution needs a discrete host");
  return {host.op, field, LinkRule::straight_line};
}

/// Blocks Lambda(alpha, beta) mu_hat(alpha - beta) over Gamma.
inline MagneticOperator magnetic_matrix(const EffectiveHamiltonian& eff, const LatticeSpec& lat,
                                        const FieldSpec& field) {
  return {eff.as_operator(lat), field, LinkRule::straight_line};
}

/// Blocks exp(-i <A((alpha + beta) / 2), beta - alpha>) mu_hat(alpha - beta);
/// gradient terms of the potential are integrated exactly.
inline MagneticOperator minimally_coupled_matrix(const EffectiveHamiltonian& eff, const LatticeSpec& lat,
                                                 const FieldSpec& field) {
  return {eff.as_operator(lat), field, LinkRule::midpoint};
}

/// Open-boundary restriction of a magnetic operator to a window.
inline MatrixXcd window_matrix(const MagneticOperator& op, const SiteWindow& w) {
  MatrixXcd h = MatrixXcd::Zero(w.size(), w.size());
  const int n = op.base.orbitals();
  for (const auto& c : w.cells)
    for (const auto& [gamma, block] : op.base.hoppings) {
      const Cell d = c + gamma;
      if (!w.cell_index.count(d)) continue;
      for (int s = 0; s < n; ++s)
        for (int sp = 0; sp < n; ++sp) {
          const cplx amp = block(s, sp);
          if (amp == cplx{}) continue;
          h(w.row(c, s), w.row(d, sp)) += op.phase(op.site(c, s), op.site(d, sp)) * amp;
        }
    }
  return h;
}

// ---------------------------------------------------------------------------
// Exact bulk spectra at rational flux

struct Supercell {
  int m1 = 1;
  int m2 = 1;
};

namespace detail {
inline bool translation_invariant(const MagneticOperator& op, const Supercell& sc, const Cell& shift, double tol) {
  const Vec2 t = op.base.lattice.point(shift);
  const int n = op.base.orbitals();
  for (int a = 0; a < sc.m1; ++a)
    for (int b = 0; b < sc.m2; ++b) {
      const Cell c{a, b};
      for (const auto& [gamma, block] : op.base.hoppings) {
        if (chebyshev_norm(gamma) > 2) continue;
        for (int s = 0; s < n; ++s)
          for (int sp = 0; sp < n; ++sp) {
            if (block(s, sp) == cplx{}) continue;
            const Vec2 x = op.site(c, s), y = op.site(c + gamma, sp);
            if (std::abs(op.phase(x + t, y + t) - op.phase(x, y)) > tol) return false;
          }
      }
    }
  return true;
}
}  // namespace detail

/// Smallest rectangular block of Gamma cells under which the twisted operator
/// is invariant under plain translations (checked on hoppings of range <= 2;
/// longer ones are caught by the Hermiticity check of the Bloch matrices).
inline Supercell find_supercell(const MagneticOperator& op, int max_cells = 1024, double tol = 1e-9) {
  if (op.base.lattice.dim != 2) throw ValidationError("magnetic spectra need a two-dimensional lattice");
  for (int area = 1; area <= max_cells; ++area)
    for (int m1 = 1; m1 <= area; ++m1) {
      if (area % m1) continue;
      const Supercell sc{m1, area / m1};
      if (detail::translation_invariant(op, sc, {sc.m1, 0}, tol) &&
          detail::translation_invariant(op, sc, {0, sc.m2}, tol))
        return sc;
    }
  throw ValidationError("no magnetic supercell with at most " + std::to_string(max_cells) +
                        " cells: use a rational flux (flux_rational) compatible with the lattice");
}

/// Entries of the supercell Bloch matrix: value * exp(-i <k, shift>).
struct SupercellTerms {
  int dim = 0;
  struct Term {
    int row, col;
    cplx value;
    Vec2 shift;
  };
  std::vector<Term> terms;
  Mat2 super_dual;  ///< dual basis of the supercell lattice

  MatrixXcd at(const Vec2& k) const {
    MatrixXcd h = MatrixXcd::Zero(dim, dim);
    for (const auto& t : terms) h(t.row, t.col) += t.value * std::exp(-kI * k.dot(t.shift));
    return h;
  }
};

inline SupercellTerms supercell_terms(const MagneticOperator& op, const Supercell& sc) {
  SupercellTerms st;
  const int n = op.base.orbitals();
  st.dim = sc.m1 * sc.m2 * n;
  const auto& lat = op.base.lattice;
  Mat2 sb;
  sb.col(0) = lat.basis.col(0) * sc.m1;
  sb.col(1) = lat.basis.col(1) * sc.m2;
  st.super_dual = kTwoPi * sb.transpose().inverse();
  const auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  const auto index = [&](int a, int b, int s) { return (a * sc.m2 + b) * n + s; };
  for (int a = 0; a < sc.m1; ++a)
    for (int b = 0; b < sc.m2; ++b)
      for (const auto& [gamma, block] : op.base.hoppings) {
        const int ya = a + gamma[0], yb = b + gamma[1];
        const int n1 = floor_div(ya, sc.m1), n2 = floor_div(yb, sc.m2);
        const Vec2 shift = lat.point({n1 * sc.m1, n2 * sc.m2});
        for (int s = 0; s < n; ++s)
          for (int sp = 0; sp < n; ++sp) {
            const cplx amp = block(s, sp);
            if (amp == cplx{}) continue;
            const Vec2 x = op.site({a, b}, s), y = op.site({ya, yb}, sp);
            st.terms.push_back({index(a, b, s), index(ya - n1 * sc.m1, yb - n2 * sc.m2, sp),
                                op.phase(x, y) * amp, shift});
          }
      }
  return st;
}

namespace detail {
inline int rational_denominator(double x, int max_den = 4096, double tol = 1e-9) {
  for (int d = 1; d <= max_den; ++d)
    if (std::abs(x * d - std::round(x * d)) < tol) return d;
  return 0;
}
}  // namespace detail

/// Fractions (1 / d1, 1 / d2) of the supercell dual cell that still contain
/// the whole spectrum. A magnetic translation by a Gamma vector t moves the
/// quasi-momentum by M t (A_lin = M x), so the spectrum repeats under the group
/// these shifts generate. Returns {1, 1} unless every magnetic translation is
/// a symmetry of the twisted operator.
inline std::array<int, 2> magnetic_zone_reduction(const MagneticOperator& op, const Supercell& sc,
                                                  double tol = 1e-9) {
  const auto& lat = op.base.lattice;
  const Mat2 m = op.field.linear_part();
  if (m.isZero() || lat.dim != 2) return {1, 1};
  const int n = op.base.orbitals();
  for (const Cell& e : {Cell{1, 0}, Cell{0, 1}}) {
    const Vec2 t = lat.point(e);
    const Vec2 mt = m * t;
    for (int a = 0; a < sc.m1; ++a)
      for (int b = 0; b < sc.m2; ++b)
        for (const auto& [gamma, block] : op.base.hoppings) {
          if (chebyshev_norm(gamma) > 2) continue;
          for (int s = 0; s < n; ++s)
            for (int sp = 0; sp < n; ++sp) {
              if (block(s, sp) == cplx{}) continue;
              const Vec2 x = op.site({a, b}, s), y = op.site(Cell{a, b} + gamma, sp);
              const cplx want = op.phase(x, y) * std::exp(-kI * mt.dot(y - x));
              if (std::abs(op.phase(x + t, y + t) - want) > tol) return {1, 1};
            }
        }
  }
  Mat2 sb;
  sb.col(0) = lat.basis.col(0) * sc.m1;
  sb.col(1) = lat.basis.col(1) * sc.m2;
  // shifts in supercell dual coordinates: c = sb^T k / 2 pi
  std::array<Vec2, 2> c{sb.transpose() * (m * lat.basis.col(0)) / kTwoPi,
                        sb.transpose() * (m * lat.basis.col(1)) / kTwoPi};
  int den = 1;
  for (const auto& v : c)
    for (int j = 0; j < 2; ++j) {
      const int d = detail::rational_denominator(v[j]);
      if (d == 0) return {1, 1};
      den = std::lcm(den, d);
    }
  // walk the finite group generated by the shifts on (Z / den)^2
  std::array<int, 2> red{1, 1};
  const auto wrap = [den](double x) { return ((static_cast<long>(std::llround(x * den)) % den) + den) % den; };
  const std::array<long, 2> g1{wrap(c[0][0]), wrap(c[0][1])}, g2{wrap(c[1][0]), wrap(c[1][1])};
  for (long u = 0; u < den; ++u)
    for (long v = 0; v < den; ++v) {
      const long p = (u * g1[0] + v * g2[0]) % den, q = (u * g1[1] + v * g2[1]) % den;
      if (q == 0 && p != 0) red[0] = std::max<int>(red[0], static_cast<int>(den / std::gcd(p, static_cast<long>(den))));
      if (p == 0 && q != 0) red[1] = std::max<int>(red[1], static_cast<int>(den / std::gcd(q, static_cast<long>(den))));
    }
  return red;
}

struct MagneticSpectrum {
  Supercell supercell;
  int k1 = 1, k2 = 1;
  std::array<int, 2> reduction{1, 1};  ///< the grid covers 1 / reduction of each dual direction
  std::vector<double> values;          ///< union over the k-grid, sorted
};

/// Diagonalises the supercell Bloch matrices on the grid
/// k = (i / (k1 r1)) e*_1 + (j / (k2 r2)) e*_2, with (r1, r2) the magnetic
/// zone reduction (or 1 when `reduce` is false).
inline MagneticSpectrum magnetic_bloch_spectrum(const MagneticOperator& op, int k1, int k2,
                                                std::optional<Supercell> sc = std::nullopt, bool reduce = true) {
  if (k1 < 1 || k2 < 1) throw ValidationError("magnetic k-grid needs at least one point per direction");
  MagneticSpectrum out;
  out.supercell = sc ? *sc : find_supercell(op);
  out.k1 = k1;
  out.k2 = k2;
  if (reduce) out.reduction = magnetic_zone_reduction(op, out.supercell);
  const auto st = supercell_terms(op, out.supercell);
  for (int i = 0; i < k1; ++i)
    for (int j = 0; j < k2; ++j) {
      const Vec2 k = st.super_dual.col(0) * (static_cast<double>(i) / (k1 * out.reduction[0])) +
                     st.super_dual.col(1) * (static_cast<double>(j) / (k2 * out.reduction[1]));
      MatrixXcd h = st.at(k);
      if (hermiticity_defect(h) > 1e-9 * std::max(1.0, max_abs(h)))
        throw NumericalError("supercell Bloch matrix is not Hermitian; flux and supercell are inconsistent");
      const VectorXd ev = hermitian_eigenvalues(0.5 * (h + h.adjoint()), "magnetic k-point");
      out.values.insert(out.values.end(), ev.data(), ev.data() + ev.size());
    }
  std::sort(out.values.begin(), out.values.end());
  return out;
}

// ---------------------------------------------------------------------------
// Magnetic torus
//
// An L x L block of Gamma cells with magnetic boundary conditions
//   psi(x + T) = exp(i <M T, x + T>) psi(x),  T in L Gamma,
// where A_lin(x) = M x is the linear part of the potential. The remaining part
// of the potential must be periodic with period L Gamma, and the flux through
// the torus must be an integer multiple of 2 pi.

struct MagneticTorus {
  LatticeSpec lattice;
  int cells_per_side = 16;
  Mat2 linear = Mat2::Zero();
  Vec2 t1 = Vec2::Zero(), t2 = Vec2::Zero();
  std::vector<Cell> cells;
  std::map<Cell, int> cell_index;

  /// Splits a plane cell into its torus representative and the period multiple.
  std::pair<Cell, Cell> reduce(const Cell& c) const {
    const int l = cells_per_side, lo = -(l / 2);
    Cell rep{}, n{};
    for (int a = 0; a < 2; ++a) {
      const int shifted = c[a] - lo;
      n[a] = shifted >= 0 ? shifted / l : -((-shifted + l - 1) / l);
      rep[a] = c[a] - n[a] * l;
    }
    return {rep, n};
  }

  /// psi(y + n1 t1 + n2 t2) = section_phase(n, y) psi(y).
  cplx section_phase(const Cell& n, const Vec2& y) const {
    const Vec2 m1 = linear * t1, m2 = linear * t2;
    const double n1 = n[0], n2 = n[1];
    const double a = n2 * m2.dot(y) + m2.dot(t2) * n2 * (n2 + 1) / 2.0;
    const double b = n1 * m1.dot(y + n2 * t2) + m1.dot(t1) * n1 * (n1 + 1) / 2.0;
    return std::exp(kI * (a + b));
  }

  /// Torus distance between two points (minimal image).
  double distance(const Vec2& x, const Vec2& y) const {
    double best = 1e300;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b) best = std::min(best, (x - y + a * t1 + b * t2).norm());
    return best;
  }

  /// Minimal-image cell difference a - b.
  Cell cell_difference(const Cell& a, const Cell& b) const { return reduce(a - b).first; }
};

inline MagneticTorus make_torus(const LatticeSpec& lat, const FieldSpec& field, int cells_per_side) {
  if (lat.dim != 2) throw ValidationError("the magnetic torus needs a two-dimensional lattice");
  if (cells_per_side < 2) throw ValidationError("window_cells must be at least 2");
  MagneticTorus t;
  t.lattice = lat;
  t.cells_per_side = cells_per_side;
  t.linear = field.linear_part();
  t.t1 = lat.point({cells_per_side, 0});
  t.t2 = lat.point({0, cells_per_side});
  t.cells = cells_in_period(2, cells_per_side);
  for (std::size_t i = 0; i < t.cells.size(); ++i) t.cell_index.emplace(t.cells[i], static_cast<int>(i));
  const double flux = t.t1.dot((t.linear - t.linear.transpose()) * t.t2);
  if (std::abs(flux / kTwoPi - std::round(flux / kTwoPi)) > 1e-9) {
    std::ostringstream os;
    os << "flux through the " << cells_per_side << "x" << cells_per_side << " torus is " << flux / kTwoPi
       << " flux quanta; it must be an integer";
    throw GeometryError(os.str());
  }
  // non-linear remainder must be torus periodic: check on a probe set of links
  const Vec2 probes[] = {Vec2(0.5, 0.0), Vec2(0.0, 0.5), Vec2(0.7, 0.3)};
  for (const auto& c : t.cells) {
    if ((c[0] + c[1]) % 3) continue;
    const Vec2 x = lat.point(c);
    for (const auto& d : probes)
      for (const Vec2& shift : {t.t1, t.t2}) {
        const Vec2 ms = t.linear * shift;
        const cplx lhs = link_phase(field, x + shift, x + d + shift) * std::exp(kI * ms.dot(d));
        if (std::abs(lhs - link_phase(field, x, x + d)) > 1e-9)
          throw GeometryError("field is not compatible with the magnetic torus: its non-linear part is not periodic");
      }
  }
  return t;
}

/// Row index of (torus cell, orbital).
inline int torus_row(const MagneticTorus& t, const Cell& c, int s, int orbitals) {
  return t.cell_index.at(c) * orbitals + s;
}

/// The twisted operator acting on sections over the torus.
inline MatrixXcd torus_matrix(const MagneticOperator& op, const MagneticTorus& t) {
  const int n = op.base.orbitals();
  const int dim = static_cast<int>(t.cells.size()) * n;
  MatrixXcd h = MatrixXcd::Zero(dim, dim);
  for (const auto& c : t.cells)
    for (const auto& [gamma, block] : op.base.hoppings) {
      const Cell yc = c + gamma;
      const auto [rep, wrap] = t.reduce(yc);
      for (int s = 0; s < n; ++s)
        for (int sp = 0; sp < n; ++sp) {
          const cplx amp = block(s, sp);
          if (amp == cplx{}) continue;
          const Vec2 x = op.site(c, s), y = op.site(yc, sp);
          const cplx sec = wrap == Cell{0, 0} ? cplx(1.0) : t.section_phase(wrap, op.site(rep, sp));
          h(torus_row(t, c, s, n), torus_row(t, rep, sp, n)) += op.phase(x, y) * amp * sec;
        }
    }
  if (hermiticity_defect(h) > 1e-9 * std::max(1.0, max_abs(h)))
    throw NumericalError("torus matrix is not Hermitian; field and torus are inconsistent");
  return 0.5 * (h + h.adjoint());
}

/// Lifts a plane function given on (cell, orbital) pairs to a section over the torus.
inline void lift_add(const MagneticTorus& t, const std::vector<Vec2>& positions, const Cell& c, int s, cplx value,
                     Eigen::Ref<VectorXcd> out) {
  const int n = static_cast<int>(positions.size());
  const auto [rep, wrap] = t.reduce(c);
  const cplx sec = wrap == Cell{0, 0} ? cplx(1.0) : t.section_phase(wrap, t.lattice.point(rep) + positions[s]);
  out[torus_row(t, rep, s, n)] += std::conj(sec) * value;
}

// ---------------------------------------------------------------------------
// Modified Wannier functions, Gram matrix and Loewdin family

/// Columns W~_{gamma, j}(x) = Lambda(x, gamma) w_j(x - gamma), gamma over the
/// torus cells, lifted to sections; column index cell_index(gamma) * N + j.
inline MatrixXcd modified_wannier(const WannierBasis& wb, const FieldSpec& field, const MagneticTorus& t) {
  const int n = static_cast<int>(wb.positions.size());
  const int dim = static_cast<int>(t.cells.size()) * n;
  MatrixXcd w = MatrixXcd::Zero(dim, static_cast<Eigen::Index>(t.cells.size()) * wb.count);
  for (const auto& gamma : t.cells) {
    const Vec2 g = t.lattice.point(gamma);
    for (int j = 0; j < wb.count; ++j) {
      const int col = t.cell_index.at(gamma) * wb.count + j;
      for (const auto& [c, val] : wb.functions[j].values) {
        const Cell xc = c + gamma;
        for (int s = 0; s < n; ++s) {
          if (val[s] == cplx{}) continue;
          const Vec2 x = t.lattice.point(xc) + wb.positions[s];
          lift_add(t, wb.positions, xc, s, link_phase(field, x, g) * val[s], w.col(col));
        }
      }
    }
  }
  return w;
}

struct GramData {
  MatrixXcd gram;      ///< G
  MatrixXcd x;         ///< (G - 1) / eps, zero at eps = 0
  MatrixXcd inv_sqrt;  ///< G^{-1/2}
  MatrixXcd y;         ///< (G^{-1/2} - 1) / eps, zero at eps = 0
  double min_eigenvalue = 1.0;
  double deviation = 0.0;        ///< ||G - 1||
  double loewdin_residual = 0.0;  ///< max |G^{-1/2} G G^{-1/2} - 1|
};

inline GramData gram_and_loewdin(const MatrixXcd& family, double epsilon, double min_eigenvalue = 0.5) {
  GramData gd;
  gd.gram = family.adjoint() * family;
  gd.gram = 0.5 * (gd.gram + gd.gram.adjoint());
  const auto id = MatrixXcd::Identity(gd.gram.rows(), gd.gram.cols());
  gd.inv_sqrt = inverse_sqrt(gd.gram, min_eigenvalue, &gd.min_eigenvalue);
  gd.deviation = spectral_norm(gd.gram - id);
  gd.loewdin_residual = max_abs(gd.inv_sqrt * gd.gram * gd.inv_sqrt - id);
  if (epsilon > 0.0) {
    gd.x = (gd.gram - id) / epsilon;
    gd.y = (gd.inv_sqrt - id) / epsilon;
  } else {
    gd.x = MatrixXcd::Zero(gd.gram.rows(), gd.gram.cols());
    gd.y = gd.x;
  }
  return gd;
}

// ---------------------------------------------------------------------------
// Band projection of the magnetic operator, Sz.-Nagy intertwiner

struct MagneticProjection {
  HermitianEigen eig;
  MatrixXcd range;  ///< orthonormal columns spanning the spectral subspace of I
  int rank = 0;

  MatrixXcd projector() const { return range * range.adjoint(); }
};

inline MagneticProjection magnetic_band_projection(const MatrixXcd& h, const Interval& interval,
                                                   double boundary_tolerance = 1e-8) {
  MagneticProjection mp;
  mp.eig = hermitian_eig(h, "magnetic operator");
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < mp.eig.values.size(); ++i) {
    const double e = mp.eig.values[i];
    if (interval.boundary_distance(e) <= boundary_tolerance)
      throw NotIsolated("spectrum of the magnetic operator touches the boundary of I; the field is too strong");
    if (interval.contains(e)) idx.push_back(static_cast<int>(i));
  }
  mp.rank = static_cast<int>(idx.size());
  mp.range.resize(h.rows(), mp.rank);
  for (int a = 0; a < mp.rank; ++a) mp.range.col(a) = mp.eig.vectors.col(idx[a]);
  return mp;
}

/// U = [1 - (p - q)^2]^{-1/2} [p q + (1 - p)(1 - q)], mapping ran q onto ran p.
inline MatrixXcd sz_nagy(const MatrixXcd& p, const MatrixXcd& q) {
  const MatrixXcd d = p - q;
  const double gap = spectral_norm(d);
  if (!(gap < 1.0)) {
    std::ostringstream os;
    os << "projections are not connectable: ||p - q|| = " << gap;
    throw NotConnectable(os.str());
  }
  const auto id = MatrixXcd::Identity(p.rows(), p.cols());
  const MatrixXcd s = id - d * d;
  return inverse_sqrt(0.5 * (s + s.adjoint()), 0.0) * (p * q + (id - p) * (id - q));
}

struct MagneticWannierFamily {
  MatrixXcd modified;     ///< W~
  GramData gram;
  MatrixXcd orthonormal;  ///< W° = W~ G^{-1/2}
  MatrixXcd final;        ///< W = U W°
  MagneticProjection projection;
  double projector_gap = 0.0;  ///< ||p - p~||
  MatrixXcd matrix_elements;   ///< W^* H W
};

/// Builds the magnetic Wannier family on the torus. `h` is the torus matrix of
/// the Peierls host.
inline MagneticWannierFamily magnetic_wannier(const WannierBasis& wb, const FieldSpec& field, const MagneticTorus& t,
                                              const MatrixXcd& h, const Interval& interval) {
  MagneticWannierFamily f;
  f.modified = modified_wannier(wb, field, t);
  f.gram = gram_and_loewdin(f.modified, field.epsilon);
  f.orthonormal = f.modified * f.gram.inv_sqrt;
  f.projection = magnetic_band_projection(h, interval);
  if (f.projection.rank != f.orthonormal.cols()) {
    std::ostringstream os;
    os << "rank of the magnetic band projection (" << f.projection.rank << ") differs from the Wannier family size ("
       << f.orthonormal.cols() << ")";
    throw NotConnectable(os.str());
  }
  // D = p - p~ ; W = (1 - D^2)^{-1/2} p W°  (p~ W° = W°, (1 - p)(1 - p~) W° = 0)
  const MatrixXcd& v = f.projection.range;
  const MatrixXcd pw = v * (v.adjoint() * f.orthonormal);
  const MatrixXcd d = v * v.adjoint() - f.orthonormal * f.orthonormal.adjoint();
  const MatrixXcd d2 = d * d;
  const auto eig = hermitian_eig(0.5 * (d2 + d2.adjoint()), "Sz.-Nagy");
  const double top = std::max(0.0, eig.values.maxCoeff());
  f.projector_gap = std::sqrt(top);
  if (!(f.projector_gap < 1.0)) throw NotConnectable("||p - p~|| >= 1: the magnetic island is not connectable");
  f.final = hermitian_function(eig, [](double x) { return cplx(1.0 / std::sqrt(1.0 - std::max(0.0, x))); }) * pw;
  f.matrix_elements = f.final.adjoint() * h * f.final;
  return f;
}

/// Largest |<W_alpha, H W_beta> - M_{alpha beta}| over 0 < ... |alpha - beta|_inf <= radius.
inline double matrix_element_residual(const MatrixXcd& elements, const MatrixXcd& effective, const MagneticTorus& t,
                                      int count, int radius) {
  double worst = 0.0;
  for (const auto& a : t.cells)
    for (const auto& b : t.cells) {
      const Cell d = a - b;
      if (chebyshev_norm(d) > radius) continue;
      const int ra = t.cell_index.at(a) * count, rb = t.cell_index.at(b) * count;
      worst = std::max(worst, max_abs(elements.block(ra, rb, count, count) - effective.block(ra, rb, count, count)));
    }
  return worst;
}

/// sup_{x, gamma} <x - gamma>^m |W_{gamma, j}(x)| for m = 0..4 and the fitted
/// exponential rate, over all columns of a torus family.
struct FamilyDecay {
  std::array<double, 5> moments{};
  double rate = 0.0;
};

inline FamilyDecay family_decay(const MatrixXcd& family, const MagneticTorus& t, const std::vector<Vec2>& positions,
                                int count) {
  FamilyDecay fd;
  const int n = static_cast<int>(positions.size());
  std::vector<std::pair<double, double>> profile;
  for (const auto& gamma : t.cells) {
    const Vec2 g = t.lattice.point(gamma);
    for (int j = 0; j < count; ++j) {
      const auto col = family.col(t.cell_index.at(gamma) * count + j);
      for (const auto& c : t.cells)
        for (int s = 0; s < n; ++s) {
          const double r = t.distance(t.lattice.point(c) + positions[s], g);
          const double v = std::abs(col[torus_row(t, c, s, n)]);
          const double br = std::sqrt(1.0 + r * r);
          for (int m = 0; m <= 4; ++m) fd.moments[m] = std::max(fd.moments[m], std::pow(br, m) * v);
          profile.emplace_back(r, v);
        }
    }
  }
  const double shell = std::min(t.lattice.basis.col(0).norm(), t.lattice.basis.col(1).norm()) / 2.0;
  fd.rate = fit_exponential_decay(profile, shell).rate;
  return fd;
}

/// Power-law exponent m in max |X_{alpha beta}| ~ <alpha - beta>^{-m}, fitted on
/// log-log over the minimal-image cell distances above `floor` times the peak.
inline double gram_offdiagonal_decay(const MatrixXcd& x, const MagneticTorus& t, int count, double floor = 1e-12) {
  std::map<int, double> shells;
  double peak = 0.0;
  for (const auto& a : t.cells)
    for (const auto& b : t.cells) {
      const int r = chebyshev_norm(t.cell_difference(a, b));
      const int ra = t.cell_index.at(a) * count, rb = t.cell_index.at(b) * count;
      const double v = max_abs(x.block(ra, rb, count, count));
      auto& s = shells[r];
      s = std::max(s, v);
      peak = std::max(peak, v);
    }
  std::vector<double> lx, ly;
  for (const auto& [r, v] : shells) {
    if (r == 0) continue;
    if (!(v > floor * peak)) break;
    lx.push_back(std::log(std::sqrt(1.0 + static_cast<double>(r) * r)));
    ly.push_back(std::log(v));
  }
  if (lx.size() < 2) return std::numeric_limits<double>::infinity();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= lx.size();
  my /= lx.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
  return -sxy / sxx;
}

// ---------------------------------------------------------------------------
// Modified projection kernel

/// sup_{x, y} <x - y>^m |K_eps(x, y) - K(x, y)| for m = 0, 2, 4, with
/// K_eps(x, y) = sum_gamma sum_j Omega(x, y, gamma) w_j(x - gamma) conj(w_j(y - gamma)),
/// x over the sites of cell 0 and y over the sites within `radius` cells.
inline std::array<double, 3> modified_kernel_deviation(const WannierBasis& wb, const FieldSpec& field, int radius) {
  std::array<double, 3> out{0.0, 0.0, 0.0};
  const int n = static_cast<int>(wb.positions.size());
  const auto& lat = wb.lattice;
  const auto ys = cells_in_box(lat.dim, radius);
  const auto site = [&](const Cell& c, int s) { return Vec2(lat.point(c) + wb.positions[s]); };
  for (int s = 0; s < n; ++s) {
    const Vec2 x = site({0, 0}, s);
    for (const auto& yc : ys)
      for (int sp = 0; sp < n; ++sp) {
        const Vec2 y = site(yc, sp);
        cplx k0{}, ke{};
        for (int j = 0; j < wb.count; ++j)
          for (const auto& [c, val] : wb.functions[j].values) {
            // x - gamma lies in cell c  =>  gamma = -c
            const Cell gamma = -c;
            const auto it = wb.functions[j].values.find(yc - gamma);
            if (it == wb.functions[j].values.end()) continue;
            const cplx term = val[s] * std::conj(it->second[sp]);
            if (term == cplx{}) continue;
            k0 += term;
            ke += triangle_flux(field, x, y, lat.point(gamma)) * term;
          }
        const double diff = std::abs(ke - k0);
        const double br2 = 1.0 + (x - y).squaredNorm();
        out[0] = std::max(out[0], diff);
        out[1] = std::max(out[1], br2 * diff);
        out[2] = std::max(out[2], br2 * br2 * diff);
      }
  }
  return out;
}

}  // namespace peierls
