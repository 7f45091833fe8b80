#pragma once

// Vector potentials, straight-line link phases and triangle fluxes.
//
// link_phase(x, y) = exp(-i int_[x,y] A), so that a hopping kernel K(x, y)
// becomes Lambda(x, y) K(x, y) under minimal coupling.

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "peierls/errors.hpp"
#include "peierls/lattice.hpp"

namespace peierls {

/// a cos(<k, x> + phase)
struct GaugeTerm {
  Vec2 k = Vec2::Zero();
  double amplitude = 0.0;
  double phase = 0.0;

  double value(const Vec2& x) const { return amplitude * std::cos(k.dot(x) + phase); }
  Vec2 gradient(const Vec2& x) const { return -amplitude * std::sin(k.dot(x) + phase) * k; }
};

inline double gauge_value(const std::vector<GaugeTerm>& terms, const Vec2& x) {
  double s = 0.0;
  for (const auto& t : terms) s += t.value(x);
  return s;
}

inline Vec2 gauge_gradient(const std::vector<GaugeTerm>& terms, const Vec2& x) {
  Vec2 g = Vec2::Zero();
  for (const auto& t : terms) g += t.gradient(x);
  return g;
}

enum class GaugeKind { none, landau_uniform, slowly_varying, pure_gauge };

enum class LinkRule { straight_line, midpoint };

struct FieldSpec {
  double epsilon = 0.0;
  GaugeKind kind = GaugeKind::none;
  double b = 1.0;           ///< uniform strength: A = (0, eps b x_1) for the Landau gauge
  double modulation = 0.0;  ///< slowly varying: A_eps(x) = A(eps x), A(u) = (0, b u_1 + modulation sin u_1)
  std::vector<GaugeTerm> gauge;        ///< pure gauge: A = eps grad f
  std::vector<GaugeTerm> gauge_shift;  ///< extra exact term grad g added to any field
  std::optional<std::pair<int, int>> flux_rational;  ///< declared flux 2 pi p / Q per unit area
  int quadrature_nodes = 16;

  bool is_zero() const { return (kind == GaugeKind::none || epsilon == 0.0) && gauge_shift.empty(); }

  /// The part of A that is not an exact gradient of a closed-form function.
  Vec2 smooth_potential(const Vec2& x) const {
    switch (kind) {
      case GaugeKind::landau_uniform: return Vec2(0.0, epsilon * b * x.x());
      case GaugeKind::slowly_varying: {
        const double u = epsilon * x.x();
        return Vec2(0.0, b * u + modulation * std::sin(u));
      }
      default: return Vec2::Zero();
    }
  }

  Vec2 potential(const Vec2& x) const {
    Vec2 a = smooth_potential(x) + gauge_gradient(gauge_shift, x);
    if (kind == GaugeKind::pure_gauge) a += epsilon * gauge_gradient(gauge, x);
    return a;
  }

  /// Magnetic field B = d_1 A_2 - d_2 A_1.
  double field_strength(const Vec2& x) const {
    switch (kind) {
      case GaugeKind::landau_uniform: return epsilon * b;
      case GaugeKind::slowly_varying: return epsilon * (b + modulation * std::cos(epsilon * x.x()));
      default: return 0.0;
    }
  }

  /// sup |B|
  double field_bound() const {
    switch (kind) {
      case GaugeKind::landau_uniform: return std::abs(epsilon * b);
      case GaugeKind::slowly_varying: return std::abs(epsilon) * (std::abs(b) + std::abs(modulation));
      default: return 0.0;
    }
  }

  /// Linear part A_lin(x) = M x of the potential.
  Mat2 linear_part() const {
    Mat2 m = Mat2::Zero();
    if (kind == GaugeKind::landau_uniform || kind == GaugeKind::slowly_varying) m(1, 0) = epsilon * b;
    return m;
  }

  /// int_[x,y] A along the straight segment.
  double line_integral(const Vec2& x, const Vec2& y) const {
    double s = gauge_value(gauge_shift, y) - gauge_value(gauge_shift, x);
    if (epsilon == 0.0) return s;
    switch (kind) {
      case GaugeKind::none: break;
      case GaugeKind::landau_uniform: s += epsilon * b * (y.y() - x.y()) * (x.x() + y.x()) / 2.0; break;
      case GaugeKind::pure_gauge: s += epsilon * (gauge_value(gauge, y) - gauge_value(gauge, x)); break;
      case GaugeKind::slowly_varying: s += quadrature_integral(x, y); break;
    }
    return s;
  }

  /// <A((x + y) / 2), y - x> for the smooth part; exact for the gradient terms.
  double midpoint_integral(const Vec2& x, const Vec2& y) const {
    double s = gauge_value(gauge_shift, y) - gauge_value(gauge_shift, x);
    if (epsilon == 0.0) return s;
    if (kind == GaugeKind::pure_gauge) return s + epsilon * (gauge_value(gauge, y) - gauge_value(gauge, x));
    return s + smooth_potential(0.5 * (x + y)).dot(y - x);
  }

  double integral(const Vec2& x, const Vec2& y, LinkRule rule) const {
    return rule == LinkRule::straight_line ? line_integral(x, y) : midpoint_integral(x, y);
  }

 private:
  double quadrature_integral(const Vec2& x, const Vec2& y) const {
    using boost::math::quadrature::gauss;
    const Vec2 d = y - x;
    const auto f = [&](double t) { return smooth_potential(x + t * d).dot(d); };
    double prev = quadrature_nodes <= 16 ? gauss<double, 16>::integrate(f, 0.0, 1.0)
                                         : gauss<double, 32>::integrate(f, 0.0, 1.0);
    const double next = quadrature_nodes <= 16 ? gauss<double, 32>::integrate(f, 0.0, 1.0)
                                               : gauss<double, 64>::integrate(f, 0.0, 1.0);
    if (std::abs(next - prev) <= 1e-12 * std::max(1.0, std::abs(next))) return next;
    prev = next;
    const double last = gauss<double, 128>::integrate(f, 0.0, 1.0);
    if (std::abs(last - prev) <= 1e-12 * std::max(1.0, std::abs(last))) return last;
    throw NumericalError("link-phase quadrature did not converge");
  }
};

inline cplx link_phase(const FieldSpec& field, const Vec2& x, const Vec2& y,
                       LinkRule rule = LinkRule::straight_line) {
  return std::exp(-kI * field.integral(x, y, rule));
}

/// Lambda(x, z) Lambda(z, y) Lambda(y, x), the holonomy around the triangle.
inline cplx triangle_flux(const FieldSpec& field, const Vec2& x, const Vec2& y, const Vec2& z) {
  return link_phase(field, x, z) * link_phase(field, z, y) * link_phase(field, y, x);
}

/// Checks a declared rational flux against the uniform part of the field.
inline void check_declared_flux(const FieldSpec& field, double unit_area = 1.0) {
  if (!field.flux_rational) return;
  const auto [p, q] = *field.flux_rational;
  const double want = kTwoPi * p / q;
  const double have = field.kind == GaugeKind::pure_gauge || field.kind == GaugeKind::none ? 0.0
                                                                                           : field.epsilon * field.b * unit_area;
  if (std::abs(want - have) > 1e-12 * std::max(1.0, std::abs(want)))
    throw ValidationError("declared flux_rational does not match the field");
}

}  // namespace peierls
