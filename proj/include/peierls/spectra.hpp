#pragma once

// Windowed spectra, Hausdorff distances, log-log slope fits and the
// dynamical comparison exp(-itH) V - V exp(-itM).

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "peierls/bloch.hpp"
#include "peierls/errors.hpp"
#include "peierls/linalg.hpp"

namespace peierls {

struct SpectrumReport {
  std::string source_label;
  Interval window;
  std::vector<double> values;
  std::vector<std::string> warnings;
};

/// Sorted values of `values` lying in the closed window [lo, hi].
inline std::vector<double> clip_to_window(const std::vector<double>& values, const Interval& window) {
  std::vector<double> out;
  for (double v : values)
    if (v >= window.lo && v <= window.hi) out.push_back(v);
  std::sort(out.begin(), out.end());
  return out;
}

inline SpectrumReport window_spectrum(const MatrixXcd& op, const Interval& window, std::string label = {}) {
  if (hermiticity_defect(op) > 1e-10 * std::max(1.0, max_abs(op)))
    throw ValidationError("window_spectrum needs a Hermitian operator");
  const VectorXd ev = hermitian_eigenvalues(op, label.empty() ? "window spectrum" : label);
  SpectrumReport r;
  r.source_label = std::move(label);
  r.window = window;
  r.values = clip_to_window(std::vector<double>(ev.data(), ev.data() + ev.size()), window);
  if (r.values.empty()) r.warnings.push_back("no eigenvalues in the window");
  return r;
}

/// Hausdorff distance of two sorted finite sets by a two-pointer scan.
inline double hausdorff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw EmptySpectrum("Hausdorff distance of an empty set");
  const auto one_sided = [](const std::vector<double>& from, const std::vector<double>& to) {
    double worst = 0.0;
    std::size_t j = 0;
    for (double x : from) {
      while (j + 1 < to.size() && to[j + 1] <= x) ++j;
      double d = std::abs(x - to[j]);
      if (j + 1 < to.size()) d = std::min(d, std::abs(to[j + 1] - x));
      worst = std::max(worst, d);
    }
    return worst;
  };
  return std::max(one_sided(a, b), one_sided(b, a));
}

struct SlopeFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();  ///< 95% interval for the slope
  double hi = std::numeric_limits<double>::quiet_NaN();
  int points = 0;
  bool dropped_first = false;

  bool valid() const { return points >= 4 && std::isfinite(slope); }
};

/// Least squares of log y against log x. The first point is dropped when it
/// sits at the numerical floor (below 10 x `baseline`); nonpositive values are skipped.
inline SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y, double baseline = 0.0) {
  SlopeFit fit;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i == 0 && baseline > 0.0 && y[i] < 10.0 * baseline) {
      fit.dropped_first = true;
      continue;
    }
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  fit.points = static_cast<int>(lx.size());
  if (lx.size() < 2) return fit;
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) sxx += (lx[i] - mx) * (lx[i] - mx), sxy += (lx[i] - mx) * (ly[i] - my);
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (lx.size() > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - fit.intercept - fit.slope * lx[i];
      sse += r * r;
    }
    const double se = std::sqrt(sse / (n - 2.0) / sxx);
    const boost::math::students_t dist(n - 2.0);
    const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
    fit.lo = fit.slope - tq * se;
    fit.hi = fit.slope + tq * se;
  } else {
    fit.lo = fit.hi = fit.slope;
  }
  return fit;
}

struct EvolveCurve {
  std::vector<double> times;
  std::vector<double> errors;
  double commutator_norm = 0.0;  ///< ||H V - V M||
  double envelope = 0.0;         ///< fitted c in err(t) ~ c t
  bool duhamel_holds = true;     ///< err(t) <= ||HV - VM|| t + err(0) at every t
};

/// err(t) = ||exp(-itH) V - V exp(-itM)|| through the eigendecompositions of H and M.
inline EvolveCurve evolve_compare(const HermitianEigen& h, const MatrixXcd& hv, const MatrixXcd& v,
                                  const MatrixXcd& m, const std::vector<double>& times) {
  EvolveCurve out;
  out.times = times;
  const auto me = hermitian_eig(0.5 * (m + m.adjoint()), "effective magnetic matrix");
  out.commutator_norm = spectral_norm(hv - v * m);
  const MatrixXcd b = h.vectors.adjoint() * v * me.vectors;
  double num = 0.0, den = 0.0;
  for (double t : times) {
    MatrixXcd c(b.rows(), b.cols());
    for (Eigen::Index a = 0; a < b.rows(); ++a) {
      const cplx ea = std::exp(-kI * t * h.values[a]);
      for (Eigen::Index k = 0; k < b.cols(); ++k) c(a, k) = b(a, k) * (ea - std::exp(-kI * t * me.values[k]));
    }
    const double e = spectral_norm(c);
    out.errors.push_back(e);
    num += e * t;
    den += t * t;
  }
  out.envelope = den > 0.0 ? num / den : 0.0;
  const double e0 = out.errors.empty() ? 0.0 : out.errors.front();
  for (std::size_t i = 0; i < times.size(); ++i)
    if (out.errors[i] > out.commutator_norm * std::abs(times[i]) + e0 + 1e-10) out.duhamel_holds = false;
  return out;
}

inline EvolveCurve evolve_compare(const MatrixXcd& h, const MatrixXcd& v, const MatrixXcd& m,
                                  const std::vector<double>& times) {
  return evolve_compare(hermitian_eig(h, "evolution host"), h * v, v, m, times);
}

}  // namespace peierls
