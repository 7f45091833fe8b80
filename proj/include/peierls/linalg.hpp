#pragma once

// Dense Hermitian helpers shared by every module: eigendecomposition with
// error reporting, spectral functions, norms.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "peierls/errors.hpp"

namespace peierls {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

struct HermitianEigen {
  VectorXd values;    ///< ascending
  MatrixXcd vectors;  ///< columns
};

inline HermitianEigen hermitian_eig(const MatrixXcd& h, const std::string& where = {}) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h);
  if (es.info() != Eigen::Success)
    throw NumericalError("Hermitian eigensolver failed" + (where.empty() ? "" : " at " + where));
  return {es.eigenvalues(), es.eigenvectors()};
}

inline VectorXd hermitian_eigenvalues(const MatrixXcd& h, const std::string& where = {}) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericalError("Hermitian eigensolver failed" + (where.empty() ? "" : " at " + where));
  return es.eigenvalues();
}

/// f(H) for Hermitian H through its eigendecomposition.
template <class F>
MatrixXcd hermitian_function(const HermitianEigen& eig, F&& f) {
  VectorXcd fv(eig.values.size());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) fv[i] = f(eig.values[i]);
  return eig.vectors * fv.asDiagonal() * eig.vectors.adjoint();
}

/// H^{-1/2}; throws when the smallest eigenvalue is not above `min_eigenvalue`.
inline MatrixXcd inverse_sqrt(const MatrixXcd& h, double min_eigenvalue, double* smallest = nullptr) {
  const auto eig = hermitian_eig(h, "inverse square root");
  const double lo = eig.values.size() ? eig.values.minCoeff() : 1.0;
  if (smallest) *smallest = lo;
  if (!(lo > min_eigenvalue))
    throw NumericalError("matrix is not positive enough for an inverse square root (min eigenvalue " +
                         std::to_string(lo) + ")");
  return hermitian_function(eig, [](double x) { return std::complex<double>(1.0 / std::sqrt(x)); });
}

/// exp(-i t H) from a precomputed eigendecomposition.
inline MatrixXcd unitary_propagator(const HermitianEigen& eig, double t) {
  return hermitian_function(eig, [t](double x) { return std::exp(std::complex<double>(0.0, -t * x)); });
}

/// Largest singular value.
inline double spectral_norm(const MatrixXcd& m) {
  if (m.size() == 0) return 0.0;
  const MatrixXcd g = m.rows() >= m.cols() ? MatrixXcd(m.adjoint() * m) : MatrixXcd(m * m.adjoint());
  const VectorXd ev = hermitian_eigenvalues(0.5 * (g + g.adjoint()), "spectral norm");
  return std::sqrt(std::max(0.0, ev.maxCoeff()));
}

inline double hermiticity_defect(const MatrixXcd& h) {
  if (h.size() == 0) return 0.0;
  return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

inline double max_abs(const MatrixXcd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace peierls
