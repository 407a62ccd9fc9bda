#pragma once

#include "gridid/eiv_transform.hpp"

namespace gridid {

/// Maximum-likelihood estimate of the noise-free (X, y) consistent with a
/// parameter vector, and the resulting measurement log-density.
struct ProjectionResult {
  Matrix X_star;
  Vector y_star;
  double log_density = 0.0;
  double quad_residual = 0.0;
};

/// Minimizes the Mahalanobis distance between (X, y) and (X*, y*) subject to
/// y* = X* beta. Closed form from the KKT system:
///   e = y - X beta,  W = Sigma_y + J Sigma_direct J^T,  lambda = W^+ e,
///   y* = y - Sigma_y lambda,  X* = X + mat(G Sigma_direct J^T lambda).
/// Throws NumericalError when e has a component W cannot explain (the
/// constraint is unreachable under the given covariances).
ProjectionResult project_truth(const Matrix& X, const Vector& y, const Vector& beta,
                               const NoisePropagation& noise);
ProjectionResult project_truth(const Matrix& X, const Vector& y, const StateParams& params,
                               const NoisePropagation& noise);

/// Gaussian log-density of the residuals (X - X*, y - y*) under pseudo-inverse
/// semantics: a residual along a zero-variance direction yields -infinity.
double log_density(const Matrix& X, const Vector& y, const Matrix& X_star, const Vector& y_star,
                   const NoisePropagation& noise);

/// e^T W^+ e for e = y - X beta; equals the quad residual of project_truth.
/// Returns +infinity when e is not in the range of W.
double projection_quad(const Matrix& X, const Vector& y, const Vector& beta,
                       const NoisePropagation& noise);

/// log P(X, y | beta) := log P(X, y | X*, y*). Uses the cached normalizer;
/// returns -infinity for impossible measurements.
double conditional_log_density(const Matrix& X, const Vector& y, const Vector& beta,
                               const NoisePropagation& noise);
double conditional_log_density(const Matrix& X, const Vector& y, const StateParams& params,
                               const NoisePropagation& noise);

}  // namespace gridid
