#pragma once

#include <span>
#include <utility>

#include "gridid/eiv_transform.hpp"

namespace gridid {

struct TlsOptions {
  // Row scales are re-linearized at the latest estimate this many times at most.
  int max_reweight_passes = 4;
  // Relative change in the parameter vector that ends re-linearization early.
  double reweight_tol = 1e-10;
  // Singular values within this fraction of the largest count as tied.
  double degeneracy_tol = 1e-12;
  // Gauss-Newton steps on the exact weighted objective after the SVD
  // passes. 0 returns the relaxed solution unchanged.
  int max_refine_steps = 20;
  double refine_tol = 1e-10;
};

struct TlsResult {
  Vector beta;                   // [g; b]
  double objective = 0.0;        // sum_t w_t * quad_t(beta)
  double smallest_singular_value = 0.0;
  bool degenerate = false;       // smallest singular value was not simple
  int rows_used = 0;
  int passes = 0;
  int refine_steps = 0;
};

/// Responsibility-weighted errors-in-variables regression solved as a
/// low-rank approximation of the stacked augmented matrix [X_t | y_t].
///
/// Samples are stacked vertically so one null vector [beta; -1] annihilates
/// the approximation (rank <= 2m). Each scalar equation row is whitened by
/// the standard deviation of its residual y_r - x_r^T beta under the
/// propagated direct-error model, evaluated at the current estimate and
/// divided by sqrt(1 + |beta|^2) so the TLS objective reproduces the
/// residual-variance-weighted objective at the linearization point.
/// Cross-row correlations are ignored. The first pass linearizes at
/// beta = 0, i.e. whitens by the output variances only.
///
/// The row scaling ignores the coupling between rows of one sample, which
/// biases the estimate at realistic noise levels. Unless disabled, the SVD
/// solution seeds a Gauss-Newton descent on weighted_objective(); every
/// accepted step lowers it. A second descent starts from weighted_gls() and
/// the lower of the two objectives is returned.
///
/// Rows with weight exactly zero are skipped.
/// Throws InputError on bad weights and NumericalError when fewer than
/// 2m+1 weighted rows remain or the null vector has no output component.
TlsResult weighted_tls(const EIVDataset& data, std::span<const double> weights,
                       const TlsOptions& options = {});

/// sum_t w_t * e_t^T W_t(beta)^+ e_t, the weighted squared distance of the
/// data to the constraint y = X beta.
/// Weighted least squares treating X as exact: minimizes
/// sum_t w_t (y_t - X_t beta)^T Sigma_y^-1 (y_t - X_t beta).
/// Throws NumericalError when the weighted normal matrix is singular.
Vector weighted_gls(const EIVDataset& data, std::span<const double> weights);

/// Gauss-Newton with backtracking on weighted_objective() from `beta`.
/// Returns the improved estimate and the number of accepted steps.
std::pair<Vector, int> refine_objective(const EIVDataset& data, std::span<const double> weights,
                                        Vector beta, int max_steps, double tol = 1e-10);

double weighted_objective(const EIVDataset& data, std::span<const double> weights,
                          const Vector& beta);

}  // namespace gridid
