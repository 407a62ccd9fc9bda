#pragma once

#include <memory>
#include <vector>

#include "gridid/grid_model.hpp"
#include "gridid/powerflow.hpp"

namespace gridid {

/// One timestamp of the linear regression form y = X [g; b].
/// X = [[C, D], [D, -C]] is 2n x 2m, y = [p; q].
struct RegressionSample {
  Matrix X;
  Vector y;
  int t = 0;
};

/// Sensitivity of one entry of X to one direct measurement channel.
struct GradientEntry {
  int row = 0;
  int col = 0;
  int channel = 0;
  double value = 0.0;
};

/// First-order error model of one sample:
///   vec(eps_X) = G eps_direct,   eps_direct ~ N(0, diag(channel_variance)),
///   eps_y ~ N(0, diag(y_variance)),
/// with G stored sparsely. Entries of X that are copies of the same
/// underlying quantity share channels, so their errors are perfectly
/// correlated in the implied covariance of vec(eps_X).
class NoisePropagation {
 public:
  NoisePropagation(int x_rows, int x_cols, Vector channel_variance,
                   std::vector<GradientEntry> x_gradient, Vector y_variance);

  int x_rows() const { return x_rows_; }
  int x_cols() const { return x_cols_; }
  int n_channels() const { return static_cast<int>(channel_variance_.size()); }
  const Vector& channel_variance() const { return channel_variance_; }
  const std::vector<GradientEntry>& x_gradient() const { return x_gradient_; }
  const Vector& y_variance() const { return y_variance_; }

  /// -1/2 (d log 2pi + log pdet Sigma_X + log pdet Sigma_y), d = total rank.
  double log_normalizer() const { return log_normalizer_; }
  int sigma_x_rank() const { return sigma_x_rank_; }
  int sigma_y_rank() const { return sigma_y_rank_; }

  /// Dense G (vec(X) column-major x channels).
  Matrix dense_gradient() const;
  /// Dense covariance of vec(eps_X), column-major vectorization.
  Matrix dense_sigma_x() const;
  Matrix dense_sigma_y() const { return y_variance_.asDiagonal(); }

  /// d(X beta)/d(direct channels) for a parameter vector beta (x_rows x channels).
  Matrix residual_jacobian(const Vector& beta) const;
  /// Covariance of eps_y - eps_X beta, i.e. of the equation residual y - X beta.
  Matrix residual_covariance(const Vector& beta) const;

 private:
  int x_rows_;
  int x_cols_;
  Vector channel_variance_;
  std::vector<GradientEntry> x_gradient_;
  Vector y_variance_;
  double log_normalizer_ = 0.0;
  int sigma_x_rank_ = 0;
  int sigma_y_rank_ = 0;
};

/// Variance of each direct channel per bus.
struct DirectVariances {
  Vector v;
  Vector theta;
  Vector p;
  Vector q;
};

Matrix build_regressors(const GridSpec& spec, const Vector& v, const Vector& theta);
Vector build_output(const Vector& p, const Vector& q);

/// Gradient of c_ij (resp. d_ij) with respect to [v; theta] (length 2n).
/// Zero when bus i is not an endpoint of branch j.
Vector c_gradient(const GridSpec& spec, const Vector& v, const Vector& theta, int bus, int branch);
Vector d_gradient(const GridSpec& spec, const Vector& v, const Vector& theta, int bus, int branch);

/// Linearized propagation of direct errors at the measured point.
/// Channels are ordered [v_1..v_n, theta_1..theta_n]; y variance is [p; q].
/// `y_variance_floor` lower-bounds each output variance.
NoisePropagation propagate_covariance(const GridSpec& spec, const Vector& v, const Vector& theta,
                                      const DirectVariances& direct, double y_variance_floor = 0.0);

enum class CovarianceMode { per_timestamp, dataset_mean };

struct EIVOptions {
  CovarianceMode mode = CovarianceMode::per_timestamp;
  // Keeps the likelihood proper when the supplied noise is exactly zero.
  double variance_floor = 1e-20;
};

/// Regression samples with their error models. Noise models may be shared.
struct EIVDataset {
  std::vector<RegressionSample> samples;
  std::vector<std::shared_ptr<const NoisePropagation>> noise;

  std::size_t size() const { return samples.size(); }
  int n_params() const { return samples.empty() ? 0 : static_cast<int>(samples.front().X.cols()); }
};

/// Channel variances (rel * std of the measured series)^2, per bus.
DirectVariances direct_variances(const MeasurementSet& ms, const NoiseLevels& rel);

EIVDataset build_dataset(const GridSpec& spec, const MeasurementSet& ms,
                         const DirectVariances& direct, const EIVOptions& options = {});

}  // namespace gridid
