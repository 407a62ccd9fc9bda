#include "gridid/likelihood.hpp"

#include <cmath>
#include <limits>

#include "gridid/error.hpp"
#include "psd.hpp"

namespace gridid {
namespace {

constexpr double kRangeTol = 1e-8;

void check_shapes(const Matrix& X, const Vector& y, const Vector& beta,
                  const NoisePropagation& noise) {
  if (X.rows() != noise.x_rows() || X.cols() != noise.x_cols() || y.size() != X.rows() ||
      beta.size() != X.cols()) {
    throw InputError("sample, parameter and noise model dimensions are inconsistent");
  }
}

// lambda = W^+ e, with a Cholesky fast path and an eigen pseudo-inverse
// fallback. `feasible` is false when e leaves the range of W.
struct Multiplier {
  Vector lambda;
  double quad = 0.0;
  bool feasible = true;
};

Multiplier solve_multiplier(const Matrix& W, const Vector& e) {
  Multiplier out;
  const double trace = W.trace();
  const double floor = detail::kEigenFloor * trace / static_cast<double>(std::max<Eigen::Index>(1, W.rows()));
  Eigen::LLT<Matrix> llt(W);
  if (trace > 0.0 && llt.info() == Eigen::Success) {
    const Vector diag = llt.matrixLLT().diagonal();
    if ((diag.array().square() > floor).all()) {
      out.lambda = llt.solve(e);
      out.quad = e.dot(out.lambda);
      return out;
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(W);
  const Vector& ev = eig.eigenvalues();
  const Matrix& U = eig.eigenvectors();
  const double ev_floor = detail::eigen_floor(ev);
  const Vector coeff = U.transpose() * e;
  out.lambda = Vector::Zero(e.size());
  double outside = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > ev_floor && ev(i) > 0.0) {
      out.lambda += U.col(i) * (coeff(i) / ev(i));
      out.quad += coeff(i) * coeff(i) / ev(i);
    } else {
      outside += coeff(i) * coeff(i);
    }
  }
  const double scale = std::max(e.squaredNorm(), std::numeric_limits<double>::min());
  out.feasible = outside <= kRangeTol * kRangeTol * scale || outside == 0.0;
  if (e.squaredNorm() == 0.0) out.feasible = true;
  return out;
}

}  // namespace

ProjectionResult project_truth(const Matrix& X, const Vector& y, const Vector& beta,
                               const NoisePropagation& noise) {
  check_shapes(X, y, beta, noise);
  const Vector e = y - X * beta;
  const Matrix J = noise.residual_jacobian(beta);
  const Vector& cv = noise.channel_variance();
  Matrix W = J * cv.asDiagonal() * J.transpose();
  W.diagonal() += noise.y_variance();

  const Multiplier mult = solve_multiplier(W, e);
  if (!mult.feasible) {
    throw NumericalError(
        "projection KKT system is singular: residual lies in a zero-variance direction");
  }
  // Correction to the direct channels: delta = -Sigma J^T lambda; X* = X - mat(G delta).
  const Vector delta = -(cv.asDiagonal() * (J.transpose() * mult.lambda));
  ProjectionResult out;
  out.X_star = X;
  for (const GradientEntry& g : noise.x_gradient()) out.X_star(g.row, g.col) -= g.value * delta(g.channel);
  out.y_star = y - noise.y_variance().cwiseProduct(mult.lambda);
  out.quad_residual = mult.quad;
  out.log_density = log_density(X, y, out.X_star, out.y_star, noise);
  return out;
}

ProjectionResult project_truth(const Matrix& X, const Vector& y, const StateParams& params,
                               const NoisePropagation& noise) {
  return project_truth(X, y, params.stacked(), noise);
}

double log_density(const Matrix& X, const Vector& y, const Matrix& X_star, const Vector& y_star,
                   const NoisePropagation& noise) {
  if (X.rows() != noise.x_rows() || X.cols() != noise.x_cols() || X_star.rows() != X.rows() ||
      X_star.cols() != X.cols() || y.size() != X.rows() || y_star.size() != y.size()) {
    throw InputError("residual shapes do not match the noise model");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double quad = 0.0;

  // Output part: diagonal covariance.
  const Vector ry = y - y_star;
  const double y_floor = detail::eigen_floor(noise.y_variance());
  for (Eigen::Index i = 0; i < ry.size(); ++i) {
    const double var = noise.y_variance()(i);
    if (var > y_floor && var > 0.0) {
      quad += ry(i) * ry(i) / var;
    } else if (ry(i) != 0.0) {
      return kNegInf;
    }
  }

  // Input part: Sigma_X = F F^T, F = G diag(sqrt(var)); quad = ||F^+ u||^2.
  const Matrix diff = X - X_star;
  const Eigen::Map<const Vector> u(diff.data(), diff.size());
  if (noise.n_channels() == 0) {
    if (u.squaredNorm() != 0.0) return kNegInf;
  } else {
    const Matrix F = noise.dense_gradient() * noise.channel_variance().cwiseSqrt().asDiagonal();
    Eigen::JacobiSVD<Matrix> svd(F, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const Vector sq = sv.array().square();
    const double floor = detail::eigen_floor(sq);
    const Vector coeff = svd.matrixU().transpose() * u;
    Vector in_range = Vector::Zero(u.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sq(i) > floor && sq(i) > 0.0) {
        quad += coeff(i) * coeff(i) / sq(i);
        in_range += svd.matrixU().col(i) * coeff(i);
      }
    }
    const double outside = (u - in_range).norm();
    if (outside > kRangeTol * u.norm() && outside > 0.0) return kNegInf;
  }
  return -0.5 * quad + noise.log_normalizer();
}

double projection_quad(const Matrix& X, const Vector& y, const Vector& beta,
                       const NoisePropagation& noise) {
  check_shapes(X, y, beta, noise);
  const Vector e = y - X * beta;
  const Multiplier mult = solve_multiplier(noise.residual_covariance(beta), e);
  if (!mult.feasible) return std::numeric_limits<double>::infinity();
  return mult.quad;
}

double conditional_log_density(const Matrix& X, const Vector& y, const Vector& beta,
                               const NoisePropagation& noise) {
  const double quad = projection_quad(X, y, beta, noise);
  if (!std::isfinite(quad)) return -std::numeric_limits<double>::infinity();
  return -0.5 * quad + noise.log_normalizer();
}

double conditional_log_density(const Matrix& X, const Vector& y, const StateParams& params,
                               const NoisePropagation& noise) {
  return conditional_log_density(X, y, params.stacked(), noise);
}

}  // namespace gridid
