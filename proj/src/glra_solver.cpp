#include "gridid/glra_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gridid/error.hpp"
#include "gridid/likelihood.hpp"

namespace gridid {
namespace {

constexpr double kDirectionPrune = 1e-12;

void check_problem(const EIVDataset& data, std::span<const double> weights) {
  if (weights.size() != data.size()) {
    throw InputError("weights length " + std::to_string(weights.size()) + " does not match " +
                     std::to_string(data.size()) + " samples");
  }
  if (data.noise.size() != data.samples.size()) {
    throw InputError("every sample needs a noise model");
  }
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw InputError("weights must lie in [0, 1]");
    any = any || w > 0.0;
  }
  if (!any) throw InputError("all weights are zero");
}

// Per-row residual variances at the linearization point `beta`.
Vector row_variances(const NoisePropagation& noise, const Vector& beta) {
  const Matrix J = noise.residual_jacobian(beta);
  Vector var = (J.array().square().matrix() * noise.channel_variance());
  var += noise.y_variance();
  return var;
}

struct NullVector {
  Vector v;
  double sigma_min = 0.0;
  bool degenerate = false;
};

NullVector smallest_right_singular_vector(const Matrix& M, double degeneracy_tol) {
  // QR first so the SVD runs on a small square factor.
  const Eigen::Index cols = M.cols();
  Eigen::HouseholderQR<Matrix> qr(M);
  const Matrix R = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const Matrix& V = svd.matrixV();
  NullVector out;
  out.sigma_min = sv(cols - 1);
  const double tie = degeneracy_tol * std::max(sv(0), std::numeric_limits<double>::min());
  Eigen::Index first_tied = cols - 1;
  while (first_tied > 0 && sv(first_tied - 1) - out.sigma_min <= tie) --first_tied;
  if (first_tied == cols - 1) {
    out.v = V.col(cols - 1);
  } else {
    // Ambiguous null direction: take the unit vector in the tied subspace
    // with the largest last component.
    out.degenerate = true;
    const Matrix basis = V.rightCols(cols - first_tied);
    out.v = basis * basis.row(cols - 1).transpose();
    const double norm = out.v.norm();
    if (norm > 0.0) out.v /= norm;
  }
  if (out.v(cols - 1) > 0.0) out.v = -out.v;
  return out;
}

}  // namespace

TlsResult weighted_tls(const EIVDataset& data, std::span<const double> weights,
                       const TlsOptions& options) {
  check_problem(data, weights);
  const int p = data.n_params();
  Eigen::Index total_rows = 0;
  double effective_rows = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (weights[t] > 0.0) {
      total_rows += data.samples[t].X.rows();
      effective_rows += weights[t] * static_cast<double>(data.samples[t].X.rows());
    }
  }
  if (effective_rows < static_cast<double>(p + 1) || total_rows < p + 1) {
    throw NumericalError("weighted TLS needs at least " + std::to_string(p + 1) +
                         " effective equation rows, got " + std::to_string(effective_rows));
  }

  TlsResult result;
  result.rows_used = static_cast<int>(total_rows);
  Vector lin = Vector::Zero(p);
  Matrix M(total_rows, p + 1);
  for (int pass = 0; pass <= options.max_reweight_passes; ++pass) {
    // Scale floor for rows whose propagated variance vanishes.
    double mean_var = 0.0;
    std::vector<Vector> vars(data.size());
    for (std::size_t t = 0; t < data.size(); ++t) {
      if (weights[t] <= 0.0) continue;
      vars[t] = row_variances(*data.noise[t], lin);
      mean_var += vars[t].sum();
    }
    mean_var /= static_cast<double>(total_rows);
    const double var_floor = mean_var > 0.0 ? 1e-12 * mean_var : 1.0;
    const double lin_scale = 1.0 + lin.squaredNorm();

    Eigen::Index row = 0;
    for (std::size_t t = 0; t < data.size(); ++t) {
      if (weights[t] <= 0.0) continue;
      const RegressionSample& s = data.samples[t];
      const double sw = std::sqrt(weights[t]);
      for (Eigen::Index r = 0; r < s.X.rows(); ++r) {
        const double sd = std::sqrt(std::max(vars[t](r), var_floor) / lin_scale);
        const double scale = sw / sd;
        M.row(row).head(p) = s.X.row(r) * scale;
        M(row, p) = s.y(r) * scale;
        ++row;
      }
    }

    const NullVector nv = smallest_right_singular_vector(M, options.degeneracy_tol);
    if (std::abs(nv.v(p)) < 1e-12) {
      if (pass > 0) break;  // keep the previous linearization's answer
      throw NumericalError("TLS null vector has no output component; parameters are unidentifiable");
    }
    const Vector beta = -nv.v.head(p) / nv.v(p);
    result.degenerate = nv.degenerate;
    result.smallest_singular_value = nv.sigma_min;
    result.passes = pass + 1;
    const double change = (beta - lin).norm() / std::max(1.0, beta.norm());
    result.beta = beta;
    lin = beta;
    if (pass > 0 && change < options.reweight_tol) break;
  }
  if (options.max_refine_steps > 0) {
    auto [beta, steps] = refine_objective(data, weights, result.beta, options.max_refine_steps,
                                          options.refine_tol);
    result.beta = std::move(beta);
    result.refine_steps = steps;
    result.objective = weighted_objective(data, weights, result.beta);
    // Second start from GLS; the SVD start can land where the objective is infinite.
    auto [alt, alt_steps] = refine_objective(data, weights, weighted_gls(data, weights),
                                             options.max_refine_steps, options.refine_tol);
    const double alt_objective = weighted_objective(data, weights, alt);
    if (alt_objective < result.objective || !std::isfinite(result.objective)) {
      result.beta = std::move(alt);
      result.refine_steps = alt_steps;
      result.objective = alt_objective;
    }
    return result;
  }
  result.objective = weighted_objective(data, weights, result.beta);
  return result;
}

Vector weighted_gls(const EIVDataset& data, std::span<const double> weights) {
  check_problem(data, weights);
  const auto p = static_cast<Eigen::Index>(data.n_params());
  double mean_var = 0.0;
  Eigen::Index rows = 0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (weights[t] <= 0.0) continue;
    mean_var += data.noise[t]->y_variance().sum();
    rows += data.noise[t]->y_variance().size();
  }
  mean_var /= static_cast<double>(rows);
  const double var_floor = mean_var > 0.0 ? 1e-12 * mean_var : 1.0;
  Matrix H = Matrix::Zero(p, p);
  Vector rhs = Vector::Zero(p);
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (weights[t] <= 0.0) continue;
    const RegressionSample& s = data.samples[t];
    const Vector inv = weights[t] * data.noise[t]->y_variance().cwiseMax(var_floor).cwiseInverse();
    H.noalias() += s.X.transpose() * inv.asDiagonal() * s.X;
    rhs.noalias() += s.X.transpose() * inv.cwiseProduct(s.y);
  }
  Eigen::LDLT<Matrix> ldlt(H);
  const double top = H.diagonal().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(top > 0.0) ||
      ldlt.vectorD().minCoeff() <= 1e-13 * top) {
    throw NumericalError("weighted least-squares normal matrix is singular");
  }
  return ldlt.solve(rhs);
}

std::pair<Vector, int> refine_objective(const EIVDataset& data, std::span<const double> weights,
                                        Vector beta, int max_steps, double tol) {
  check_problem(data, weights);
  const auto p = static_cast<Eigen::Index>(data.n_params());
  if (beta.size() != p) throw InputError("parameter vector length does not match the regressors");
  double F = weighted_objective(data, weights, beta);
  if (!std::isfinite(F)) return {std::move(beta), 0};
  int accepted = 0;
  const double top_weight = *std::max_element(weights.begin(), weights.end());
  for (int step = 0; step < max_steps; ++step) {
    // Gradient of F is -2 sum w X*^T lambda; X*^T W^-1 X* approximates the Hessian.
    Matrix H = Matrix::Zero(p, p);
    Vector g = Vector::Zero(p);
    for (std::size_t t = 0; t < data.size(); ++t) {
      // Negligible weights only shape the search direction; the line search uses all.
      if (weights[t] <= kDirectionPrune * top_weight) continue;
      const RegressionSample& s = data.samples[t];
      const NoisePropagation& noise = *data.noise[t];
      const Matrix J = noise.residual_jacobian(beta);
      Matrix W = J * noise.channel_variance().asDiagonal() * J.transpose();
      W.diagonal() += noise.y_variance();
      Eigen::LLT<Matrix> llt(W);
      if (llt.info() != Eigen::Success) return {std::move(beta), accepted};
      const Vector lambda = llt.solve(s.y - s.X * beta);
      const Vector shift = noise.channel_variance().cwiseProduct(J.transpose() * lambda);
      Matrix Xs = s.X;
      for (const GradientEntry& ge : noise.x_gradient()) Xs(ge.row, ge.col) += ge.value * shift(ge.channel);
      const Matrix LX = llt.matrixL().solve(Xs);
      H.selfadjointView<Eigen::Lower>().rankUpdate(LX.transpose(), weights[t]);
      g.noalias() += weights[t] * Xs.transpose() * lambda;
    }
    const Vector delta = H.selfadjointView<Eigen::Lower>().ldlt().solve(g);
    if (!delta.allFinite()) break;
    double alpha = 1.0;
    double F_new = std::numeric_limits<double>::infinity();
    for (int halving = 0; halving < 30; ++halving) {
      F_new = weighted_objective(data, weights, beta + alpha * delta);
      if (F_new <= F) break;
      alpha *= 0.5;
    }
    if (!(F_new <= F)) break;
    beta += alpha * delta;
    ++accepted;
    const double gain = F - F_new;
    F = F_new;
    if (gain <= tol * std::max(F, 1.0)) break;
  }
  return {std::move(beta), accepted};
}

double weighted_objective(const EIVDataset& data, std::span<const double> weights,
                          const Vector& beta) {
  check_problem(data, weights);
  double total = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    if (weights[t] <= 0.0) continue;
    const RegressionSample& s = data.samples[t];
    total += weights[t] * projection_quad(s.X, s.y, beta, *data.noise[t]);
  }
  return total;
}

}  // namespace gridid
