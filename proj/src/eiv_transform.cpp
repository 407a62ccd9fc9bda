#include "gridid/eiv_transform.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "gridid/error.hpp"
#include "psd.hpp"

namespace gridid {
namespace {

void check_point(const GridSpec& spec, const Vector& v, const Vector& theta) {
  if (v.size() != spec.n_bus() || theta.size() != spec.n_bus()) {
    throw InputError("voltage vectors must have one entry per bus");
  }
  if (!v.allFinite() || !theta.allFinite()) throw InputError("non-finite voltage input");
  if ((v.array() <= 0.0).any()) throw InputError("voltage magnitudes must be positive");
}

// Partials of c and d for endpoint `bus` of branch (a, b), in the order
// d/dv_a, d/dv_b, d/dtheta_a, d/dtheta_b.
struct EndpointGradient {
  double c[4];
  double d[4];
};

EndpointGradient endpoint_gradient(const Branch& br, int bus, const Vector& v, const Vector& theta) {
  const double va = v(br.from);
  const double vb = v(br.to);
  const double delta = theta(br.from) - theta(br.to);
  const double cs = std::cos(delta);
  const double sn = std::sin(delta);
  const bool at_from = bus == br.from;
  const double s = at_from ? 1.0 : -1.0;
  EndpointGradient g{};
  // c = v_i^2 - va vb cos(delta)
  g.c[0] = (at_from ? 2.0 * va : 0.0) - vb * cs;
  g.c[1] = (at_from ? 0.0 : 2.0 * vb) - va * cs;
  g.c[2] = va * vb * sn;
  g.c[3] = -va * vb * sn;
  // d = -s va vb sin(delta)
  g.d[0] = -s * vb * sn;
  g.d[1] = -s * va * sn;
  g.d[2] = -s * va * vb * cs;
  g.d[3] = s * va * vb * cs;
  return g;
}

}  // namespace

NoisePropagation::NoisePropagation(int x_rows, int x_cols, Vector channel_variance,
                                   std::vector<GradientEntry> x_gradient, Vector y_variance)
    : x_rows_(x_rows),
      x_cols_(x_cols),
      channel_variance_(std::move(channel_variance)),
      x_gradient_(std::move(x_gradient)),
      y_variance_(std::move(y_variance)) {
  if (y_variance_.size() != x_rows_) throw InputError("output variance length must equal X rows");
  if ((channel_variance_.array() < 0.0).any() || (y_variance_.array() < 0.0).any() ||
      !channel_variance_.allFinite() || !y_variance_.allFinite()) {
    throw InputError("direct error covariance must be positive semidefinite");
  }
  for (const GradientEntry& e : x_gradient_) {
    if (e.row < 0 || e.row >= x_rows_ || e.col < 0 || e.col >= x_cols_ || e.channel < 0 ||
        e.channel >= n_channels()) {
      throw InputError("gradient entry out of range");
    }
  }

  // Sigma_X = F F^T with F = G diag(sqrt(var)); its nonzero spectrum equals
  // that of the small matrix F^T F.
  detail::PseudoDeterminant px;
  if (n_channels() > 0) {
    const Matrix F = dense_gradient() * channel_variance_.cwiseSqrt().asDiagonal();
    const Matrix small = F.transpose() * F;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(small, Eigen::EigenvaluesOnly);
    px = detail::pseudo_determinant(eig.eigenvalues());
  }
  const detail::PseudoDeterminant py = detail::pseudo_determinant(y_variance_);
  sigma_x_rank_ = px.rank;
  sigma_y_rank_ = py.rank;
  const double d = static_cast<double>(px.rank + py.rank);
  log_normalizer_ = -0.5 * (d * std::log(2.0 * std::numbers::pi) + px.log_pdet + py.log_pdet);
}

Matrix NoisePropagation::dense_gradient() const {
  Matrix G = Matrix::Zero(static_cast<Eigen::Index>(x_rows_) * x_cols_, n_channels());
  for (const GradientEntry& e : x_gradient_) {
    G(static_cast<Eigen::Index>(e.col) * x_rows_ + e.row, e.channel) += e.value;
  }
  return G;
}

Matrix NoisePropagation::dense_sigma_x() const {
  const Matrix G = dense_gradient();
  return G * channel_variance_.asDiagonal() * G.transpose();
}

Matrix NoisePropagation::residual_jacobian(const Vector& beta) const {
  if (beta.size() != x_cols_) throw InputError("parameter vector length must equal X columns");
  Matrix J = Matrix::Zero(x_rows_, n_channels());
  for (const GradientEntry& e : x_gradient_) J(e.row, e.channel) += e.value * beta(e.col);
  return J;
}

Matrix NoisePropagation::residual_covariance(const Vector& beta) const {
  const Matrix J = residual_jacobian(beta);
  Matrix W = J * channel_variance_.asDiagonal() * J.transpose();
  W.diagonal() += y_variance_;
  return W;
}

Matrix build_regressors(const GridSpec& spec, const Vector& v, const Vector& theta) {
  check_point(spec, v, theta);
  const int n = spec.n_bus();
  const int m = spec.n_branch();
  Matrix X = Matrix::Zero(2 * n, 2 * m);
  for (int j = 0; j < m; ++j) {
    const Branch& br = spec.branches()[static_cast<std::size_t>(j)];
    const double vv = v(br.from) * v(br.to);
    const double delta = theta(br.from) - theta(br.to);
    for (int i : {br.from, br.to}) {
      const double s = i == br.from ? 1.0 : -1.0;
      const double c = v(i) * v(i) - vv * std::cos(s * delta);
      const double d = -vv * std::sin(s * delta);
      X(i, j) = c;
      X(i, m + j) = d;
      X(n + i, j) = d;
      X(n + i, m + j) = -c;
    }
  }
  return X;
}

Vector build_output(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw InputError("p and q must have the same length");
  Vector y(p.size() + q.size());
  y << p, q;
  return y;
}

Vector c_gradient(const GridSpec& spec, const Vector& v, const Vector& theta, int bus, int branch) {
  check_point(spec, v, theta);
  const int n = spec.n_bus();
  Vector grad = Vector::Zero(2 * n);
  const Branch& br = spec.branches().at(static_cast<std::size_t>(branch));
  if (bus != br.from && bus != br.to) return grad;
  const EndpointGradient eg = endpoint_gradient(br, bus, v, theta);
  grad(br.from) += eg.c[0];
  grad(br.to) += eg.c[1];
  grad(n + br.from) += eg.c[2];
  grad(n + br.to) += eg.c[3];
  return grad;
}

Vector d_gradient(const GridSpec& spec, const Vector& v, const Vector& theta, int bus, int branch) {
  check_point(spec, v, theta);
  const int n = spec.n_bus();
  Vector grad = Vector::Zero(2 * n);
  const Branch& br = spec.branches().at(static_cast<std::size_t>(branch));
  if (bus != br.from && bus != br.to) return grad;
  const EndpointGradient eg = endpoint_gradient(br, bus, v, theta);
  grad(br.from) += eg.d[0];
  grad(br.to) += eg.d[1];
  grad(n + br.from) += eg.d[2];
  grad(n + br.to) += eg.d[3];
  return grad;
}

NoisePropagation propagate_covariance(const GridSpec& spec, const Vector& v, const Vector& theta,
                                      const DirectVariances& direct, double y_variance_floor) {
  check_point(spec, v, theta);
  const int n = spec.n_bus();
  const int m = spec.n_branch();
  if (direct.v.size() != n || direct.theta.size() != n || direct.p.size() != n ||
      direct.q.size() != n) {
    throw InputError("direct variances must have one entry per bus and channel");
  }
  Vector channel_var(2 * n);
  channel_var << direct.v, direct.theta;
  Vector y_var = build_output(direct.p, direct.q);
  if ((channel_var.array() < 0.0).any() || (y_var.array() < 0.0).any()) {
    throw InputError("direct error covariance must be positive semidefinite");
  }
  y_var = y_var.cwiseMax(y_variance_floor);

  std::vector<GradientEntry> entries;
  entries.reserve(static_cast<std::size_t>(m) * 32);
  for (int j = 0; j < m; ++j) {
    const Branch& br = spec.branches()[static_cast<std::size_t>(j)];
    const int channels[4] = {br.from, br.to, n + br.from, n + br.to};
    for (int i : {br.from, br.to}) {
      const EndpointGradient eg = endpoint_gradient(br, i, v, theta);
      for (int k = 0; k < 4; ++k) {
        // c_ij sits at (i, j) and, negated, at (n+i, m+j); d_ij at (i, m+j) and (n+i, j).
        entries.push_back({i, j, channels[k], eg.c[k]});
        entries.push_back({n + i, m + j, channels[k], -eg.c[k]});
        entries.push_back({i, m + j, channels[k], eg.d[k]});
        entries.push_back({n + i, j, channels[k], eg.d[k]});
      }
    }
  }
  return NoisePropagation(2 * n, 2 * m, std::move(channel_var), std::move(entries), std::move(y_var));
}

DirectVariances direct_variances(const MeasurementSet& ms, const NoiseLevels& rel) {
  if (rel.v < 0.0 || rel.theta < 0.0 || rel.p < 0.0 || rel.q < 0.0) {
    throw InputError("relative noise levels must be non-negative");
  }
  const int n = ms.n_bus;
  const auto T = static_cast<double>(ms.size());
  DirectVariances out{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  if (ms.size() < 2) return out;
  auto channel = [&](auto pick, double r, Vector& dst) {
    for (int i = 0; i < n; ++i) {
      double mean = 0.0;
      for (const OperatingPoint& op : ms.points) mean += pick(op)(i);
      mean /= T;
      double ss = 0.0;
      for (const OperatingPoint& op : ms.points) ss += std::pow(pick(op)(i) - mean, 2);
      dst(i) = r * r * ss / (T - 1.0);
    }
  };
  channel([](const OperatingPoint& op) -> const Vector& { return op.v; }, rel.v, out.v);
  channel([](const OperatingPoint& op) -> const Vector& { return op.theta; }, rel.theta, out.theta);
  channel([](const OperatingPoint& op) -> const Vector& { return op.p; }, rel.p, out.p);
  channel([](const OperatingPoint& op) -> const Vector& { return op.q; }, rel.q, out.q);
  return out;
}

EIVDataset build_dataset(const GridSpec& spec, const MeasurementSet& ms,
                         const DirectVariances& direct, const EIVOptions& options) {
  if (ms.n_bus != spec.n_bus()) {
    throw InputError("measurements have " + std::to_string(ms.n_bus) + " buses, grid has " +
                     std::to_string(spec.n_bus()));
  }
  EIVDataset data;
  data.samples.reserve(ms.size());
  data.noise.reserve(ms.size());
  std::shared_ptr<const NoisePropagation> shared;
  if (options.mode == CovarianceMode::dataset_mean && ms.size() > 0) {
    Vector v_mean = Vector::Zero(spec.n_bus());
    Vector th_mean = Vector::Zero(spec.n_bus());
    for (const OperatingPoint& op : ms.points) {
      v_mean += op.v;
      th_mean += op.theta;
    }
    v_mean /= static_cast<double>(ms.size());
    th_mean /= static_cast<double>(ms.size());
    shared = std::make_shared<const NoisePropagation>(
        propagate_covariance(spec, v_mean, th_mean, direct, options.variance_floor));
  }
  for (std::size_t t = 0; t < ms.size(); ++t) {
    const OperatingPoint& op = ms.points[t];
    try {
      data.samples.push_back(
          {build_regressors(spec, op.v, op.theta), build_output(op.p, op.q), static_cast<int>(t)});
      if (shared) {
        data.noise.push_back(shared);
      } else {
        data.noise.push_back(std::make_shared<const NoisePropagation>(
            propagate_covariance(spec, op.v, op.theta, direct, options.variance_floor)));
      }
    } catch (const InputError& e) {
      throw InputError("timestamp " + std::to_string(t + 1) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace gridid
