#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gridid/error.hpp"
#include "gridid/likelihood.hpp"
#include "../support.hpp"

using namespace gridid;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Every entry of X has its own channel with the given variance.
NoisePropagation diagonal_model(int rows, int cols, double x_var, double y_var) {
  std::vector<GradientEntry> grad;
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) grad.push_back({r, c, c * rows + r, 1.0});
  return NoisePropagation(rows, cols, Vector::Constant(rows * cols, x_var), grad, Vector::Constant(rows, y_var));
}

struct Instance {
  GridSpec spec;
  Matrix X;
  Vector y;
  Vector beta;
  NoisePropagation noise;
};

// Noisy 3-bus sample around a random operating point.
Instance random_instance(std::mt19937_64& rng, int n = 3) {
  GridSpec spec = GridSpec::complete(n);
  const auto pt = testing::random_point(rng, spec);
  const StateParams params = testing::random_params(rng, spec.n_branch());
  const Vector var = testing::uniform_vector(rng, n, 1e-6, 1e-4);
  DirectVariances d{var, var / 10.0, testing::uniform_vector(rng, n, 1e-6, 1e-4), testing::uniform_vector(rng, n, 1e-6, 1e-4)};
  Matrix X = build_regressors(spec, pt.v, pt.theta);
  const Injections inj = injections(spec, params, pt.v, pt.theta);
  Vector y = build_output(inj.p, inj.q) + testing::uniform_vector(rng, 2 * n, -0.01, 0.01);
  NoisePropagation np = propagate_covariance(spec, pt.v, pt.theta, d);
  return {spec, X, y, params.stacked(), np};
}

Matrix pinv(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  const double floor = 1e-12 * eig.eigenvalues().cwiseMax(0.0).mean();
  Vector inv = Vector::Zero(S.rows());
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    if (eig.eigenvalues()(i) > floor) inv(i) = 1.0 / eig.eigenvalues()(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Mahalanobis distance of (X', y') from (X, y) via dense pseudo-inverses.
double dense_quad(const Instance& in, const Matrix& Xp, const Vector& yp) {
  const Matrix diff = in.X - Xp;
  const Eigen::Map<const Vector> u(diff.data(), diff.size());
  const Vector w = in.y - yp;
  return u.dot(pinv(in.noise.dense_sigma_x()) * u) + w.dot(in.noise.y_variance().cwiseInverse().cwiseProduct(w));
}

}  // namespace

TEST_CASE("consistent measurements project onto themselves") {
  std::mt19937_64 rng(41);
  Instance in = random_instance(rng);
  in.y = in.X * in.beta;
  const ProjectionResult pr = project_truth(in.X, in.y, in.beta, in.noise);
  CHECK((pr.X_star - in.X).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((pr.y_star - in.y).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(pr.quad_residual == doctest::Approx(0.0));
}

TEST_CASE("exact inputs put the whole correction on the output") {
  const NoisePropagation np(2, 1, Vector(), {}, Vector::Constant(2, 0.5));
  Matrix X(2, 1);
  X << 1.0, 2.0;
  Vector y(2);
  y << 0.3, 4.1;
  const Vector beta = Vector::Constant(1, 1.5);
  const ProjectionResult pr = project_truth(X, y, beta, np);
  CHECK((pr.X_star - X).norm() == 0.0);
  CHECK((pr.y_star - X * beta).norm() < 1e-14);
}

TEST_CASE("scalar projection by hand") {
  const NoisePropagation np = diagonal_model(1, 1, 1.0, 1.0);
  const ProjectionResult pr = project_truth(Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), np);
  CHECK(pr.X_star(0, 0) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(pr.y_star(0) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(pr.quad_residual == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("projection matches a dense KKT solve") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const Instance in = random_instance(rng);
    const Vector e = in.y - in.X * in.beta;
    const Matrix G = in.noise.dense_gradient();
    const Vector D = in.noise.channel_variance();
    const Matrix J = in.noise.residual_jacobian(in.beta);
    const Eigen::Index c = D.size(), r = e.size();
    // min 1/2 eps' D^-1 eps + 1/2 w' Sy^-1 w  s.t.  w - J eps = e
    Matrix K = Matrix::Zero(c + 2 * r, c + 2 * r);
    K.topLeftCorner(c, c) = D.cwiseInverse().asDiagonal();
    K.block(c, c, r, r) = in.noise.y_variance().cwiseInverse().asDiagonal();
    K.block(0, c + r, c, r) = J.transpose();
    K.block(c, c + r, r, r) = -Matrix::Identity(r, r);
    K.block(c + r, 0, r, c) = -J;
    K.block(c + r, c, r, r) = Matrix::Identity(r, r);
    Vector rhs = Vector::Zero(c + 2 * r);
    rhs.tail(r) = e;
    const Vector sol = K.fullPivLu().solve(rhs);
    const Vector eps = sol.head(c);
    const Vector w = sol.segment(c, r);
    Matrix X_star = in.X;
    const Vector shift = G * eps;
    X_star -= Eigen::Map<const Matrix>(shift.data(), in.X.rows(), in.X.cols());

    const ProjectionResult pr = project_truth(in.X, in.y, in.beta, in.noise);
    CHECK((pr.X_star - X_star).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, X_star.cwiseAbs().maxCoeff()));
    CHECK((pr.y_star - (in.y - w)).cwiseAbs().maxCoeff() < 1e-9);
    const double q = eps.dot(D.cwiseInverse().cwiseProduct(eps)) + w.dot(in.noise.y_variance().cwiseInverse().cwiseProduct(w));
    CHECK(pr.quad_residual == doctest::Approx(q).epsilon(1e-8));
    CHECK(projection_quad(in.X, in.y, in.beta, in.noise) == doctest::Approx(q).epsilon(1e-8));
  }
}

TEST_CASE("projection satisfies the constraint and is optimal") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    const Instance in = random_instance(rng);
    const ProjectionResult pr = project_truth(in.X, in.y, in.beta, in.noise);
    CHECK((pr.y_star - pr.X_star * in.beta).cwiseAbs().maxCoeff() < 1e-9);
    const double best = dense_quad(in, pr.X_star, pr.y_star);
    CHECK(best == doctest::Approx(pr.quad_residual).epsilon(1e-6));

    const Matrix G = in.noise.dense_gradient();
    const Vector sd = in.noise.channel_variance().cwiseSqrt();
    for (int k = 0; k < 100; ++k) {
      Vector delta(sd.size());
      for (Eigen::Index i = 0; i < delta.size(); ++i) delta(i) = 0.5 * sd(i) * normal(rng);
      const Vector shift = G * delta;
      const Matrix Xp = pr.X_star + Eigen::Map<const Matrix>(shift.data(), in.X.rows(), in.X.cols());
      const Vector yp = Xp * in.beta;
      CHECK(best <= dense_quad(in, Xp, yp) * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("unreachable constraint is reported") {
  const NoisePropagation np(1, 1, Vector(), {}, Vector::Zero(1));
  CHECK_THROWS_AS(project_truth(Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), np), NumericalError);
  CHECK(conditional_log_density(Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), np) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("Gaussian log-density values") {
  const NoisePropagation np = diagonal_model(2, 3, 1.0, 1.0);
  const Matrix X = Matrix::Random(2, 3);
  const Vector y = Vector::Random(2);
  CHECK(log_density(X, y, X, y, np) == doctest::Approx(-4.0 * kLog2Pi).epsilon(1e-14));

  const NoisePropagation one(1, 1, Vector(), {}, Vector::Constant(1, 1.0));
  CHECK(log_density(Matrix::Zero(1, 1), Vector::Constant(1, 1.0), Matrix::Zero(1, 1), Vector::Zero(1), one) ==
        doctest::Approx(-0.5 - 0.5 * kLog2Pi).epsilon(1e-14));
  // residual in a zero-variance direction
  CHECK(log_density(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Matrix::Zero(1, 1), Vector::Zero(1), one) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("independent blocks add") {
  std::mt19937_64 rng(44);
  std::vector<GradientEntry> grad{{0, 0, 0, 1.0}, {1, 0, 1, 1.0}};
  const Vector xv = (Vector(2) << 0.3, 2.0).finished();
  const Vector yv = (Vector(2) << 0.7, 1.5).finished();
  const NoisePropagation np(2, 1, xv, grad, yv);
  const Matrix X = (Matrix(2, 1) << 0.4, -1.0).finished();
  const Matrix Xs = (Matrix(2, 1) << 0.1, 0.2).finished();
  const Vector y = (Vector(2) << 1.0, 2.0).finished();
  const Vector ys = (Vector(2) << 0.5, 2.5).finished();
  auto scalar = [](double r, double var) { return -0.5 * r * r / var - 0.5 * std::log(2.0 * std::numbers::pi * var); };
  const double expected = scalar(0.3, 0.3) + scalar(-1.2, 2.0) + scalar(0.5, 0.7) + scalar(-0.5, 1.5);
  CHECK(log_density(X, y, Xs, ys, np) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("true parameters score higher than perturbed ones") {
  std::mt19937_64 rng(45);
  std::normal_distribution<double> normal;
  const GridSpec spec = GridSpec::complete(4);
  const StateParams truth = testing::tree_params(rng, spec, testing::random_tree(rng, spec));
  StateParams other = truth;
  other.g *= 1.1;
  other.b *= 0.95;
  const LoadProfileConfig loads = testing::random_loads(rng, 4, 0.3);
  const MeasurementSet clean = generate_scenario(spec, {truth}, {{{0, 100}}}, loads, 8);
  const MeasurementSet noisy = add_noise(clean, NoiseLevels::uniform(0.001), 9);
  const EIVDataset data = testing::make_dataset(spec, noisy, 0.001);
  double ll_true = 0, ll_other = 0;
  for (std::size_t t = 0; t < data.size(); ++t) {
    ll_true += conditional_log_density(data.samples[t].X, data.samples[t].y, truth, *data.noise[t]);
    ll_other += conditional_log_density(data.samples[t].X, data.samples[t].y, other, *data.noise[t]);
  }
  CHECK(ll_true > ll_other);
}

TEST_CASE("covariance scaling identity and purity") {
  std::mt19937_64 rng(46);
  const Instance in = random_instance(rng);
  const double alpha = 3.7;
  const NoisePropagation scaled(in.noise.x_rows(), in.noise.x_cols(), alpha * in.noise.channel_variance(),
                                in.noise.x_gradient(), alpha * in.noise.y_variance());
  const double q1 = projection_quad(in.X, in.y, in.beta, in.noise);
  const double q2 = projection_quad(in.X, in.y, in.beta, scaled);
  CHECK(q2 == doctest::Approx(q1 / alpha).epsilon(1e-10));
  const int d = in.noise.sigma_x_rank() + in.noise.sigma_y_rank();
  CHECK(scaled.log_normalizer() == doctest::Approx(in.noise.log_normalizer() - 0.5 * d * std::log(alpha)).epsilon(1e-12));
  const double l1 = conditional_log_density(in.X, in.y, in.beta, in.noise);
  const double l2 = conditional_log_density(in.X, in.y, in.beta, scaled);
  CHECK(l2 == doctest::Approx(-0.5 * q1 / alpha + in.noise.log_normalizer() - 0.5 * d * std::log(alpha)).epsilon(1e-10));
  CHECK(l1 == conditional_log_density(in.X, in.y, in.beta, in.noise));
}

TEST_CASE("conditional density equals the log-density at the projection") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 5; ++trial) {
    const Instance in = random_instance(rng);
    const ProjectionResult pr = project_truth(in.X, in.y, in.beta, in.noise);
    CHECK(conditional_log_density(in.X, in.y, in.beta, in.noise) == doctest::Approx(pr.log_density).epsilon(1e-8));
  }
}

TEST_CASE("normalizers cancel in responsibilities") {
  std::mt19937_64 rng(48);
  const Instance in = random_instance(rng);
  std::vector<double> with, without;
  for (int k = 0; k < 3; ++k) {
    const Vector beta = in.beta * (1.0 + 0.02 * k);
    with.push_back(conditional_log_density(in.X, in.y, beta, in.noise));
    without.push_back(-0.5 * projection_quad(in.X, in.y, beta, in.noise));
  }
  auto softmax = [](std::vector<double> l) {
    const double mx = *std::max_element(l.begin(), l.end());
    double s = 0;
    for (double& x : l) s += (x = std::exp(x - mx));
    for (double& x : l) x /= s;
    return l;
  };
  const auto a = softmax(with), b = softmax(without);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-12);
}
