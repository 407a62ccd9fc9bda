#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "gridid/em_engine.hpp"
#include "gridid/error.hpp"
#include "gridid/evaluation.hpp"
#include "../support.hpp"

using namespace gridid;

namespace {

struct Mixture {
  GridSpec spec;
  std::vector<StateParams> states;
  MeasurementSet ms;
  EIVDataset data;
};

Mixture two_bus_mixture(std::uint64_t seed, int T, double rel) {
  GridSpec spec = GridSpec::complete(2);
  std::vector<StateParams> states{{Vector::Constant(1, 2.0), Vector::Constant(1, -5.0)},
                                  {Vector::Constant(1, 6.0), Vector::Constant(1, -12.0)}};
  LoadProfileConfig loads{Vector::Zero(2), Vector::Zero(2), 1.0};
  loads.p_base(1) = -0.2;
  loads.q_base(1) = -0.08;
  MeasurementSet clean = generate_scenario(spec, states, {{{0, T / 2}, {1, T - T / 2}}}, loads, seed);
  MeasurementSet ms = rel > 0 ? add_noise(clean, NoiseLevels::uniform(rel), seed + 1) : clean;
  EIVDataset data = testing::make_dataset(spec, ms, rel);
  return {spec, states, std::move(ms), std::move(data)};
}

Mixture tree_mixture(std::uint64_t seed, int n, int K, int T, double rel) {
  std::mt19937_64 rng(seed);
  GridSpec spec = GridSpec::complete(n);
  std::vector<StateParams> states;
  Schedule sched;
  for (int k = 0; k < K; ++k) {
    states.push_back(testing::tree_params(rng, spec, testing::random_tree(rng, spec)));
    sched.runs.emplace_back(k, T / K);
  }
  MeasurementSet clean = generate_scenario(spec, states, sched, testing::random_loads(rng, n), seed);
  MeasurementSet ms = rel > 0 ? add_noise(clean, NoiseLevels::uniform(rel), seed + 1) : clean;
  EIVDataset data = testing::make_dataset(spec, ms, rel);
  return {spec, states, std::move(ms), std::move(data)};
}

Matrix random_simplex_rows(std::mt19937_64& rng, int T, int K) {
  return e_init(T, K, rng());
}

}  // namespace

TEST_CASE("random initialization") {
  const Matrix one = e_init(5, 1, 3);
  CHECK(one == Matrix::Ones(5, 1));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix Q = e_init(50, 4, seed);
    CHECK(Q.minCoeff() >= 0.0);
    CHECK((Q.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(e_init(50, 4, seed) == Q);
  }
  CHECK(e_init(50, 4, 1) != e_init(50, 4, 2));
  CHECK_THROWS_AS(e_init(0, 2, 1), InputError);
}

TEST_CASE("phi update") {
  CHECK(phi_update(Matrix::Constant(4, 2, 0.5)) == Vector::Constant(2, 0.5));
  CHECK(phi_update(Matrix::Identity(2, 2)) == Vector::Constant(2, 0.5));
  Matrix Q(3, 2);
  Q << 0.8, 0.2, 0.6, 0.4, 0.4, 0.6;
  const Vector phi = phi_update(Q);
  CHECK(phi(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(phi(1) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("E-step hand cases") {
  // Identity error model on a 1x1 sample; the density gap is set through beta.
  auto np = std::make_shared<const NoisePropagation>(1, 1, Vector(), std::vector<GradientEntry>{}, Vector::Constant(1, 1.0));
  EIVDataset data;
  data.samples.push_back({Matrix::Constant(1, 1, 1.0), Vector::Constant(1, 0.0), 0});
  data.noise.push_back(np);

  SUBCASE("equal densities") {
    const EStepResult es = e_step({Vector::Constant(1, 1.0), Vector::Constant(1, -1.0)}, Vector::Constant(2, 0.5), data);
    CHECK(es.Q(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(es.Q(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("zero prior mass") {
    Vector phi(2);
    phi << 1.0, 0.0;
    const EStepResult es = e_step({Vector::Constant(1, 3.0), Vector::Constant(1, 0.0)}, phi, data);
    CHECK(es.Q(0, 0) == 1.0);
    CHECK(es.Q(0, 1) == 0.0);
  }
  SUBCASE("log-density gap of log 3") {
    // quad = beta^2, so beta_2^2 - beta_1^2 = 2 log 3.
    const double b2 = std::sqrt(2.0 * std::log(3.0));
    const EStepResult es = e_step({Vector::Constant(1, 0.0), Vector::Constant(1, b2)}, Vector::Constant(2, 0.5), data);
    CHECK(es.Q(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(es.Q(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("impossible timestamp") {
    auto exact = std::make_shared<const NoisePropagation>(1, 1, Vector(), std::vector<GradientEntry>{}, Vector::Zero(1));
    EIVDataset bad = data;
    bad.noise[0] = exact;
    CHECK_THROWS_AS(e_step({Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)}, Vector::Constant(2, 0.5), bad), NumericalError);
  }
}

TEST_CASE("labels") {
  Matrix Q(3, 2);
  Q << 0.7, 0.3, 0.5, 0.5, 0.1, 0.9;
  CHECK(get_labels(Q) == std::vector<int>{0, 0, 1});
  Matrix P(3, 2);
  P.col(0) = Q.col(1);
  P.col(1) = Q.col(0);
  CHECK(get_labels(P) == std::vector<int>{1, 0, 0});
}

TEST_CASE("topology threshold") {
  StateParams s{(Vector(3) << 1.0, 1e-9, 0.8).finished(), Vector::Zero(3)};
  CHECK(extract_topology(s, 0.05) == std::vector<int>{0, 2});
  CHECK(extract_topology({Vector::Zero(3), Vector::Zero(3)}).empty());
  CHECK_THROWS_AS(extract_topology(s, 1.5), InputError);
}

TEST_CASE("M-step on one-hot true labels recovers each state") {
  const Mixture mx = tree_mixture(5, 5, 2, 60, 0.0);
  Matrix Q = Matrix::Zero(60, 2);
  for (int t = 0; t < 60; ++t) Q(t, (*mx.ms.truth_labels)[static_cast<std::size_t>(t)]) = 1.0;
  const MStepResult res = m_step(Q, mx.data);
  for (int k = 0; k < 2; ++k) {
    const Vector truth = mx.states[static_cast<std::size_t>(k)].stacked();
    CHECK((res.params[static_cast<std::size_t>(k)] - truth).norm() < 1e-8 * truth.norm());
  }
  CHECK(res.phi(0) == doctest::Approx(0.5));
}

TEST_CASE("M-step is equivariant under column permutation") {
  const Mixture mx = tree_mixture(6, 4, 3, 90, 0.01);
  std::mt19937_64 rng(6);
  const Matrix Q = random_simplex_rows(rng, 90, 3);
  const std::vector<int> perm{2, 0, 1};
  Matrix P(90, 3);
  for (int k = 0; k < 3; ++k) P.col(k) = Q.col(perm[static_cast<std::size_t>(k)]);
  for (MStepStart start : {MStepStart::warm, MStepStart::svd}) {
    const MStepResult a = m_step(Q, mx.data, {}, nullptr, start);
    const MStepResult b = m_step(P, mx.data, {}, nullptr, start);
    for (int k = 0; k < 3; ++k) {
      CHECK(b.params[static_cast<std::size_t>(k)] == a.params[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])]);
      CHECK(b.phi(k) == a.phi(perm[static_cast<std::size_t>(k)]));
    }
  }
}

TEST_CASE("M-step never loses against the previous parameters") {
  const Mixture mx = tree_mixture(7, 4, 2, 80, 0.01);
  std::mt19937_64 rng(7);
  const Matrix Q = random_simplex_rows(rng, 80, 2);
  const std::vector<Vector> previous{mx.states[0].stacked(), mx.states[1].stacked()};
  for (MStepStart start : {MStepStart::warm, MStepStart::svd}) {
    const MStepResult res = m_step(Q, mx.data, {}, &previous, start);
    for (int k = 0; k < 2; ++k) {
      std::vector<double> w(80);
      for (int t = 0; t < 80; ++t) w[static_cast<std::size_t>(t)] = Q(t, k);
      CHECK(weighted_objective(mx.data, w, res.params[static_cast<std::size_t>(k)]) <=
            weighted_objective(mx.data, w, previous[static_cast<std::size_t>(k)]));
    }
  }
}

TEST_CASE("starved clusters") {
  const Mixture mx = tree_mixture(8, 4, 1, 40, 0.01);
  Matrix Q = Matrix::Zero(40, 2);
  Q.col(0).setOnes();
  const MStepResult res = m_step(Q, mx.data);
  CHECK(res.starved == std::vector<int>{1});
  Matrix all = Matrix::Zero(40, 2);
  all(0, 0) = 1.0;
  all(1, 1) = 1.0;
  CHECK_THROWS_AS(m_step(all, mx.data), NumericalError);
}

TEST_CASE("K=1 reduces to a single weighted TLS solve") {
  const Mixture mx = tree_mixture(9, 5, 2, 100, 0.01);
  EMConfig cfg;
  cfg.K = 1;
  const EMSolution sol = run_em(mx.data, cfg);
  const TlsResult direct = weighted_tls(mx.data, std::vector<double>(mx.data.size(), 1.0));
  CHECK((sol.params[0].stacked() - direct.beta).cwiseAbs().maxCoeff() <= 1e-10 * direct.beta.norm());
}

TEST_CASE("two well-separated two-bus states") {
  const Mixture mx = two_bus_mixture(10, 400, 0.01);
  EMConfig cfg;
  cfg.K = 2;
  cfg.seed = 3;
  cfg.n_restarts = 3;
  const EMSolution sol = run_em(mx.data, cfg);
  const EvalReport rep = evaluate(sol.params, sol.edges, sol.labels, mx.states, *mx.ms.truth_labels);
  CHECK(rep.label_accuracy == 1.0);
  CHECK(rep.max_g_rel_err < 0.02);
  for (const StateScore& s : rep.states) CHECK(s.b_rel_err[0] < 0.02);
}

TEST_CASE("noise-free two-bus recovery is exact") {
  const Mixture mx = two_bus_mixture(11, 8, 0.0);
  EMConfig cfg;
  cfg.K = 2;
  cfg.n_restarts = 5;
  const EMSolution sol = run_em(mx.data, cfg);
  const EvalReport rep = evaluate(sol.params, sol.edges, sol.labels, mx.states, *mx.ms.truth_labels);
  CHECK(rep.label_accuracy == 1.0);
  CHECK(rep.max_g_rel_err < 1e-8);
  for (const StateScore& s : rep.states) CHECK(s.b_rel_err[0] < 1e-8);
}

TEST_CASE("solution invariants and monotone trace") {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const Mixture mx = tree_mixture(seed, 5, 2, 120, 0.01);
    EMConfig cfg;
    cfg.K = 2;
    cfg.seed = seed;
    cfg.max_iters = 15;
    const EMSolution sol = run_em(mx.data, cfg);
    CHECK(sol.Q.minCoeff() >= 0.0);
    CHECK((sol.Q.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(std::abs(sol.phi.sum() - 1.0) < 1e-9);
    CHECK(sol.phi.minCoeff() >= 0.0);
    CHECK(sol.labels == get_labels(sol.Q));
    CHECK(static_cast<int>(sol.trace.size()) == sol.iterations_used);
    for (std::size_t i = 1; i < sol.trace.size(); ++i) {
      const bool reseeded = std::find(sol.reinit_iterations.begin(), sol.reinit_iterations.end(), static_cast<int>(i + 1)) !=
                            sol.reinit_iterations.end();
      if (!reseeded) CHECK(sol.trace[i] >= sol.trace[i - 1] - 1e-8 * std::abs(sol.trace[i - 1]));
    }
  }
}

TEST_CASE("cluster relabeling leaves the log-likelihood unchanged") {
  const Mixture mx = tree_mixture(30, 5, 3, 90, 0.01);
  std::mt19937_64 rng(30);
  const MStepResult ms = m_step(random_simplex_rows(rng, 90, 3), mx.data);
  const EStepResult a = e_step(ms.params, ms.phi, mx.data);
  const std::vector<int> perm{1, 2, 0};
  std::vector<Vector> params;
  Vector phi(3);
  for (int k = 0; k < 3; ++k) {
    params.push_back(ms.params[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])]);
    phi(k) = ms.phi(perm[static_cast<std::size_t>(k)]);
  }
  const EStepResult b = e_step(params, phi, mx.data);
  CHECK(std::abs(a.log_likelihood - b.log_likelihood) <= 1e-12 * std::abs(a.log_likelihood));
  for (int k = 0; k < 3; ++k) CHECK((b.Q.col(k) - a.Q.col(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("fixed seed is deterministic") {
  const Mixture mx = tree_mixture(40, 4, 2, 60, 0.01);
  EMConfig cfg;
  cfg.K = 2;
  cfg.seed = 99;
  cfg.max_iters = 5;
  const EMSolution a = run_em(mx.data, cfg);
  const EMSolution b = run_em(mx.data, cfg);
  CHECK(a.trace == b.trace);
  CHECK(a.labels == b.labels);
  CHECK(a.params[1].g == b.params[1].g);
}

TEST_CASE("merge policy shrinks K") {
  // Three timestamps leave some of three clusters below the identifiable row count.
  const Mixture mx = two_bus_mixture(50, 3, 0.01);
  int merged = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EMConfig cfg;
    cfg.K = 3;
    cfg.seed = seed;
    cfg.empty_cluster_policy = EmptyClusterPolicy::merge;
    try {
      const EMSolution sol = run_em(mx.data, cfg);
      CHECK(sol.phi.size() == sol.K());
      CHECK(sol.Q.cols() == sol.K());
      if (sol.K() < 3) ++merged;
    } catch (const NumericalError&) {
      // every cluster starved at once
    }
  }
  CHECK(merged > 0);
}

TEST_CASE("configuration validation") {
  EMConfig cfg;
  cfg.K = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.rel_tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = {};
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}
