#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gridid/eiv_transform.hpp"
#include "gridid/grid_model.hpp"
#include "gridid/powerflow.hpp"

namespace gridid::testing {

inline Vector uniform_vector(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector x(n);
  for (int i = 0; i < n; ++i) x(i) = u(rng);
  return x;
}

/// Random parameters on every candidate branch.
inline StateParams random_params(std::mt19937_64& rng, int m) {
  return {uniform_vector(rng, m, 0.5, 3.0), uniform_vector(rng, m, -8.0, -1.0)};
}

struct RandomPoint {
  Vector v;
  Vector theta;
};

/// v in [0.9, 1.1], angles within 0.1 rad of the slack so every |dtheta| <= 0.2.
inline RandomPoint random_point(std::mt19937_64& rng, const GridSpec& spec) {
  RandomPoint pt{uniform_vector(rng, spec.n_bus(), 0.9, 1.1), uniform_vector(rng, spec.n_bus(), -0.1, 0.1)};
  pt.theta(spec.slack_bus()) = 0.0;
  return pt;
}

/// Random spanning tree over n buses on the complete candidate set.
inline std::vector<int> random_tree(std::mt19937_64& rng, const GridSpec& spec) {
  std::vector<int> edges;
  for (int j = 1; j < spec.n_bus(); ++j) {
    std::uniform_int_distribution<int> pick(0, j - 1);
    edges.push_back(*spec.find_branch(pick(rng), j));
  }
  return edges;
}

/// Parameters that are nonzero only on `edges`.
inline StateParams tree_params(std::mt19937_64& rng, const GridSpec& spec, const std::vector<int>& edges) {
  StateParams s{Vector::Zero(spec.n_branch()), Vector::Zero(spec.n_branch())};
  std::uniform_real_distribution<double> r(0.01, 0.03);
  std::uniform_real_distribution<double> x(0.02, 0.04);
  for (int e : edges) {
    const double rr = r(rng);
    const double xx = x(rng);
    const double den = rr * rr + xx * xx;
    s.g(e) = rr / den;
    s.b(e) = -xx / den;
  }
  return s;
}

inline LoadProfileConfig random_loads(std::mt19937_64& rng, int n, double cov = 1.0) {
  LoadProfileConfig loads;
  loads.p_base = uniform_vector(rng, n, -0.15, -0.05);
  loads.q_base = uniform_vector(rng, n, -0.06, -0.02);
  loads.p_base(0) = 0.0;
  loads.q_base(0) = 0.0;
  loads.cov = cov;
  return loads;
}

/// Dataset with every channel at the same relative noise.
inline EIVDataset make_dataset(const GridSpec& spec, const MeasurementSet& ms, double rel) {
  const NoiseLevels noise = NoiseLevels::uniform(rel);
  return build_dataset(spec, ms, direct_variances(ms, noise));
}

}  // namespace gridid::testing
