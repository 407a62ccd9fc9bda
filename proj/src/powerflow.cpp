#include "gridid/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <queue>
#include <random>
#include <string>

#include "gridid/error.hpp"

namespace gridid {
namespace {

void check_voltage_inputs(const GridSpec& spec, const Vector& v, const Vector& theta) {
  if (v.size() != spec.n_bus() || theta.size() != spec.n_bus()) {
    throw InputError("voltage vectors must have one entry per bus");
  }
  if (!v.allFinite() || !theta.allFinite()) throw InputError("non-finite voltage input");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool connected_to_slack(const GridSpec& spec, const StateParams& params) {
  const int n = spec.n_bus();
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < spec.n_branch(); ++i) {
    if (params.g(i) == 0.0 && params.b(i) == 0.0) continue;
    const Branch& br = spec.branches()[static_cast<std::size_t>(i)];
    adj[static_cast<std::size_t>(br.from)].push_back(br.to);
    adj[static_cast<std::size_t>(br.to)].push_back(br.from);
  }
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::queue<int> frontier;
  frontier.push(spec.slack_bus());
  seen[static_cast<std::size_t>(spec.slack_bus())] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int bus = frontier.front();
    frontier.pop();
    for (int next : adj[static_cast<std::size_t>(bus)]) {
      if (!seen[static_cast<std::size_t>(next)]) {
        seen[static_cast<std::size_t>(next)] = true;
        ++reached;
        frontier.push(next);
      }
    }
  }
  return reached == n;
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

Injections injections(const GridSpec& spec, const StateParams& params, const Vector& v,
                      const Vector& theta) {
  check_voltage_inputs(spec, v, theta);
  check_state_params(spec, params);
  const int n = spec.n_bus();
  Injections out{Vector::Zero(n), Vector::Zero(n)};
  for (int j = 0; j < spec.n_branch(); ++j) {
    const Branch& br = spec.branches()[static_cast<std::size_t>(j)];
    const double vv = v(br.from) * v(br.to);
    const double delta = theta(br.from) - theta(br.to);
    const double c = std::cos(delta);
    const double s = std::sin(delta);
    const double g = params.g(j);
    const double b = params.b(j);
    // s_ji = +1 at the from bus, -1 at the to bus; cos is even, sin odd.
    out.p(br.from) += g * (v(br.from) * v(br.from) - vv * c) - b * vv * s;
    out.p(br.to) += g * (v(br.to) * v(br.to) - vv * c) + b * vv * s;
    out.q(br.from) += b * (vv * c - v(br.from) * v(br.from)) - g * vv * s;
    out.q(br.to) += b * (vv * c - v(br.to) * v(br.to)) + g * vv * s;
  }
  return out;
}

Injections injections_admittance(const Admittance& y, const Vector& v, const Vector& theta) {
  const auto n = y.G.rows();
  if (v.size() != n || theta.size() != n) throw InputError("voltage vectors must match admittance");
  Injections out{Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double d = theta(i) - theta(k);
      const double vv = v(i) * v(k);
      out.p(i) += vv * (y.G(i, k) * std::cos(d) + y.B(i, k) * std::sin(d));
      out.q(i) += vv * (y.G(i, k) * std::sin(d) - y.B(i, k) * std::cos(d));
    }
  }
  return out;
}

Matrix powerflow_jacobian(const Admittance& y, const Vector& v, const Vector& theta) {
  using Complex = std::complex<double>;
  const auto n = y.G.rows();
  const Eigen::MatrixXcd Y = y.G.cast<Complex>() + Complex(0.0, 1.0) * y.B.cast<Complex>();
  Eigen::VectorXcd V(n);
  Eigen::VectorXcd Vnorm(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vnorm(i) = std::polar(1.0, theta(i));
    V(i) = v(i) * Vnorm(i);
  }
  const Eigen::VectorXcd I = Y * V;
  // S = V .* conj(Y V)
  const Eigen::MatrixXcd dS_dtheta =
      Complex(0.0, 1.0) * V.asDiagonal() *
      (Eigen::MatrixXcd(I.asDiagonal()) - Y * V.asDiagonal()).conjugate();
  const Eigen::MatrixXcd dS_dv = V.asDiagonal() * (Y * Vnorm.asDiagonal()).conjugate() +
                                 Eigen::MatrixXcd(I.conjugate().asDiagonal()) * Vnorm.asDiagonal();
  Matrix jac(2 * n, 2 * n);
  jac.topLeftCorner(n, n) = dS_dv.real();
  jac.topRightCorner(n, n) = dS_dtheta.real();
  jac.bottomLeftCorner(n, n) = dS_dv.imag();
  jac.bottomRightCorner(n, n) = dS_dtheta.imag();
  return jac;
}

OperatingPoint solve_powerflow(const GridSpec& spec, const StateParams& params,
                               const Vector& p_spec, const Vector& q_spec,
                               const PowerFlowOptions& options) {
  check_state_params(spec, params);
  const int n = spec.n_bus();
  if (p_spec.size() != n || q_spec.size() != n) {
    throw InputError("specified injections must have one entry per bus");
  }
  if (!connected_to_slack(spec, params)) {
    throw NumericalError("network is not connected to the slack bus under these parameters");
  }
  const int slack = spec.slack_bus();
  std::vector<int> pq;
  for (int i = 0; i < n; ++i) {
    if (i != slack) pq.push_back(i);
  }
  const auto npq = static_cast<Eigen::Index>(pq.size());

  const Admittance y = assemble_admittance(spec, params);
  Vector v = Vector::Ones(n);
  Vector theta = Vector::Zero(n);
  v(slack) = options.slack_voltage;

  for (int iter = 0; iter <= options.max_iters; ++iter) {
    const Injections inj = injections(spec, params, v, theta);
    Vector mismatch(2 * npq);
    for (Eigen::Index k = 0; k < npq; ++k) {
      mismatch(k) = inj.p(pq[static_cast<std::size_t>(k)]) - p_spec(pq[static_cast<std::size_t>(k)]);
      mismatch(npq + k) =
          inj.q(pq[static_cast<std::size_t>(k)]) - q_spec(pq[static_cast<std::size_t>(k)]);
    }
    if (!mismatch.allFinite()) break;
    if (npq == 0 || mismatch.lpNorm<Eigen::Infinity>() < options.tol) {
      OperatingPoint op{v, theta, inj.p, inj.q};
      return op;
    }
    if (iter == options.max_iters) break;

    const Matrix full = powerflow_jacobian(y, v, theta);
    Matrix jac(2 * npq, 2 * npq);
    for (Eigen::Index r = 0; r < npq; ++r) {
      for (Eigen::Index c = 0; c < npq; ++c) {
        const int br = pq[static_cast<std::size_t>(r)];
        const int bc = pq[static_cast<std::size_t>(c)];
        jac(r, c) = full(br, bc);                     // dp/dv
        jac(r, npq + c) = full(br, n + bc);           // dp/dtheta
        jac(npq + r, c) = full(n + br, bc);           // dq/dv
        jac(npq + r, npq + c) = full(n + br, n + bc); // dq/dtheta
      }
    }
    const Vector step = jac.partialPivLu().solve(-mismatch);
    if (!step.allFinite()) break;
    for (Eigen::Index k = 0; k < npq; ++k) {
      v(pq[static_cast<std::size_t>(k)]) += step(k);
      theta(pq[static_cast<std::size_t>(k)]) += step(npq + k);
    }
  }
  throw NumericalError("Newton power flow did not converge within " +
                       std::to_string(options.max_iters) + " iterations");
}

int Schedule::total() const {
  int sum = 0;
  for (const auto& [state, count] : runs) sum += count;
  return sum;
}

std::vector<int> expand_schedule(const Schedule& schedule, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& [state, count] : schedule.runs) {
    if (state < 0) throw InputError("schedule references a negative state index");
    if (count < 0) throw InputError("schedule run counts must be non-negative");
    labels.insert(labels.end(), static_cast<std::size_t>(count), state);
  }
  if (schedule.interleave == Interleave::random) {
    std::mt19937_64 rng(stream_seed(seed, 0xfeedULL));
    // Fisher-Yates with explicit index draws keeps the order independent of
    // the standard library's shuffle implementation.
    for (std::size_t i = labels.size(); i > 1; --i) {
      const std::size_t j = rng() % i;
      std::swap(labels[i - 1], labels[j]);
    }
  }
  return labels;
}

MeasurementSet generate_scenario(const GridSpec& spec, const std::vector<StateParams>& states,
                                 const Schedule& schedule, const LoadProfileConfig& loads,
                                 std::uint64_t seed) {
  if (states.empty()) throw InputError("scenario needs at least one system state");
  for (const StateParams& s : states) check_state_params(spec, s, true);
  const int n = spec.n_bus();
  if (loads.p_base.size() != n || loads.q_base.size() != n) {
    throw InputError("load profile base vectors must have one entry per bus");
  }
  if (loads.cov < 0.0) throw InputError("load coefficient of variation must be non-negative");

  MeasurementSet ms;
  ms.n_bus = n;
  ms.seed = seed;
  ms.truth_params = states;
  std::vector<int> labels = expand_schedule(schedule, seed);
  for (int label : labels) {
    if (label >= static_cast<int>(states.size())) {
      throw InputError("schedule references state " + std::to_string(label + 1) + " but only " +
                       std::to_string(states.size()) + " are defined");
    }
  }
  ms.points.resize(labels.size());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    std::mt19937_64 rng(stream_seed(seed, t));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector p_spec(n);
    Vector q_spec(n);
    for (int i = 0; i < n; ++i) p_spec(i) = loads.p_base(i) * (1.0 + loads.cov * normal(rng));
    for (int i = 0; i < n; ++i) q_spec(i) = loads.q_base(i) * (1.0 + loads.cov * normal(rng));
    try {
      ms.points[t] = solve_powerflow(spec, states[static_cast<std::size_t>(labels[t])], p_spec, q_spec);
    } catch (const NumericalError& e) {
      throw NumericalError("timestamp " + std::to_string(t + 1) + ": " + e.what());
    }
  }
  ms.truth_labels = std::move(labels);
  return ms;
}

MeasurementSet add_noise(const MeasurementSet& ms, const NoiseLevels& rel_std, std::uint64_t seed) {
  if (rel_std.v < 0.0 || rel_std.theta < 0.0 || rel_std.p < 0.0 || rel_std.q < 0.0) {
    throw InputError("relative noise levels must be non-negative");
  }
  MeasurementSet out = ms;
  out.noise_std = rel_std;
  out.seed = seed;
  if (rel_std.is_zero() || ms.points.empty()) return out;

  const int n = ms.n_bus;
  const std::size_t T = ms.points.size();
  // Channel order: v, theta, p, q; each channel scaled by its own series std.
  Vector scale(4 * n);
  const double rel[4] = {rel_std.v, rel_std.theta, rel_std.p, rel_std.q};
  std::vector<double> series(T);
  for (int ch = 0; ch < 4; ++ch) {
    for (int i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < T; ++t) {
        const OperatingPoint& op = ms.points[t];
        const Vector& vec = ch == 0 ? op.v : ch == 1 ? op.theta : ch == 2 ? op.p : op.q;
        series[t] = vec(i);
      }
      scale(ch * n + i) = rel[ch] * sample_std(series);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::mt19937_64 rng(stream_seed(seed ^ 0x5eed5eed5eedULL, t));
    std::normal_distribution<double> normal(0.0, 1.0);
    OperatingPoint& op = out.points[t];
    for (int ch = 0; ch < 4; ++ch) {
      Vector& vec = ch == 0 ? op.v : ch == 1 ? op.theta : ch == 2 ? op.p : op.q;
      for (int i = 0; i < n; ++i) {
        const double z = normal(rng);
        if (scale(ch * n + i) > 0.0) vec(i) += scale(ch * n + i) * z;
      }
    }
  }
  return out;
}

}  // namespace gridid
