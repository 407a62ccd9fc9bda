#include "gridid/em_engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "gridid/error.hpp"
#include "gridid/likelihood.hpp"
#include "gridid/powerflow.hpp"

namespace gridid {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Responsibilities below this are left out of the per-cluster regression.
constexpr double kWeightPrune = 1e-12;
constexpr int kMaxReinitAttempts = 20;

// Sum of exp over a row, accumulated in sorted order so the result does not
// depend on cluster numbering.
double log_sum_exp(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end(), std::greater<>());
  const double top = terms.front();
  if (top == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double a : terms) sum += std::exp(a - top);
  return top + std::log(sum);
}

double effective_rows(const Matrix& Q, int k, const EIVDataset& data) {
  double rows = 0.0;
  for (Eigen::Index t = 0; t < Q.rows(); ++t) {
    rows += Q(t, k) * static_cast<double>(data.samples[static_cast<std::size_t>(t)].X.rows());
  }
  return rows;
}

void reseed_column(Matrix& Q, int k, std::mt19937_64& rng) {
  const auto K = Q.cols();
  const Matrix fresh = e_init(static_cast<int>(Q.rows()), static_cast<int>(K), rng());
  for (Eigen::Index t = 0; t < Q.rows(); ++t) {
    Q(t, k) = fresh(t, k);
    const double sum = Q.row(t).sum();
    Q.row(t) /= sum;
  }
}

void drop_column(Matrix& Q, int k) {
  Matrix reduced(Q.rows(), Q.cols() - 1);
  reduced.leftCols(k) = Q.leftCols(k);
  reduced.rightCols(Q.cols() - 1 - k) = Q.rightCols(Q.cols() - 1 - k);
  for (Eigen::Index t = 0; t < reduced.rows(); ++t) {
    const double sum = reduced.row(t).sum();
    if (sum > 0.0) {
      reduced.row(t) /= sum;
    } else {
      reduced.row(t).setConstant(1.0 / static_cast<double>(reduced.cols()));
    }
  }
  Q = std::move(reduced);
}

struct RunOutcome {
  EMSolution solution;
  double final_ll = kNegInf;
};

RunOutcome run_once(const EIVDataset& data, const EMConfig& config, int restart,
                    std::uint64_t seed, const IterationObserver& observer) {
  const int T = static_cast<int>(data.size());
  int K = config.K;
  Matrix Q = e_init(T, K, seed);
  std::mt19937_64 reinit_rng(stream_seed(seed, 0x7e1417ULL));
  std::vector<Vector> params;
  Vector phi;
  EMSolution sol;
  double prev_ll = kNegInf;

  for (int it = 1; it <= config.max_iters; ++it) {
    bool reinitialized = false;
    MStepResult ms;
    for (int attempt = 0;; ++attempt) {
      try {
        ms = m_step(Q, data, config.tls, params.empty() ? nullptr : &params, config.m_step_start);
      } catch (const NumericalError& e) {
        throw NumericalError("EM iteration " + std::to_string(it) + ": " + e.what());
      }
      if (ms.starved.empty()) break;
      if (attempt >= kMaxReinitAttempts) {
        throw NumericalError("EM iteration " + std::to_string(it) +
                             ": clusters stay starved after repeated reinitialization");
      }
      reinitialized = true;
      if (config.empty_cluster_policy == EmptyClusterPolicy::reinit) {
        for (int k : ms.starved) reseed_column(Q, k, reinit_rng);
      } else {
        for (auto k = ms.starved.rbegin(); k != ms.starved.rend(); ++k) {
          drop_column(Q, *k);
          if (!params.empty()) params.erase(params.begin() + *k);
          --K;
        }
        if (K == 0) throw NumericalError("EM iteration " + std::to_string(it) + ": all clusters merged away");
      }
    }
    params = std::move(ms.params);
    phi = std::move(ms.phi);

    EStepResult es;
    try {
      es = e_step(params, phi, data);
    } catch (const NumericalError& e) {
      throw NumericalError("EM iteration " + std::to_string(it) + ": " + e.what());
    }
    Q = std::move(es.Q);
    sol.trace.push_back(es.log_likelihood);
    if (reinitialized) sol.reinit_iterations.push_back(it);
    sol.iterations_used = it;
    if (observer) {
      observer({restart, it, es.log_likelihood, reinitialized, &Q, &params, &phi});
    }
    if (it > 1 && es.log_likelihood - prev_ll < config.rel_tol * std::abs(prev_ll)) {
      // Stalling while a cluster is still being reseeded ends the run unconverged.
      sol.converged = !reinitialized;
      break;
    }
    prev_ll = es.log_likelihood;
  }

  sol.labels = get_labels(Q);
  sol.params.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    std::vector<double> hard(static_cast<std::size_t>(T), 0.0);
    double rows = 0.0;
    for (int t = 0; t < T; ++t) {
      if (sol.labels[static_cast<std::size_t>(t)] == k) {
        hard[static_cast<std::size_t>(t)] = 1.0;
        rows += static_cast<double>(data.samples[static_cast<std::size_t>(t)].X.rows());
      }
    }
    Vector beta = params[static_cast<std::size_t>(k)];
    if (rows >= static_cast<double>(data.n_params() + 1)) {
      try {
        TlsResult refit = weighted_tls(data, hard, config.tls);
        if (std::isfinite(refit.objective)) beta = std::move(refit.beta);
      } catch (const NumericalError&) {
        // Keep the soft estimate when the hard subset is unidentifiable.
      }
    }
    sol.params.push_back(StateParams::from_stacked(beta));
    sol.edges.push_back(extract_topology(sol.params.back(), config.tau_rel));
  }
  sol.phi = phi;
  sol.Q = Q;
  sol.restart_used = restart;
  RunOutcome out{std::move(sol), kNegInf};
  out.final_ll = out.solution.trace.empty() ? kNegInf : out.solution.trace.back();
  return out;
}

}  // namespace

void EMConfig::validate() const {
  if (K < 1) throw InputError("K must be at least 1");
  if (max_iters < 1) throw InputError("max_iters must be at least 1");
  if (!(rel_tol > 0.0)) throw InputError("rel_tol must be positive");
  if (n_restarts < 1) throw InputError("n_restarts must be at least 1");
  if (!(tau_rel > 0.0 && tau_rel < 1.0)) throw InputError("tau_rel must lie in (0, 1)");
}

double EMSolution::objective() const { return trace.empty() ? kNegInf : trace.back(); }

Matrix e_init(int T, int K, std::uint64_t seed) {
  if (T < 1 || K < 1) throw InputError("e_init needs T >= 1 and K >= 1");
  Matrix Q(T, K);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> cuts(static_cast<std::size_t>(K + 1));
  for (int t = 0; t < T; ++t) {
    cuts.front() = 0.0;
    cuts.back() = 1.0;
    for (int k = 1; k < K; ++k) cuts[static_cast<std::size_t>(k)] = uniform(rng);
    std::sort(cuts.begin() + 1, cuts.end() - 1);
    for (int k = 0; k < K; ++k) {
      Q(t, k) = cuts[static_cast<std::size_t>(k + 1)] - cuts[static_cast<std::size_t>(k)];
    }
  }
  return Q;
}

EStepResult e_step(const std::vector<Vector>& params, const Vector& phi, const EIVDataset& data) {
  const auto K = static_cast<Eigen::Index>(params.size());
  if (K == 0 || phi.size() != K) throw InputError("e_step needs one phi entry per cluster");
  if ((phi.array() < -1e-12).any() || std::abs(phi.sum() - 1.0) > 1e-9) {
    throw InputError("phi must lie on the probability simplex");
  }
  const auto T = static_cast<Eigen::Index>(data.size());
  EStepResult out{Matrix(T, K), Matrix(T, K), 0.0};
  std::vector<double> terms(static_cast<std::size_t>(K));
  for (Eigen::Index t = 0; t < T; ++t) {
    const RegressionSample& s = data.samples[static_cast<std::size_t>(t)];
    const NoisePropagation& noise = *data.noise[static_cast<std::size_t>(t)];
    for (Eigen::Index k = 0; k < K; ++k) {
      const double lp = conditional_log_density(s.X, s.y, params[static_cast<std::size_t>(k)], noise);
      out.log_density(t, k) = lp;
      terms[static_cast<std::size_t>(k)] = phi(k) > 0.0 ? std::log(phi(k)) + lp : kNegInf;
    }
    const double lse = log_sum_exp(terms);
    if (lse == kNegInf) {
      throw NumericalError("timestamp " + std::to_string(t + 1) +
                           " has zero probability under every cluster");
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      out.Q(t, k) = std::exp(terms[static_cast<std::size_t>(k)] - lse);
    }
    out.Q.row(t) /= out.Q.row(t).sum();
    out.log_likelihood += lse;
  }
  return out;
}

Vector phi_update(const Matrix& Q) {
  if (Q.rows() == 0) throw InputError("phi_update needs at least one timestamp");
  return Q.colwise().sum().transpose() / static_cast<double>(Q.rows());
}

MStepResult m_step(const Matrix& Q, const EIVDataset& data, const TlsOptions& tls,
                   const std::vector<Vector>* previous, MStepStart start) {
  if (static_cast<std::size_t>(Q.rows()) != data.size()) {
    throw InputError("responsibility rows must match sample count");
  }
  const auto K = static_cast<int>(Q.cols());
  if (previous && static_cast<int>(previous->size()) != K) previous = nullptr;
  MStepResult out;
  out.phi = phi_update(Q);
  out.params.resize(static_cast<std::size_t>(K));
  out.kept_previous.assign(static_cast<std::size_t>(K), false);
  const int p = data.n_params();
  const auto T = static_cast<std::size_t>(Q.rows());
  std::vector<double> weights(T);
  std::vector<double> pruned(T);
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (effective_rows(Q, k, data) < static_cast<double>(p + 1)) {
      out.starved.push_back(k);
      out.params[kk] = previous ? (*previous)[kk] : Vector::Zero(p);
      continue;
    }
    for (std::size_t t = 0; t < T; ++t) {
      weights[t] = std::clamp(Q(static_cast<Eigen::Index>(t), k), 0.0, 1.0);
    }
    Vector beta;
    try {
      if (start == MStepStart::warm) {
        beta = previous ? (*previous)[kk] : weighted_gls(data, weights);
        beta = refine_objective(data, weights, std::move(beta), tls.max_refine_steps, tls.refine_tol).first;
      } else {
        const double top = Q.col(k).maxCoeff();
        for (std::size_t t = 0; t < T; ++t) pruned[t] = weights[t] < kWeightPrune * top ? 0.0 : weights[t];
        beta = weighted_tls(data, pruned, tls).beta;
      }
    } catch (const NumericalError& e) {
      if (!previous) throw NumericalError("cluster " + std::to_string(k + 1) + ": " + e.what());
      beta = (*previous)[kk];
      out.kept_previous[kk] = true;
    }
    if (previous && !out.kept_previous[kk] && start == MStepStart::svd) {
      const Vector& old = (*previous)[kk];
      if (weighted_objective(data, weights, old) < weighted_objective(data, weights, beta)) {
        beta = old;
        out.kept_previous[kk] = true;
      }
    }
    out.params[kk] = std::move(beta);
  }
  if (static_cast<int>(out.starved.size()) == K) {
    throw NumericalError("every cluster has fewer than " + std::to_string(p + 1) +
                         " effective equation rows");
  }
  return out;
}

std::vector<int> get_labels(const Matrix& Q) {
  std::vector<int> z(static_cast<std::size_t>(Q.rows()));
  for (Eigen::Index t = 0; t < Q.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < Q.cols(); ++k) {
      if (Q(t, k) > Q(t, best)) best = k;
    }
    z[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return z;
}

std::vector<int> extract_topology(const StateParams& params, double tau_rel) {
  if (!(tau_rel > 0.0 && tau_rel < 1.0)) throw InputError("tau_rel must lie in (0, 1)");
  if (params.g.size() != params.b.size()) throw InputError("g and b lengths differ");
  const Vector mag = (params.g.array().square() + params.b.array().square()).sqrt();
  std::vector<int> edges;
  if (mag.size() == 0) return edges;
  const double top = mag.maxCoeff();
  if (!(top > 0.0)) return edges;
  for (Eigen::Index j = 0; j < mag.size(); ++j) {
    if (mag(j) >= tau_rel * top) edges.push_back(static_cast<int>(j));
  }
  return edges;
}

EMSolution run_em(const EIVDataset& data, const EMConfig& config, const IterationObserver& observer) {
  config.validate();
  if (data.size() == 0) throw InputError("no samples");
  if (data.noise.size() != data.size()) throw InputError("every sample needs a noise model");
  std::optional<RunOutcome> best;
  for (int r = 0; r < config.n_restarts; ++r) {
    const std::uint64_t seed = r == 0 ? config.seed : stream_seed(config.seed, static_cast<std::uint64_t>(r));
    RunOutcome run = run_once(data, config, r, seed, observer);
    if (!best || run.final_ll > best->final_ll) best = std::move(run);
  }
  return std::move(best->solution);
}

}  // namespace gridid
