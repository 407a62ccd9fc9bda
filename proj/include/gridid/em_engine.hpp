#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gridid/eiv_transform.hpp"
#include "gridid/glra_solver.hpp"

namespace gridid {

enum class EmptyClusterPolicy { reinit, merge };

/// Starting point of each per-cluster M-step descent.
/// warm: previous iteration's parameters (weighted GLS on the first step).
/// svd:  a fresh weighted_tls solve, kept only if it beats the previous.
enum class MStepStart { warm, svd };

struct EMConfig {
  int K = 1;
  int max_iters = 50;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  EmptyClusterPolicy empty_cluster_policy = EmptyClusterPolicy::reinit;
  int n_restarts = 1;
  double tau_rel = 0.05;
  MStepStart m_step_start = MStepStart::warm;
  TlsOptions tls;

  void validate() const;
};

/// State of the EM loop after the E-step of one iteration.
struct IterationSnapshot {
  int restart = 0;
  int iteration = 0;  // 1-based
  double log_likelihood = 0.0;
  bool reinitialized = false;
  const Matrix* Q = nullptr;
  const std::vector<Vector>* params = nullptr;
  const Vector* phi = nullptr;
};

using IterationObserver = std::function<void(const IterationSnapshot&)>;

struct EMSolution {
  std::vector<StateParams> params;
  std::vector<std::vector<int>> edges;  // candidate branch indices per cluster
  Vector phi;
  Matrix Q;                              // T x K responsibilities
  std::vector<int> labels;               // zero-based cluster per timestamp
  std::vector<double> trace;             // log-likelihood after each iteration
  std::vector<int> reinit_iterations;    // iterations where a starved cluster was reseeded
  int iterations_used = 0;
  bool converged = false;
  int restart_used = 0;

  int K() const { return static_cast<int>(params.size()); }
  double objective() const;
};

/// Random responsibilities: each row holds the K interval lengths cut from
/// [0, 1] by K-1 sorted uniform draws.
Matrix e_init(int T, int K, std::uint64_t seed);

struct EStepResult {
  Matrix Q;
  Matrix log_density;        // T x K conditional log-densities
  double log_likelihood = 0.0;
};

/// Posterior responsibilities Q_t(k) proportional to phi_k P(X_t, y_t | beta_k),
/// normalized in the log domain. Throws NumericalError naming the timestamp
/// when every cluster assigns it zero probability.
EStepResult e_step(const std::vector<Vector>& params, const Vector& phi, const EIVDataset& data);

/// phi_k = mean_t Q_t(k).
Vector phi_update(const Matrix& Q);

struct MStepResult {
  std::vector<Vector> params;
  Vector phi;
  std::vector<int> starved;  // clusters with fewer than 2m+1 effective rows
  std::vector<bool> kept_previous;
};

/// Closed-form phi update plus, per cluster, a descent on the
/// responsibility-weighted projection objective (see MStepStart). A cluster
/// never ends with a higher objective than its `previous` parameters, so
/// each M-step never decreases the expected complete-data log-likelihood.
/// Throws NumericalError when every cluster is starved.
MStepResult m_step(const Matrix& Q, const EIVDataset& data, const TlsOptions& tls = {},
                   const std::vector<Vector>* previous = nullptr,
                   MStepStart start = MStepStart::warm);

/// z_t = argmax_k Q_t(k), lowest index on ties.
std::vector<int> get_labels(const Matrix& Q);

/// Branches whose admittance magnitude is at least tau_rel times the largest.
std::vector<int> extract_topology(const StateParams& params, double tau_rel = 0.05);

/// E-init, then alternating M- and E-steps until the relative log-likelihood
/// improvement drops below rel_tol or max_iters is reached; then hard labels
/// and a per-label refit. A run that stalls in an iteration where a starved
/// cluster was reseeded stops with converged = false. With n_restarts > 1
/// the run with the highest final log-likelihood is kept.
EMSolution run_em(const EIVDataset& data, const EMConfig& config,
                  const IterationObserver& observer = {});

}  // namespace gridid
