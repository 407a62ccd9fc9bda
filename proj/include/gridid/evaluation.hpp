#pragma once

#include <vector>

#include "gridid/grid_model.hpp"

namespace gridid {

/// mean_j ([g;b]_a - [g;b]_b)_j^2
double param_mse(const StateParams& a, const StateParams& b);

/// match[k] = truth state paired with estimated cluster k.
/// When K <= K' the pairing is injective and minimizes the summed MSE over
/// all injective maps. When K > K' every truth state is paired with a
/// distinct cluster the same way and each leftover cluster is paired with
/// its individually closest state (paired[k] = false for those).
struct StateMatch {
  std::vector<int> match;
  std::vector<bool> paired;
};

/// Exhaustive search; throws InputError above 9 clusters or states.
StateMatch match_states(const std::vector<StateParams>& estimated, const std::vector<StateParams>& truth);

/// Branches with nonzero true admittance.
std::vector<int> true_edges(const StateParams& s);

struct StateScore {
  int cluster = -1;                 // paired cluster, -1 if none
  double mse = 0.0;
  std::vector<int> edges;           // candidate index of each true edge
  std::vector<double> g_rel_err;    // |g_hat - g| / |g| per true edge
  std::vector<double> b_rel_err;
  double topology_f1 = 0.0;
  bool topology_exact = false;
};

struct EvalReport {
  StateMatch state_match;
  double label_accuracy = 0.0;
  std::vector<StateScore> states;   // one per truth state
  /// Mean over timestamps of param_mse(cluster params of t, true params of t).
  double pooled_mse = 0.0;
  double max_g_rel_err = 0.0;       // over paired states and their true edges
  bool all_topologies_exact = false;
};

/// `estimated_edges[k]` is the extracted topology of cluster k.
/// `labels` and `truth_labels` may be empty, which skips label accuracy
/// and makes pooled_mse an unweighted mean over paired states.
EvalReport evaluate(const std::vector<StateParams>& estimated,
                    const std::vector<std::vector<int>>& estimated_edges, const std::vector<int>& labels,
                    const std::vector<StateParams>& truth, const std::vector<int>& truth_labels);

}  // namespace gridid
