#include "gridid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gridid/error.hpp"

namespace gridid {
namespace {

constexpr int kMaxExhaustive = 9;

// Injective map rows -> cols minimizing the summed cost (rows <= cols).
std::vector<int> best_injection(const Matrix& cost) {
  const auto rows = static_cast<int>(cost.rows());
  const auto cols = static_cast<int>(cost.cols());
  std::vector<int> current(static_cast<std::size_t>(rows), -1);
  std::vector<int> best = current;
  std::vector<bool> used(static_cast<std::size_t>(cols), false);
  double best_total = std::numeric_limits<double>::infinity();
  auto search = [&](auto& self, int r, double total) -> void {
    if (total >= best_total) return;
    if (r == rows) {
      best_total = total;
      best = current;
      return;
    }
    for (int c = 0; c < cols; ++c) {
      if (used[static_cast<std::size_t>(c)]) continue;
      used[static_cast<std::size_t>(c)] = true;
      current[static_cast<std::size_t>(r)] = c;
      self(self, r + 1, total + cost(r, c));
      used[static_cast<std::size_t>(c)] = false;
    }
  };
  search(search, 0, 0.0);
  return best;
}

}  // namespace

double param_mse(const StateParams& a, const StateParams& b) {
  if (a.g.size() != b.g.size() || a.b.size() != b.b.size()) {
    throw InputError("parameter vectors have different lengths");
  }
  const Vector d = a.stacked() - b.stacked();
  return d.size() == 0 ? 0.0 : d.squaredNorm() / static_cast<double>(d.size());
}

StateMatch match_states(const std::vector<StateParams>& estimated, const std::vector<StateParams>& truth) {
  const auto K = static_cast<int>(estimated.size());
  const auto Kt = static_cast<int>(truth.size());
  if (K < 1 || Kt < 1) throw InputError("state matching needs at least one state on each side");
  if (std::max(K, Kt) > kMaxExhaustive) {
    throw InputError("state matching is exhaustive and limited to " + std::to_string(kMaxExhaustive) + " states");
  }
  Matrix cost(K, Kt);
  for (int k = 0; k < K; ++k) {
    for (int s = 0; s < Kt; ++s) {
      cost(k, s) = param_mse(estimated[static_cast<std::size_t>(k)], truth[static_cast<std::size_t>(s)]);
    }
  }
  StateMatch out{std::vector<int>(static_cast<std::size_t>(K), -1),
                 std::vector<bool>(static_cast<std::size_t>(K), false)};
  if (K <= Kt) {
    out.match = best_injection(cost);
    out.paired.assign(static_cast<std::size_t>(K), true);
  } else {
    const std::vector<int> by_state = best_injection(cost.transpose());
    for (int s = 0; s < Kt; ++s) {
      const auto k = static_cast<std::size_t>(by_state[static_cast<std::size_t>(s)]);
      out.match[k] = s;
      out.paired[k] = true;
    }
    for (int k = 0; k < K; ++k) {
      if (out.paired[static_cast<std::size_t>(k)]) continue;
      Eigen::Index s = 0;
      cost.row(k).minCoeff(&s);
      out.match[static_cast<std::size_t>(k)] = static_cast<int>(s);
    }
  }
  return out;
}

std::vector<int> true_edges(const StateParams& s) {
  std::vector<int> edges;
  for (Eigen::Index j = 0; j < s.g.size(); ++j) {
    if (s.g(j) != 0.0 || s.b(j) != 0.0) edges.push_back(static_cast<int>(j));
  }
  return edges;
}

EvalReport evaluate(const std::vector<StateParams>& estimated,
                    const std::vector<std::vector<int>>& estimated_edges, const std::vector<int>& labels,
                    const std::vector<StateParams>& truth, const std::vector<int>& truth_labels) {
  if (estimated_edges.size() != estimated.size()) throw InputError("one edge set per cluster expected");
  if (labels.size() != truth_labels.size()) {
    throw InputError("label count " + std::to_string(labels.size()) + " does not match truth count " +
                     std::to_string(truth_labels.size()));
  }
  EvalReport rep;
  rep.state_match = match_states(estimated, truth);
  const auto K = static_cast<int>(estimated.size());
  const auto Kt = static_cast<int>(truth.size());

  if (!labels.empty()) {
    std::size_t correct = 0;
    double mse_sum = 0.0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
      const int k = labels[t];
      const int z = truth_labels[t];
      if (k < 0 || k >= K || z < 0 || z >= Kt) throw InputError("label out of range at timestamp " + std::to_string(t + 1));
      if (rep.state_match.match[static_cast<std::size_t>(k)] == z) ++correct;
      mse_sum += param_mse(estimated[static_cast<std::size_t>(k)], truth[static_cast<std::size_t>(z)]);
    }
    rep.label_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    rep.pooled_mse = mse_sum / static_cast<double>(labels.size());
  }

  rep.states.resize(static_cast<std::size_t>(Kt));
  rep.all_topologies_exact = true;
  double mse_paired = 0.0;
  int n_paired = 0;
  for (int s = 0; s < Kt; ++s) {
    StateScore& sc = rep.states[static_cast<std::size_t>(s)];
    const StateParams& tru = truth[static_cast<std::size_t>(s)];
    sc.edges = true_edges(tru);
    for (int k = 0; k < K; ++k) {
      if (rep.state_match.paired[static_cast<std::size_t>(k)] && rep.state_match.match[static_cast<std::size_t>(k)] == s) {
        sc.cluster = k;
      }
    }
    if (sc.cluster < 0) {
      rep.all_topologies_exact = false;
      continue;
    }
    const StateParams& est = estimated[static_cast<std::size_t>(sc.cluster)];
    sc.mse = param_mse(est, tru);
    mse_paired += sc.mse;
    ++n_paired;
    for (int j : sc.edges) {
      sc.g_rel_err.push_back(std::abs(est.g(j) - tru.g(j)) / std::abs(tru.g(j)));
      sc.b_rel_err.push_back(std::abs(est.b(j) - tru.b(j)) / std::abs(tru.b(j)));
      rep.max_g_rel_err = std::max(rep.max_g_rel_err, sc.g_rel_err.back());
    }
    std::vector<int> found = estimated_edges[static_cast<std::size_t>(sc.cluster)];
    std::sort(found.begin(), found.end());
    std::vector<int> both;
    std::set_intersection(found.begin(), found.end(), sc.edges.begin(), sc.edges.end(), std::back_inserter(both));
    const double denom = static_cast<double>(found.size() + sc.edges.size());
    sc.topology_f1 = denom > 0.0 ? 2.0 * static_cast<double>(both.size()) / denom : 1.0;
    sc.topology_exact = found == sc.edges;
    rep.all_topologies_exact = rep.all_topologies_exact && sc.topology_exact;
  }
  if (labels.empty() && n_paired > 0) rep.pooled_mse = mse_paired / n_paired;
  return rep;
}

}  // namespace gridid
