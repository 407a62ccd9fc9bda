#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gridid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A candidate line between two buses. Bus indices are zero-based.
struct Branch {
  int from = 0;
  int to = 0;

  friend bool operator==(const Branch&, const Branch&) = default;
};

/// Branch-by-bus incidence S (+1 leaves, -1 enters) and from/to index matrix U.
struct Incidence {
  Eigen::MatrixXi S;
  Eigen::MatrixXi U;
};

/// Builds S and U with the orientation given in `branches`.
/// Throws InputError on self-loops, out-of-range buses or duplicate branches
/// (a branch and its reverse count as duplicates).
Incidence build_incidence(std::span<const Branch> branches, int n_bus);

/// Grid structure over the fixed candidate branch set shared by every
/// system state. Branches are normalized so that from < to.
class GridSpec {
 public:
  GridSpec(int n_bus, std::vector<Branch> branches, int slack_bus);

  /// Every bus pair is a candidate, ordered lexicographically.
  static GridSpec complete(int n_bus, int slack_bus = 0);

  int n_bus() const { return n_bus_; }
  int n_branch() const { return static_cast<int>(branches_.size()); }
  int slack_bus() const { return slack_bus_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const Eigen::MatrixXi& incidence() const { return incidence_.S; }
  const Eigen::MatrixXi& index() const { return incidence_.U; }

  /// Index of the candidate branch joining buses a and b, either orientation.
  std::optional<int> find_branch(int a, int b) const;

 private:
  int n_bus_;
  int slack_bus_;
  std::vector<Branch> branches_;
  Incidence incidence_;
};

/// Per-branch conductance g and susceptance b of one system state (per-unit).
struct StateParams {
  Vector g;
  Vector b;

  /// [g; b]
  Vector stacked() const;
  static StateParams from_stacked(const Vector& gb);
};

/// Dimension and finiteness check; with `physical` also requires g >= 0.
void check_state_params(const GridSpec& spec, const StateParams& params, bool physical = false);

struct Admittance {
  Matrix G;
  Matrix B;
};

/// Bus admittance Y = G + jB built from series branch parameters, no shunts.
Admittance assemble_admittance(const GridSpec& spec, const StateParams& params);

}  // namespace gridid
