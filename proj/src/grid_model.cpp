#include "gridid/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "gridid/error.hpp"

namespace gridid {

Incidence build_incidence(std::span<const Branch> branches, int n_bus) {
  if (n_bus < 1) throw InputError("grid must have at least one bus");
  const auto m = static_cast<Eigen::Index>(branches.size());
  Incidence inc{Eigen::MatrixXi::Zero(m, n_bus), Eigen::MatrixXi::Zero(m, 2)};
  std::set<std::pair<int, int>> seen;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Branch& br = branches[static_cast<std::size_t>(i)];
    if (br.from < 0 || br.from >= n_bus || br.to < 0 || br.to >= n_bus) {
      throw InputError("branch " + std::to_string(i) + " references a bus outside [0, " +
                       std::to_string(n_bus) + ")");
    }
    if (br.from == br.to) {
      throw InputError("branch " + std::to_string(i) + " is a self-loop at bus " +
                       std::to_string(br.from));
    }
    auto key = std::minmax(br.from, br.to);
    if (!seen.insert(key).second) {
      throw InputError("duplicate branch between buses " + std::to_string(key.first) + " and " +
                       std::to_string(key.second));
    }
    inc.S(i, br.from) = 1;
    inc.S(i, br.to) = -1;
    inc.U(i, 0) = br.from;
    inc.U(i, 1) = br.to;
  }
  return inc;
}

GridSpec::GridSpec(int n_bus, std::vector<Branch> branches, int slack_bus)
    : n_bus_(n_bus), slack_bus_(slack_bus), branches_(std::move(branches)) {
  if (slack_bus < 0 || slack_bus >= n_bus) throw InputError("slack bus out of range");
  for (Branch& br : branches_) {
    if (br.from > br.to) std::swap(br.from, br.to);
  }
  incidence_ = build_incidence(branches_, n_bus_);
}

GridSpec GridSpec::complete(int n_bus, int slack_bus) {
  std::vector<Branch> branches;
  for (int a = 0; a < n_bus; ++a) {
    for (int b = a + 1; b < n_bus; ++b) branches.push_back({a, b});
  }
  return GridSpec(n_bus, std::move(branches), slack_bus);
}

std::optional<int> GridSpec::find_branch(int a, int b) const {
  if (a > b) std::swap(a, b);
  for (int i = 0; i < n_branch(); ++i) {
    if (branches_[static_cast<std::size_t>(i)] == Branch{a, b}) return i;
  }
  return std::nullopt;
}

Vector StateParams::stacked() const {
  Vector gb(g.size() + b.size());
  gb << g, b;
  return gb;
}

StateParams StateParams::from_stacked(const Vector& gb) {
  if (gb.size() % 2 != 0) throw InputError("stacked parameter vector must have even length");
  const auto m = gb.size() / 2;
  return {gb.head(m), gb.tail(m)};
}

void check_state_params(const GridSpec& spec, const StateParams& params, bool physical) {
  if (params.g.size() != spec.n_branch() || params.b.size() != spec.n_branch()) {
    throw InputError("state parameters have length " + std::to_string(params.g.size()) + "/" +
                     std::to_string(params.b.size()) + ", grid has " +
                     std::to_string(spec.n_branch()) + " candidate branches");
  }
  if (!params.g.allFinite() || !params.b.allFinite()) {
    throw InputError("state parameters contain non-finite values");
  }
  if (physical && (params.g.array() < 0.0).any()) {
    throw InputError("branch conductance must be non-negative");
  }
}

Admittance assemble_admittance(const GridSpec& spec, const StateParams& params) {
  check_state_params(spec, params);
  const int n = spec.n_bus();
  Admittance y{Matrix::Zero(n, n), Matrix::Zero(n, n)};
  for (int i = 0; i < spec.n_branch(); ++i) {
    const Branch& br = spec.branches()[static_cast<std::size_t>(i)];
    const double g = params.g(i);
    const double b = params.b(i);
    y.G(br.from, br.to) -= g;
    y.G(br.to, br.from) -= g;
    y.G(br.from, br.from) += g;
    y.G(br.to, br.to) += g;
    y.B(br.from, br.to) -= b;
    y.B(br.to, br.from) -= b;
    y.B(br.from, br.from) += b;
    y.B(br.to, br.to) += b;
  }
  return y;
}

}  // namespace gridid
