#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "gridid/grid_model.hpp"

namespace gridid {

/// Bus voltages (magnitude, angle in radians) and power injections, per-unit.
struct OperatingPoint {
  Vector v;
  Vector theta;
  Vector p;
  Vector q;
};

struct Injections {
  Vector p;
  Vector q;
};

/// Injections evaluated branch by branch, linear in (g, b).
Injections injections(const GridSpec& spec, const StateParams& params, const Vector& v,
                      const Vector& theta);

/// Injections evaluated from the bus admittance matrix (polar power-flow form).
Injections injections_admittance(const Admittance& y, const Vector& v, const Vector& theta);

/// Jacobian d[p; q] / d[v; theta] over all buses (2n x 2n).
Matrix powerflow_jacobian(const Admittance& y, const Vector& v, const Vector& theta);

struct PowerFlowOptions {
  int max_iters = 50;
  double tol = 1e-12;
  double slack_voltage = 1.0;
};

/// Newton-Raphson from a flat start; every non-slack bus is PQ.
/// `p_spec`/`q_spec` have length n; entries at the slack bus are ignored.
/// Throws NumericalError on divergence or when the energized network is
/// not connected to the slack bus.
OperatingPoint solve_powerflow(const GridSpec& spec, const StateParams& params,
                               const Vector& p_spec, const Vector& q_spec,
                               const PowerFlowOptions& options = {});

/// Relative standard deviation per direct channel.
struct NoiseLevels {
  double v = 0.0;
  double theta = 0.0;
  double p = 0.0;
  double q = 0.0;

  static NoiseLevels uniform(double rel) { return {rel, rel, rel, rel}; }
  bool is_zero() const { return v == 0.0 && theta == 0.0 && p == 0.0 && q == 0.0; }
};

struct MeasurementSet {
  int n_bus = 0;
  std::vector<OperatingPoint> points;
  NoiseLevels noise_std;
  std::optional<std::vector<int>> truth_labels;  // zero-based state index per timestamp
  std::vector<StateParams> truth_params;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
};

/// Per-bus base load with independent Gaussian fluctuation. Values are
/// injections, so consumption is negative.
struct LoadProfileConfig {
  Vector p_base;
  Vector q_base;
  double cov = 0.2;
};

enum class Interleave { random, blocks };

/// Run-length encoded state schedule: (state index, count) pairs.
struct Schedule {
  std::vector<std::pair<int, int>> runs;
  Interleave interleave = Interleave::random;

  int total() const;
};

/// Expands the schedule to one state index per timestamp. In random mode the
/// expanded sequence is shuffled deterministically from `seed`.
std::vector<int> expand_schedule(const Schedule& schedule, std::uint64_t seed);

/// Noise-free measurements: one power-flow solution per timestamp under the
/// scheduled state's parameters.
MeasurementSet generate_scenario(const GridSpec& spec, const std::vector<StateParams>& states,
                                 const Schedule& schedule, const LoadProfileConfig& loads,
                                 std::uint64_t seed);

/// Adds zero-mean Gaussian noise whose standard deviation is `rel_std` times
/// the empirical standard deviation of each channel's series.
MeasurementSet add_noise(const MeasurementSet& ms, const NoiseLevels& rel_std, std::uint64_t seed);

/// Independent RNG stream seed for item `index` under `master`.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index);

}  // namespace gridid
