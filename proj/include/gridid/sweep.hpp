#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gridid/em_engine.hpp"
#include "gridid/io.hpp"

namespace gridid {

enum class SweepAxis { states, samples, iterations, noise };

SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);

/// Grid semantics per axis:
///   states      number of true states (first k of the scenario); each point
///               yields a K=1 baseline row and a K=k row
///   samples     total timestamps T
///   noise       relative noise level
///   iterations  noise levels; one row per EM iteration
struct SweepConfig {
  SweepAxis axis = SweepAxis::samples;
  std::vector<double> grid;
  io::ScenarioConfig scenario;
  EMConfig em;            // K is overridden by the number of states in play
  int samples = 0;        // T for axes other than samples; 0 keeps the schedule total
};

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string method;     // "mixture" or "baseline"
  int k_true = 0;
  int K = 0;
  int samples = 0;
  double noise = 0.0;
  int iteration = 0;      // iterations axis only
  double label_accuracy = 0.0;
  double pooled_mse = 0.0;
  double max_g_rel_err = 0.0;
  bool topology_exact = false;
  double log_likelihood = 0.0;
  int iterations_used = 0;
  bool converged = false;
  std::string status = "ok";
  double seconds = 0.0;
};

/// Schedule rescaled to `total` timestamps, restricted to the first `k_true`
/// states, with run proportions kept.
Schedule rescale_schedule(const Schedule& schedule, int k_true, int total);

using SweepProgress = std::function<void(const SweepRow&)>;

/// Grid points run in order; a failing point yields a row whose status
/// holds the error and the sweep continues.
std::vector<SweepRow> run_sweep(const SweepConfig& config, const SweepProgress& progress = {});

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace gridid
