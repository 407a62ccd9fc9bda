#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridid/em_engine.hpp"
#include "gridid/evaluation.hpp"
#include "gridid/grid_model.hpp"
#include "gridid/powerflow.hpp"

// File formats. All bus and state indices are 1-based on disk and 0-based
// in memory. See docs/formats.md.
namespace gridid::io {

using json = nlohmann::ordered_json;

GridSpec grid_from_json(const json& j);
json grid_to_json(const GridSpec& spec);
GridSpec read_grid(const std::filesystem::path& path);

/// Everything needed to synthesize a measurement set.
struct ScenarioConfig {
  GridSpec grid = GridSpec::complete(2);
  std::vector<StateParams> states;
  Schedule schedule;
  LoadProfileConfig loads;
  NoiseLevels noise;
  std::uint64_t seed = 0;
};

/// `base_dir` resolves a grid given as a relative path.
ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir = {});
ScenarioConfig read_scenario(const std::filesystem::path& path);

/// Noise-free generation followed by noise at the configured levels.
MeasurementSet simulate(const ScenarioConfig& cfg);

/// Header `t,state,v_1..v_n,theta_1..theta_n,p_1..p_n,q_1..q_n`; the state
/// column is written only when truth labels are present.
void write_measurements(std::ostream& out, const MeasurementSet& ms);
void write_measurements(const std::filesystem::path& path, const MeasurementSet& ms);
/// Throws InputError naming the offending line on malformed input.
MeasurementSet read_measurements(std::istream& in);
MeasurementSet read_measurements(const std::filesystem::path& path);

/// Labels, per-state parameters and generation metadata.
struct Truth {
  std::vector<int> labels;
  std::vector<StateParams> states;
  NoiseLevels noise;
  std::uint64_t seed = 0;
};

json truth_to_json(const MeasurementSet& ms, const GridSpec& grid);
Truth truth_from_json(const json& j);
Truth read_truth(const std::filesystem::path& path);

json solution_to_json(const EMSolution& sol, const GridSpec& grid);
/// Parameters, labels, phi and trace; Q is not stored.
EMSolution solution_from_json(const json& j);
EMSolution read_solution(const std::filesystem::path& path);

/// Report with 1-based state/cluster indices and branch endpoints.
json report_to_json(const EvalReport& report, const GridSpec& grid);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace gridid::io
