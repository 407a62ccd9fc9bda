// gridid: simulate measurements, estimate per-state line parameters and
// topology, score estimates, and run parameter sweeps.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gridid/em_engine.hpp"
#include "gridid/error.hpp"
#include "gridid/evaluation.hpp"
#include "gridid/io.hpp"
#include "gridid/sweep.hpp"

namespace fs = std::filesystem;
using namespace gridid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;
constexpr int kExitNotConverged = 3;

struct EmFlags {
  int k = 1;
  std::uint64_t seed = 0;
  int max_iters = 50;
  double tol = 1e-6;
  double tau_rel = 0.05;
  int restarts = 1;
  std::string policy = "reinit";
  std::string start = "warm";

  void attach(CLI::App* app, bool with_k) {
    if (with_k) app->add_option("--k", k, "Number of system states to fit")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Seed for EM initialization");
    app->add_option("--max-iters", max_iters, "EM iteration cap")->check(CLI::PositiveNumber);
    app->add_option("--tol", tol, "Relative log-likelihood improvement that stops EM")->check(CLI::PositiveNumber);
    app->add_option("--tau-rel", tau_rel, "Edge threshold relative to the largest branch admittance")
        ->check(CLI::Range(0.0, 1.0));
    app->add_option("--restarts", restarts, "Independent EM runs; the best log-likelihood is kept")
        ->check(CLI::PositiveNumber);
    app->add_option("--empty-cluster", policy, "Starved cluster handling")
        ->check(CLI::IsMember({"reinit", "merge"}));
    app->add_option("--m-step-start", start, "M-step starting point")->check(CLI::IsMember({"warm", "svd"}));
  }

  EMConfig config() const {
    EMConfig c;
    c.K = k;
    c.seed = seed;
    c.max_iters = max_iters;
    c.rel_tol = tol;
    c.tau_rel = tau_rel;
    c.n_restarts = restarts;
    c.empty_cluster_policy = policy == "merge" ? EmptyClusterPolicy::merge : EmptyClusterPolicy::reinit;
    c.m_step_start = start == "svd" ? MStepStart::svd : MStepStart::warm;
    return c;
  }
};

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  const auto colon = std::count(text.begin(), text.end(), ':');
  if (colon == 2) {
    double lo = 0.0, hi = 0.0, step = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> lo >> c1 >> hi >> c2 >> step) || !(step > 0.0) || hi < lo) {
      throw InputError("grid range must be lo:hi:step with step > 0");
    }
    for (int i = 0;; ++i) {
      const double v = lo + i * step;
      if (v > hi + 1e-9 * step) break;
      grid.push_back(v);
    }
    return grid;
  }
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("cannot parse grid value \"" + item + "\"");
    }
  }
  if (grid.empty()) throw InputError("grid is empty");
  return grid;
}

fs::path default_truth_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".truth.json");
  return p;
}

int cmd_simulate(const fs::path& scenario, const fs::path& out, fs::path truth, int samples,
                 const double* noise, const std::uint64_t* seed) {
  io::ScenarioConfig cfg = io::read_scenario(scenario);
  if (samples > 0) cfg.schedule = rescale_schedule(cfg.schedule, static_cast<int>(cfg.states.size()), samples);
  if (noise) cfg.noise = NoiseLevels::uniform(*noise);
  if (seed) cfg.seed = *seed;
  const MeasurementSet ms = io::simulate(cfg);
  io::write_measurements(out, ms);
  if (truth.empty()) truth = default_truth_path(out);
  io::write_json(truth, io::truth_to_json(ms, cfg.grid));
  std::cerr << "wrote " << ms.size() << " timestamps to " << out.string() << ", truth to " << truth.string() << "\n";
  return kExitOk;
}

int cmd_estimate(const fs::path& measurements, const fs::path& grid_path, double noise, const EmFlags& flags,
                 const fs::path& out) {
  const GridSpec grid = io::read_grid(grid_path);
  const MeasurementSet ms = io::read_measurements(measurements);
  if (ms.n_bus != grid.n_bus()) {
    throw InputError("measurements have " + std::to_string(ms.n_bus) + " buses, grid has " +
                     std::to_string(grid.n_bus()));
  }
  const EMConfig config = flags.config();
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const EIVDataset data = build_dataset(grid, ms, direct_variances(ms, NoiseLevels::uniform(noise)));
  const EMSolution sol = run_em(data, config, [](const IterationSnapshot& s) {
    std::cerr << "restart " << s.restart + 1 << " iteration " << s.iteration << " log-likelihood "
              << s.log_likelihood << (s.reinitialized ? " (reinitialized)" : "") << "\n";
  });
  io::write_json(out, io::solution_to_json(sol, grid));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "K=" << sol.K() << " iterations=" << sol.iterations_used << " converged=" << sol.converged
            << " log-likelihood=" << sol.objective() << " (" << secs << " s)\n";
  for (int k = 0; k < sol.K(); ++k) {
    std::cerr << "  cluster " << k + 1 << ": phi=" << sol.phi(k) << " edges=";
    for (int e : sol.edges[static_cast<std::size_t>(k)]) {
      const Branch& b = grid.branches()[static_cast<std::size_t>(e)];
      std::cerr << ' ' << b.from + 1 << '-' << b.to + 1;
    }
    std::cerr << "\n";
  }
  return sol.converged ? kExitOk : kExitNotConverged;
}

int cmd_evaluate(const fs::path& solution, const fs::path& truth_path, const fs::path& out) {
  const io::json sj = io::read_json(solution);
  const EMSolution sol = io::solution_from_json(sj);
  const GridSpec grid = io::grid_from_json(sj.at("grid"));
  const io::Truth truth = io::read_truth(truth_path);
  if (truth.states.front().g.size() != grid.n_branch()) {
    throw InputError("solution and truth use different candidate branch sets");
  }
  const EvalReport rep = evaluate(sol.params, sol.edges, sol.labels, truth.states, truth.labels);
  const io::json j = io::report_to_json(rep, grid);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out, j);
  }
  std::cerr << "label accuracy " << rep.label_accuracy << ", pooled MSE " << rep.pooled_mse
            << ", max conductance relative error " << rep.max_g_rel_err << ", all topologies exact "
            << (rep.all_topologies_exact ? "yes" : "no") << "\n";
  return kExitOk;
}

int cmd_sweep(const fs::path& scenario, const std::string& axis, const std::string& grid, int samples,
              const double* noise, const EmFlags& flags, const fs::path& out) {
  SweepConfig cfg;
  cfg.axis = parse_axis(axis);
  cfg.grid = parse_grid(grid);
  cfg.scenario = io::read_scenario(scenario);
  if (noise) cfg.scenario.noise = NoiseLevels::uniform(*noise);
  cfg.samples = samples;
  cfg.em = flags.config();
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw InputError("cannot write " + out.string());
  }
  const auto rows = run_sweep(cfg, [](const SweepRow& r) {
    std::cerr << r.axis << "=" << r.value << " " << r.method << " K=" << r.K;
    if (r.iteration > 0) std::cerr << " iteration " << r.iteration;
    std::cerr << " accuracy " << r.label_accuracy << " mse " << r.pooled_mse << " " << r.status << "\n";
  });
  write_sweep_csv(out.empty() ? std::cout : file, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint line-parameter and topology estimation from measurements spanning several system states"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "Generate a measurement CSV and truth sidecar from a scenario");
  fs::path sim_scenario, sim_out, sim_truth;
  int sim_samples = 0;
  double sim_noise = 0.0;
  std::uint64_t sim_seed = 0;
  sim->add_option("--scenario", sim_scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "Measurement CSV to write")->required();
  sim->add_option("--truth", sim_truth, "Truth sidecar (default: <out>.truth.json)");
  sim->add_option("--samples", sim_samples, "Rescale the schedule to this many timestamps")->check(CLI::PositiveNumber);
  auto* sim_noise_opt = sim->add_option("--noise", sim_noise, "Relative noise on every channel")->check(CLI::NonNegativeNumber);
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Override the scenario seed");

  auto* est = app.add_subcommand("estimate", "Fit K system states to a measurement CSV");
  fs::path est_meas, est_grid, est_out;
  double est_noise = 0.01;
  EmFlags est_flags;
  est->add_option("--measurements", est_meas, "Measurement CSV")->required()->check(CLI::ExistingFile);
  est->add_option("--grid", est_grid, "Grid JSON with the candidate branch set")->required()->check(CLI::ExistingFile);
  est->add_option("--noise", est_noise, "Assumed relative noise of the direct measurements")->check(CLI::NonNegativeNumber);
  est->add_option("--out", est_out, "Solution JSON to write")->required();
  est_flags.attach(est, true);

  auto* ev = app.add_subcommand("evaluate", "Score a solution against a truth sidecar");
  fs::path ev_sol, ev_truth, ev_out;
  ev->add_option("--solution", ev_sol, "Solution JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth, "Truth sidecar JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "Report JSON (default: stdout)");

  auto* sw = app.add_subcommand("sweep", "Run an experiment grid and write a CSV table");
  fs::path sw_scenario, sw_out;
  std::string sw_axis, sw_grid;
  int sw_samples = 0;
  double sw_noise = 0.0;
  EmFlags sw_flags;
  sw->add_option("--scenario", sw_scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  sw->add_option("--axis", sw_axis, "states, samples, iterations or noise")->required();
  sw->add_option("--grid", sw_grid, "Comma list or lo:hi:step")->required();
  sw->add_option("--samples", sw_samples, "Timestamps per run for axes other than samples")->check(CLI::PositiveNumber);
  auto* sw_noise_opt = sw->add_option("--noise", sw_noise, "Noise for axes other than noise/iterations")
                           ->check(CLI::NonNegativeNumber);
  sw->add_option("--out", sw_out, "CSV table (default: stdout)");
  sw_flags.attach(sw, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*sim) {
      return cmd_simulate(sim_scenario, sim_out, sim_truth, sim_samples, *sim_noise_opt ? &sim_noise : nullptr,
                          *sim_seed_opt ? &sim_seed : nullptr);
    }
    if (*est) return cmd_estimate(est_meas, est_grid, est_noise, est_flags, est_out);
    if (*ev) return cmd_evaluate(ev_sol, ev_truth, ev_out);
    if (*sw) {
      return cmd_sweep(sw_scenario, sw_axis, sw_grid, sw_samples, *sw_noise_opt ? &sw_noise : nullptr, sw_flags,
                       sw_out);
    }
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
