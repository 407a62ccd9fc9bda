#include "gridid/sweep.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <ostream>

#include "gridid/error.hpp"
#include "gridid/evaluation.hpp"

namespace gridid {
namespace {

struct Point {
  int k_true = 0;
  int K = 0;
  int samples = 0;
  NoiseLevels noise;
};

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Prepared {
  MeasurementSet ms;
  EIVDataset data;
  std::vector<StateParams> truth;
};

Prepared prepare(const SweepConfig& cfg, const Point& pt) {
  io::ScenarioConfig sc = cfg.scenario;
  sc.states.resize(static_cast<std::size_t>(pt.k_true));
  sc.schedule = rescale_schedule(cfg.scenario.schedule, pt.k_true, pt.samples);
  sc.noise = pt.noise;
  Prepared p;
  p.ms = io::simulate(sc);
  p.data = build_dataset(sc.grid, p.ms, direct_variances(p.ms, pt.noise));
  p.truth = sc.states;
  return p;
}

void fill_scores(SweepRow& row, const EvalReport& rep) {
  row.label_accuracy = rep.label_accuracy;
  row.pooled_mse = rep.pooled_mse;
  row.max_g_rel_err = rep.max_g_rel_err;
  row.topology_exact = rep.all_topologies_exact;
}

SweepRow base_row(const SweepConfig& cfg, double value, const Point& pt) {
  SweepRow row;
  row.axis = axis_name(cfg.axis);
  row.value = value;
  row.method = pt.K == 1 && pt.k_true > 1 ? "baseline" : "mixture";
  row.k_true = pt.k_true;
  row.K = pt.K;
  row.samples = pt.samples;
  row.noise = pt.noise.v;
  return row;
}

std::vector<SweepRow> run_point(const SweepConfig& cfg, double value, const Point& pt) {
  const auto start = std::chrono::steady_clock::now();
  SweepRow row = base_row(cfg, value, pt);
  std::vector<SweepRow> rows;
  try {
    const Prepared p = prepare(cfg, pt);
    EMConfig em = cfg.em;
    em.K = pt.K;
    const auto& truth_labels = *p.ms.truth_labels;

    std::map<int, std::vector<SweepRow>> per_restart;
    IterationObserver observer;
    if (cfg.axis == SweepAxis::iterations) {
      observer = [&](const IterationSnapshot& snap) {
        std::vector<StateParams> params;
        std::vector<std::vector<int>> edges;
        for (const Vector& beta : *snap.params) {
          params.push_back(StateParams::from_stacked(beta));
          edges.push_back(extract_topology(params.back(), em.tau_rel));
        }
        SweepRow r = row;
        r.iteration = snap.iteration;
        r.log_likelihood = snap.log_likelihood;
        r.iterations_used = snap.iteration;
        fill_scores(r, evaluate(params, edges, get_labels(*snap.Q), p.truth, truth_labels));
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        per_restart[snap.restart].push_back(std::move(r));
      };
    }
    const EMSolution sol = run_em(p.data, em, observer);
    if (cfg.axis == SweepAxis::iterations) {
      rows = std::move(per_restart[sol.restart_used]);
      for (SweepRow& r : rows) r.converged = sol.converged;
    }
    row.iterations_used = sol.iterations_used;
    row.converged = sol.converged;
    row.log_likelihood = sol.objective();
    fill_scores(row, evaluate(sol.params, sol.edges, sol.labels, p.truth, truth_labels));
    if (!sol.converged) row.status = "not_converged";
  } catch (const std::exception& e) {
    row.status = std::string("error: ") + e.what();
  }
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // On the iterations axis the final row repeats the converged state after the refit.
  if (cfg.axis == SweepAxis::iterations) row.iteration = row.iterations_used + 1;
  rows.push_back(std::move(row));
  return rows;
}

}  // namespace

SweepAxis parse_axis(const std::string& name) {
  if (name == "states") return SweepAxis::states;
  if (name == "samples") return SweepAxis::samples;
  if (name == "iterations") return SweepAxis::iterations;
  if (name == "noise") return SweepAxis::noise;
  throw InputError("unknown sweep axis \"" + name + "\" (states, samples, iterations, noise)");
}

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::states: return "states";
    case SweepAxis::samples: return "samples";
    case SweepAxis::iterations: return "iterations";
    case SweepAxis::noise: return "noise";
  }
  return "unknown";
}

Schedule rescale_schedule(const Schedule& schedule, int k_true, int total) {
  if (total < 1) throw InputError("sample count must be positive");
  Schedule out;
  out.interleave = schedule.interleave;
  long kept = 0;
  for (const auto& [state, count] : schedule.runs) {
    if (state < k_true) kept += count;
  }
  if (kept == 0) throw InputError("schedule assigns no timestamps to the first " + std::to_string(k_true) + " states");
  long assigned = 0;
  long cumulative = 0;
  for (const auto& [state, count] : schedule.runs) {
    if (state >= k_true) continue;
    cumulative += count;
    // Cumulative rounding keeps the total exact.
    const long upto = static_cast<long>(std::llround(static_cast<double>(cumulative) * total / static_cast<double>(kept)));
    out.runs.emplace_back(state, static_cast<int>(upto - assigned));
    assigned = upto;
  }
  return out;
}

std::vector<SweepRow> run_sweep(const SweepConfig& config, const SweepProgress& progress) {
  if (config.grid.empty()) throw InputError("sweep grid is empty");
  config.em.validate();
  const int n_states = static_cast<int>(config.scenario.states.size());
  const int default_samples = config.samples > 0 ? config.samples : config.scenario.schedule.total();
  std::vector<SweepRow> rows;
  auto emit = [&](std::vector<SweepRow> batch) {
    for (SweepRow& r : batch) {
      if (progress) progress(r);
      rows.push_back(std::move(r));
    }
  };
  for (double value : config.grid) {
    Point pt{n_states, n_states, default_samples, config.scenario.noise};
    switch (config.axis) {
      case SweepAxis::states: {
        const int k = static_cast<int>(std::lround(value));
        if (k < 1 || k > n_states || std::abs(value - k) > 1e-9) {
          SweepRow bad = base_row(config, value, pt);
          bad.status = "error: state count must be an integer in [1, " + std::to_string(n_states) + "]";
          emit({bad});
          continue;
        }
        pt.k_true = k;
        if (k > 1) {
          Point baseline = pt;
          baseline.K = 1;
          emit(run_point(config, value, baseline));
        }
        pt.K = k;
        break;
      }
      case SweepAxis::samples:
        pt.samples = static_cast<int>(std::lround(value));
        break;
      case SweepAxis::noise:
      case SweepAxis::iterations:
        pt.noise = NoiseLevels::uniform(value);
        break;
    }
    emit(run_point(config, value, pt));
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "axis,value,method,k_true,K,samples,noise,iteration,label_accuracy,pooled_mse,max_g_rel_err,"
         "topology_exact,log_likelihood,iterations_used,converged,status,seconds\n";
  out.precision(10);
  for (const SweepRow& r : rows) {
    out << r.axis << ',' << r.value << ',' << r.method << ',' << r.k_true << ',' << r.K << ',' << r.samples << ','
        << r.noise << ',' << r.iteration << ',' << r.label_accuracy << ',' << r.pooled_mse << ','
        << r.max_g_rel_err << ',' << (r.topology_exact ? 1 : 0) << ',' << r.log_likelihood << ','
        << r.iterations_used << ',' << (r.converged ? 1 : 0) << ',' << csv_escape(r.status) << ',' << r.seconds
        << '\n';
  }
}

}  // namespace gridid
