#include <optional>
#include <utility>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gridid/eiv_transform.hpp"
#include "gridid/em_engine.hpp"
#include "gridid/error.hpp"
#include "gridid/evaluation.hpp"
#include "gridid/glra_solver.hpp"
#include "gridid/io.hpp"
#include "gridid/sweep.hpp"

namespace py = pybind11;
using namespace gridid;

namespace {

// T x n matrix of one channel.
Matrix channel(const MeasurementSet& ms, Vector OperatingPoint::*field) {
  Matrix out(static_cast<Eigen::Index>(ms.size()), ms.n_bus);
  for (std::size_t t = 0; t < ms.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = (ms.points[t].*field).transpose();
  return out;
}

EIVDataset dataset(const GridSpec& grid, const MeasurementSet& ms, double noise) {
  const NoiseLevels rel = NoiseLevels::uniform(noise);
  return build_dataset(grid, ms, direct_variances(ms, rel));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Grid topology and line-parameter estimation from noisy phasor measurements";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](int n_bus, const std::vector<std::pair<int, int>>& branches, int slack_bus) {
             std::vector<Branch> br;
             for (const auto& [a, b] : branches) br.push_back({a, b});
             return GridSpec(n_bus, std::move(br), slack_bus);
           }),
           py::arg("n_bus"), py::arg("branches"), py::arg("slack_bus") = 0)
      .def_static("complete", &GridSpec::complete, py::arg("n_bus"), py::arg("slack_bus") = 0)
      .def_property_readonly("n_bus", &GridSpec::n_bus)
      .def_property_readonly("n_branch", &GridSpec::n_branch)
      .def_property_readonly("slack_bus", &GridSpec::slack_bus)
      .def_property_readonly("branches",
                             [](const GridSpec& s) {
                               std::vector<std::pair<int, int>> out;
                               for (const Branch& b : s.branches()) out.emplace_back(b.from, b.to);
                               return out;
                             })
      .def_property_readonly("incidence", [](const GridSpec& s) { return Eigen::MatrixXi(s.incidence()); })
      .def("find_branch", &GridSpec::find_branch);

  py::class_<StateParams>(m, "StateParams")
      .def(py::init([](Vector g, Vector b) { return StateParams{std::move(g), std::move(b)}; }), py::arg("g"), py::arg("b"))
      .def_readwrite("g", &StateParams::g)
      .def_readwrite("b", &StateParams::b)
      .def("stacked", &StateParams::stacked);

  m.def("assemble_admittance", [](const GridSpec& spec, const StateParams& p) {
    Admittance y = assemble_admittance(spec, p);
    return std::make_pair(std::move(y.G), std::move(y.B));
  });
  m.def("injections", [](const GridSpec& spec, const StateParams& p, const Vector& v, const Vector& theta) {
    Injections inj = injections(spec, p, v, theta);
    return std::make_pair(std::move(inj.p), std::move(inj.q));
  });
  m.def("build_regressors", &build_regressors, py::arg("spec"), py::arg("v"), py::arg("theta"));
  m.def("build_output", &build_output, py::arg("p"), py::arg("q"));

  py::class_<MeasurementSet>(m, "MeasurementSet")
      .def("__len__", &MeasurementSet::size)
      .def_readonly("n_bus", &MeasurementSet::n_bus)
      .def_property_readonly("v", [](const MeasurementSet& ms) { return channel(ms, &OperatingPoint::v); })
      .def_property_readonly("theta", [](const MeasurementSet& ms) { return channel(ms, &OperatingPoint::theta); })
      .def_property_readonly("p", [](const MeasurementSet& ms) { return channel(ms, &OperatingPoint::p); })
      .def_property_readonly("q", [](const MeasurementSet& ms) { return channel(ms, &OperatingPoint::q); })
      .def_readonly("truth_labels", &MeasurementSet::truth_labels)
      .def_readonly("truth_params", &MeasurementSet::truth_params);

  m.def("read_grid", &io::read_grid, py::arg("path"));
  m.def("read_measurements", py::overload_cast<const std::filesystem::path&>(&io::read_measurements), py::arg("path"));
  m.def(
      "read_scenario_measurements",
      [](const std::filesystem::path& path, std::optional<int> samples, std::optional<double> noise,
         std::optional<std::uint64_t> seed) {
        io::ScenarioConfig cfg = io::read_scenario(path);
        if (samples) cfg.schedule = rescale_schedule(cfg.schedule, static_cast<int>(cfg.states.size()), *samples);
        if (noise) cfg.noise = NoiseLevels::uniform(*noise);
        if (seed) cfg.seed = *seed;
        return std::make_pair(cfg.grid, io::simulate(cfg));
      },
      py::arg("path"), py::arg("samples") = py::none(), py::arg("noise") = py::none(), py::arg("seed") = py::none(),
      "Simulate a scenario file; returns (grid, measurements) with truth attached.");

  py::class_<EMConfig>(m, "EMConfig")
      .def(py::init([](int K, int max_iters, double rel_tol, std::uint64_t seed, int n_restarts, double tau_rel) {
             EMConfig c;
             c.K = K;
             c.max_iters = max_iters;
             c.rel_tol = rel_tol;
             c.seed = seed;
             c.n_restarts = n_restarts;
             c.tau_rel = tau_rel;
             c.validate();
             return c;
           }),
           py::arg("K") = 1, py::arg("max_iters") = 50, py::arg("rel_tol") = 1e-6, py::arg("seed") = 0,
           py::arg("n_restarts") = 1, py::arg("tau_rel") = 0.05)
      .def_readwrite("K", &EMConfig::K)
      .def_readwrite("max_iters", &EMConfig::max_iters)
      .def_readwrite("rel_tol", &EMConfig::rel_tol)
      .def_readwrite("seed", &EMConfig::seed)
      .def_readwrite("n_restarts", &EMConfig::n_restarts)
      .def_readwrite("tau_rel", &EMConfig::tau_rel);

  py::class_<EMSolution>(m, "EMSolution")
      .def_readonly("params", &EMSolution::params)
      .def_readonly("edges", &EMSolution::edges)
      .def_readonly("phi", &EMSolution::phi)
      .def_readonly("Q", &EMSolution::Q)
      .def_readonly("labels", &EMSolution::labels)
      .def_readonly("trace", &EMSolution::trace)
      .def_readonly("iterations_used", &EMSolution::iterations_used)
      .def_readonly("converged", &EMSolution::converged)
      .def_property_readonly("K", &EMSolution::K)
      .def_property_readonly("objective", &EMSolution::objective);

  m.def(
      "estimate",
      [](const GridSpec& grid, const MeasurementSet& ms, const EMConfig& config, double noise) {
        const EIVDataset data = dataset(grid, ms, noise);
        py::gil_scoped_release release;
        return run_em(data, config);
      },
      py::arg("grid"), py::arg("measurements"), py::arg("config"), py::arg("noise") = 0.01,
      "Run EM on measurements whose channels carry the given relative noise.");

  m.def(
      "weighted_tls",
      [](const GridSpec& grid, const MeasurementSet& ms, std::vector<double> weights, double noise) {
        const EIVDataset data = dataset(grid, ms, noise);
        TlsResult r = weighted_tls(data, weights);
        return std::make_pair(std::move(r.beta), r.objective);
      },
      py::arg("grid"), py::arg("measurements"), py::arg("weights"), py::arg("noise") = 0.01,
      "Returns ([g; b], objective).");

  m.def("e_init", &e_init, py::arg("T"), py::arg("K"), py::arg("seed"));
  m.def("phi_update", &phi_update, py::arg("Q"));
  m.def("get_labels", &get_labels, py::arg("Q"));
  m.def("extract_topology", &extract_topology, py::arg("params"), py::arg("tau_rel") = 0.05);

  m.def(
      "evaluate",
      [](const EMSolution& sol, const std::vector<StateParams>& truth, const std::vector<int>& truth_labels) {
        const EvalReport r = evaluate(sol.params, sol.edges, sol.labels, truth, truth_labels);
        py::dict out;
        out["match"] = r.state_match.match;
        out["label_accuracy"] = r.label_accuracy;
        out["pooled_mse"] = r.pooled_mse;
        out["max_g_rel_err"] = r.max_g_rel_err;
        out["all_topologies_exact"] = r.all_topologies_exact;
        return out;
      },
      py::arg("solution"), py::arg("truth_params"), py::arg("truth_labels"));
}
