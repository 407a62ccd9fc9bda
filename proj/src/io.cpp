#include "gridid/io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include "gridid/error.hpp"

namespace gridid::io {
namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw InputError(where + ": unknown field \"" + key + "\"");
  }
}

const json& require(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw InputError(where + ": missing field \"" + key + "\"");
  return *it;
}

template <class T>
T get_as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw InputError(where + ": " + e.what());
  }
}

Vector vector_from(const json& j, const std::string& where) {
  const auto values = get_as<std::vector<double>>(j, where);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json to_array(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json noise_to_json(const NoiseLevels& n) {
  return json{{"v", n.v}, {"theta", n.theta}, {"p", n.p}, {"q", n.q}};
}

NoiseLevels noise_from_json(const json& j, const std::string& where) {
  if (j.is_number()) {
    const double rel = j.get<double>();
    if (!(rel >= 0.0)) throw InputError(where + ": noise must be non-negative");
    return NoiseLevels::uniform(rel);
  }
  check_keys(j, {"v", "theta", "p", "q"}, where);
  NoiseLevels n;
  n.v = get_as<double>(require(j, "v", where), where + ".v");
  n.theta = get_as<double>(require(j, "theta", where), where + ".theta");
  n.p = get_as<double>(require(j, "p", where), where + ".p");
  n.q = get_as<double>(require(j, "q", where), where + ".q");
  if (!(n.v >= 0.0 && n.theta >= 0.0 && n.p >= 0.0 && n.q >= 0.0)) {
    throw InputError(where + ": noise levels must be non-negative");
  }
  return n;
}

StateParams state_from_json(const json& j, const GridSpec& grid, const std::string& where) {
  check_keys(j, {"name", "g", "b", "lines"}, where);
  const int m = grid.n_branch();
  StateParams s{Vector::Zero(m), Vector::Zero(m)};
  if (j.contains("lines")) {
    if (j.contains("g") || j.contains("b")) throw InputError(where + ": give either lines or g/b arrays");
    const json& lines = j["lines"];
    if (!lines.is_array()) throw InputError(where + ".lines: expected an array");
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const std::string w = where + ".lines[" + std::to_string(i) + "]";
      const json& line = lines[i];
      check_keys(line, {"from", "to", "r", "x", "g", "b"}, w);
      const int a = get_as<int>(require(line, "from", w), w) - 1;
      const int c = get_as<int>(require(line, "to", w), w) - 1;
      const auto idx = grid.find_branch(a, c);
      if (!idx) throw InputError(w + ": buses " + std::to_string(a + 1) + "-" + std::to_string(c + 1) +
                                 " are not a candidate branch");
      if (s.g(*idx) != 0.0 || s.b(*idx) != 0.0) throw InputError(w + ": branch listed twice");
      if (line.contains("r") || line.contains("x")) {
        if (line.contains("g") || line.contains("b")) throw InputError(w + ": give either r/x or g/b");
        const double r = get_as<double>(require(line, "r", w), w);
        const double x = get_as<double>(require(line, "x", w), w);
        const double z2 = r * r + x * x;
        if (!(r >= 0.0) || !(z2 > 0.0)) throw InputError(w + ": impedance must be nonzero with r >= 0");
        s.g(*idx) = r / z2;
        s.b(*idx) = -x / z2;
      } else {
        s.g(*idx) = get_as<double>(require(line, "g", w), w);
        s.b(*idx) = get_as<double>(require(line, "b", w), w);
      }
    }
  } else {
    s.g = vector_from(require(j, "g", where), where + ".g");
    s.b = vector_from(require(j, "b", where), where + ".b");
  }
  try {
    check_state_params(grid, s);
  } catch (const InputError& e) {
    throw InputError(where + ": " + e.what());
  }
  return s;
}

json state_to_json(const StateParams& s) { return json{{"g", to_array(s.g)}, {"b", to_array(s.b)}}; }

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, std::size_t line, const std::string& column) {
  double x = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, x);
  if (res.ec != std::errc{} || res.ptr != last || field.empty()) {
    throw InputError("line " + std::to_string(line) + ": column " + column + ": cannot parse \"" +
                     std::string(field) + "\" as a number");
  }
  return x;
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

}  // namespace

GridSpec grid_from_json(const json& j) {
  const std::string where = "grid";
  check_keys(j, {"n_bus", "slack_bus", "branches"}, where);
  const int n = get_as<int>(require(j, "n_bus", where), "grid.n_bus");
  const int slack = j.contains("slack_bus") ? get_as<int>(j["slack_bus"], "grid.slack_bus") : 1;
  if (n < 2) throw InputError("grid.n_bus must be at least 2");
  if (slack < 1 || slack > n) throw InputError("grid.slack_bus out of range");
  const json& br = require(j, "branches", where);
  if (br.is_string()) {
    if (br.get<std::string>() != "complete") throw InputError("grid.branches: expected \"complete\" or a list");
    return GridSpec::complete(n, slack - 1);
  }
  const auto pairs = get_as<std::vector<std::array<int, 2>>>(br, "grid.branches");
  std::vector<Branch> branches;
  branches.reserve(pairs.size());
  for (const auto& pr : pairs) branches.push_back({pr[0] - 1, pr[1] - 1});
  return GridSpec(n, std::move(branches), slack - 1);
}

json grid_to_json(const GridSpec& spec) {
  json branches = json::array();
  for (const Branch& b : spec.branches()) branches.push_back({b.from + 1, b.to + 1});
  json j = json::object();
  j["n_bus"] = spec.n_bus();
  j["slack_bus"] = spec.slack_bus() + 1;
  j["branches"] = std::move(branches);
  return j;
}

GridSpec read_grid(const std::filesystem::path& path) { return grid_from_json(read_json(path)); }

ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  const std::string where = "scenario";
  check_keys(j, {"grid", "states", "schedule", "interleave", "load_profile", "noise", "seed"}, where);
  const json& g = require(j, "grid", where);
  GridSpec grid = g.is_string() ? read_grid(base_dir / g.get<std::string>()) : grid_from_json(g);
  ScenarioConfig cfg{grid, {}, {}, {}, {}, 0};

  const json& states = require(j, "states", where);
  if (!states.is_array() || states.empty()) throw InputError("scenario.states: expected a non-empty array");
  for (std::size_t k = 0; k < states.size(); ++k) {
    cfg.states.push_back(state_from_json(states[k], grid, "scenario.states[" + std::to_string(k) + "]"));
  }

  const auto runs = get_as<std::vector<std::array<int, 2>>>(require(j, "schedule", where), "scenario.schedule");
  for (const auto& r : runs) {
    if (r[0] < 1 || r[0] > static_cast<int>(cfg.states.size())) {
      throw InputError("scenario.schedule: state " + std::to_string(r[0]) + " does not exist");
    }
    if (r[1] < 0) throw InputError("scenario.schedule: negative count");
    cfg.schedule.runs.emplace_back(r[0] - 1, r[1]);
  }
  if (cfg.schedule.total() < 1) throw InputError("scenario.schedule: no timestamps");
  if (j.contains("interleave")) {
    const auto mode = get_as<std::string>(j["interleave"], "scenario.interleave");
    if (mode == "random") {
      cfg.schedule.interleave = Interleave::random;
    } else if (mode == "blocks") {
      cfg.schedule.interleave = Interleave::blocks;
    } else {
      throw InputError("scenario.interleave: expected \"random\" or \"blocks\"");
    }
  }

  const json& lp = require(j, "load_profile", where);
  check_keys(lp, {"p_base", "q_base", "cov"}, "scenario.load_profile");
  cfg.loads.p_base = vector_from(require(lp, "p_base", "scenario.load_profile"), "scenario.load_profile.p_base");
  cfg.loads.q_base = vector_from(require(lp, "q_base", "scenario.load_profile"), "scenario.load_profile.q_base");
  if (lp.contains("cov")) cfg.loads.cov = get_as<double>(lp["cov"], "scenario.load_profile.cov");
  if (cfg.loads.p_base.size() != grid.n_bus() || cfg.loads.q_base.size() != grid.n_bus()) {
    throw InputError("scenario.load_profile: base vectors need one entry per bus");
  }

  if (j.contains("noise")) cfg.noise = noise_from_json(j["noise"], "scenario.noise");
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j["seed"], "scenario.seed");
  return cfg;
}

ScenarioConfig read_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_json(path), path.parent_path());
}

MeasurementSet simulate(const ScenarioConfig& cfg) {
  MeasurementSet clean = generate_scenario(cfg.grid, cfg.states, cfg.schedule, cfg.loads, cfg.seed);
  return add_noise(clean, cfg.noise, stream_seed(cfg.seed, 1));
}

void write_measurements(std::ostream& out, const MeasurementSet& ms) {
  const int n = ms.n_bus;
  const bool labels = ms.truth_labels.has_value();
  std::string line = "t";
  if (labels) line += ",state";
  for (const char* name : {"v", "theta", "p", "q"}) {
    for (int i = 1; i <= n; ++i) line += "," + std::string(name) + "_" + std::to_string(i);
  }
  out << line << '\n';
  for (std::size_t t = 0; t < ms.size(); ++t) {
    const OperatingPoint& op = ms.points[t];
    line = std::to_string(t + 1);
    if (labels) line += "," + std::to_string((*ms.truth_labels)[t] + 1);
    for (const Vector* v : {&op.v, &op.theta, &op.p, &op.q}) {
      for (int i = 0; i < n; ++i) line += "," + format_double((*v)(i));
    }
    out << line << '\n';
  }
}

void write_measurements(const std::filesystem::path& path, const MeasurementSet& ms) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_measurements(out, ms);
}

MeasurementSet read_measurements(std::istream& in) {
  std::string text;
  std::size_t line_no = 0;
  if (!std::getline(in, text)) throw InputError("measurement file is empty");
  ++line_no;
  const auto header = split(text);
  std::size_t col = 0;
  if (header.empty() || header[0] != "t") throw InputError("line 1: header must start with t");
  ++col;
  const bool has_state = header.size() > 1 && header[1] == "state";
  if (has_state) ++col;
  if ((header.size() - col) % 4 != 0 || header.size() == col) {
    throw InputError("line 1: expected 4n measurement columns after t/state");
  }
  const int n = static_cast<int>((header.size() - col) / 4);
  std::vector<std::string> names;
  for (const char* name : {"v", "theta", "p", "q"}) {
    for (int i = 1; i <= n; ++i) names.push_back(std::string(name) + "_" + std::to_string(i));
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (header[col + c] != names[c]) {
      throw InputError("line 1: column " + std::to_string(col + c + 1) + " should be " + names[c] +
                       ", found " + std::string(header[col + c]));
    }
  }

  MeasurementSet ms;
  ms.n_bus = n;
  std::vector<int> labels;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split(text);
    if (fields.size() != header.size()) {
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    parse_double(fields[0], line_no, "t");
    if (has_state) {
      const double z = parse_double(fields[1], line_no, "state");
      if (z < 1.0 || z != std::floor(z)) {
        throw InputError("line " + std::to_string(line_no) + ": state must be a positive integer");
      }
      labels.push_back(static_cast<int>(z) - 1);
    }
    OperatingPoint op{Vector(n), Vector(n), Vector(n), Vector(n)};
    Vector* parts[] = {&op.v, &op.theta, &op.p, &op.q};
    for (int c = 0; c < 4 * n; ++c) {
      const double x = parse_double(fields[col + static_cast<std::size_t>(c)], line_no,
                                    names[static_cast<std::size_t>(c)]);
      if (!std::isfinite(x)) {
        throw InputError("line " + std::to_string(line_no) + ": column " +
                         names[static_cast<std::size_t>(c)] + " is not finite");
      }
      (*parts[c / n])(c % n) = x;
    }
    ms.points.push_back(std::move(op));
  }
  if (ms.points.empty()) throw InputError("measurement file has no data rows");
  if (has_state) ms.truth_labels = std::move(labels);
  return ms;
}

MeasurementSet read_measurements(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_measurements(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

json truth_to_json(const MeasurementSet& ms, const GridSpec& grid) {
  if (!ms.truth_labels) throw InputError("measurement set carries no truth labels");
  json states = json::array();
  for (const StateParams& s : ms.truth_params) states.push_back(state_to_json(s));
  std::vector<int> labels(*ms.truth_labels);
  for (int& z : labels) ++z;
  json j = json::object();
  j["format"] = "gridid-truth";
  j["grid"] = grid_to_json(grid);
  j["seed"] = ms.seed;
  j["noise"] = noise_to_json(ms.noise_std);
  j["states"] = std::move(states);
  j["labels"] = std::move(labels);
  return j;
}

Truth truth_from_json(const json& j) {
  const std::string where = "truth";
  check_keys(j, {"format", "grid", "seed", "noise", "states", "labels"}, where);
  Truth t;
  const GridSpec grid = grid_from_json(require(j, "grid", where));
  const json& states = require(j, "states", where);
  if (!states.is_array() || states.empty()) throw InputError("truth.states: expected a non-empty array");
  for (std::size_t k = 0; k < states.size(); ++k) {
    t.states.push_back(state_from_json(states[k], grid, "truth.states[" + std::to_string(k) + "]"));
  }
  t.labels = get_as<std::vector<int>>(require(j, "labels", where), "truth.labels");
  for (int& z : t.labels) {
    if (z < 1 || z > static_cast<int>(t.states.size())) throw InputError("truth.labels: state out of range");
    --z;
  }
  if (j.contains("noise")) t.noise = noise_from_json(j["noise"], "truth.noise");
  if (j.contains("seed")) t.seed = get_as<std::uint64_t>(j["seed"], "truth.seed");
  return t;
}

Truth read_truth(const std::filesystem::path& path) { return truth_from_json(read_json(path)); }

json solution_to_json(const EMSolution& sol, const GridSpec& grid) {
  json j;
  j["format"] = "gridid-solution";
  j["K"] = sol.K();
  j["converged"] = sol.converged;
  j["iterations_used"] = sol.iterations_used;
  j["restart_used"] = sol.restart_used;
  j["objective"] = sol.objective();
  j["grid"] = grid_to_json(grid);
  j["phi"] = std::vector<double>(sol.phi.data(), sol.phi.data() + sol.phi.size());
  json clusters = json::array();
  for (int k = 0; k < sol.K(); ++k) {
    json c;
    const StateParams& s = sol.params[static_cast<std::size_t>(k)];
    c["g"] = std::vector<double>(s.g.data(), s.g.data() + s.g.size());
    c["b"] = std::vector<double>(s.b.data(), s.b.data() + s.b.size());
    json edges = json::array();
    for (int e : sol.edges[static_cast<std::size_t>(k)]) {
      const Branch& br = grid.branches()[static_cast<std::size_t>(e)];
      edges.push_back({br.from + 1, br.to + 1});
    }
    c["edges"] = std::move(edges);
    clusters.push_back(std::move(c));
  }
  j["clusters"] = std::move(clusters);
  std::vector<int> labels(sol.labels);
  for (int& z : labels) ++z;
  j["labels"] = std::move(labels);
  j["trace"] = sol.trace;
  j["reinit_iterations"] = sol.reinit_iterations;
  return j;
}

EMSolution solution_from_json(const json& j) {
  const std::string where = "solution";
  check_keys(j, {"format", "K", "converged", "iterations_used", "restart_used", "objective", "grid", "phi",
                 "clusters", "labels", "trace", "reinit_iterations"},
             where);
  const GridSpec grid = grid_from_json(require(j, "grid", where));
  EMSolution sol;
  const json& clusters = require(j, "clusters", where);
  if (!clusters.is_array() || clusters.empty()) throw InputError("solution.clusters: expected a non-empty array");
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    const std::string w = "solution.clusters[" + std::to_string(k) + "]";
    const json& c = clusters[k];
    check_keys(c, {"g", "b", "edges"}, w);
    StateParams s{vector_from(require(c, "g", w), w + ".g"), vector_from(require(c, "b", w), w + ".b")};
    check_state_params(grid, s);
    std::vector<int> edges;
    for (const auto& pr : get_as<std::vector<std::array<int, 2>>>(require(c, "edges", w), w + ".edges")) {
      const auto idx = grid.find_branch(pr[0] - 1, pr[1] - 1);
      if (!idx) throw InputError(w + ".edges: not a candidate branch");
      edges.push_back(*idx);
    }
    sol.params.push_back(std::move(s));
    sol.edges.push_back(std::move(edges));
  }
  sol.phi = vector_from(require(j, "phi", where), "solution.phi");
  if (sol.phi.size() != sol.K()) throw InputError("solution.phi: one entry per cluster expected");
  sol.labels = get_as<std::vector<int>>(require(j, "labels", where), "solution.labels");
  for (int& z : sol.labels) {
    if (z < 1 || z > sol.K()) throw InputError("solution.labels: cluster out of range");
    --z;
  }
  if (j.contains("trace")) sol.trace = get_as<std::vector<double>>(j["trace"], "solution.trace");
  if (j.contains("reinit_iterations")) {
    sol.reinit_iterations = get_as<std::vector<int>>(j["reinit_iterations"], "solution.reinit_iterations");
  }
  if (j.contains("converged")) sol.converged = get_as<bool>(j["converged"], "solution.converged");
  if (j.contains("iterations_used")) sol.iterations_used = get_as<int>(j["iterations_used"], "solution.iterations_used");
  if (j.contains("restart_used")) sol.restart_used = get_as<int>(j["restart_used"], "solution.restart_used");
  return sol;
}

EMSolution read_solution(const std::filesystem::path& path) { return solution_from_json(read_json(path)); }

json report_to_json(const EvalReport& report, const GridSpec& grid) {
  json j;
  j["format"] = "gridid-report";
  j["note"] =
      "clusters are paired with truth states by minimum total parameter MSE; when there are more clusters "
      "than states, unpaired clusters are scored against their closest state";
  j["label_accuracy"] = report.label_accuracy;
  j["pooled_mse"] = report.pooled_mse;
  j["max_g_rel_err"] = report.max_g_rel_err;
  j["all_topologies_exact"] = report.all_topologies_exact;
  json match = json::array();
  for (std::size_t k = 0; k < report.state_match.match.size(); ++k) {
    match.push_back({{"cluster", k + 1},
                     {"state", report.state_match.match[k] + 1},
                     {"paired", static_cast<bool>(report.state_match.paired[k])}});
  }
  j["state_match"] = std::move(match);
  json states = json::array();
  for (std::size_t s = 0; s < report.states.size(); ++s) {
    const StateScore& sc = report.states[s];
    json st;
    st["state"] = s + 1;
    st["cluster"] = sc.cluster < 0 ? json(nullptr) : json(sc.cluster + 1);
    st["mse"] = sc.mse;
    st["topology_f1"] = sc.topology_f1;
    st["topology_exact"] = sc.topology_exact;
    json edges = json::array();
    for (std::size_t e = 0; e < sc.edges.size(); ++e) {
      const Branch& br = grid.branches()[static_cast<std::size_t>(sc.edges[e])];
      json row;
      row["from"] = br.from + 1;
      row["to"] = br.to + 1;
      if (e < sc.g_rel_err.size()) {
        row["g_rel_err"] = sc.g_rel_err[e];
        row["b_rel_err"] = sc.b_rel_err[e];
      }
      edges.push_back(std::move(row));
    }
    st["edges"] = std::move(edges);
    states.push_back(std::move(st));
  }
  j["states"] = std::move(states);
  return j;
}

json read_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace gridid::io
