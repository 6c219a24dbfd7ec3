#include "scenario.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace scp::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "problem",
      "variant",
      "jacobian",
      "jacobian.step",
      "jacobian.reset",
      "jacobian.skip",
      "hessian",
      "hessian.eig_floor",
      "solver.tol",
      "solver.max_iter",
      "refresh_on_failure",
      "schedule",
      "schedule.start",
      "schedule.step",
      "schedule.count",
      "schedule.values",
      "schedule.path",
      "closed_loop.steps",
      "closed_loop.disturbance",
      "oracle",
      "fascp.eps",
      "fascp.max_iter",
      "xi",
      "start",
      "start.perturbation",
      "output",
      "seed",
      "cascade.n_tanks",
      "cascade.horizon",
      "cascade.dt",
      "cascade.substeps",
      "cascade.outflow_coeff",
      "cascade.surface",
      "cascade.state_weight",
      "cascade.control_weight",
      "cascade.u_lo",
      "cascade.u_hi",
      "cascade.w_lo",
      "cascade.w_hi",
      "cascade.terminal_radius_scale",
      "cascade.u_steady",
      "cascade.terminal_samples",
  };
  return keys;
}

class Reader {
 public:
  Reader(const KeyValues& kv, std::string prefix) : kv_(kv), prefix_(std::move(prefix)) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (!prefix_.empty()) {
      auto it = kv_.values.find(prefix_ + key);
      if (it != kv_.values.end()) return it->second;
    }
    auto it = kv_.values.find(key);
    if (it != kv_.values.end()) return it->second;
    return std::nullopt;
  }

  std::string str(const std::string& key, const std::string& def) const {
    return raw(key).value_or(def);
  }

  double num(const std::string& key, double def) const {
    const auto v = raw(key);
    return v ? parse_double(key, *v) : def;
  }

  int integer(const std::string& key, int def) const {
    const auto v = raw(key);
    if (!v) return def;
    int out = 0;
    const auto* b = v->data();
    const auto* e = b + v->size();
    const auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e) fail(key, "expected an integer, got '" + *v + "'");
    return out;
  }

  bool boolean(const std::string& key, bool def) const {
    const auto v = raw(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    fail(key, "expected a boolean, got '" + *v + "'");
  }

  Vec vec(const std::string& key, const Vec& def) const {
    const auto v = raw(key);
    return v ? parse_vec(key, *v) : def;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + prefix_ + key + "': " + what);
  }

  double parse_double(const std::string& key, const std::string& s) const {
    double out = 0.0;
    const auto* b = s.data();
    const auto* e = b + s.size();
    if (b != e && *b == '+') ++b;
    const auto r = std::from_chars(b, e, out);
    if (r.ec != std::errc() || r.ptr != e || s.empty())
      fail(key, "expected a number, got '" + s + "'");
    return out;
  }

  Vec parse_vec(const std::string& key, const std::string& s) const {
    const auto parts = split(s, ';');
    if (parts.empty()) fail(key, "empty vector");
    Vec v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i)
      v(static_cast<Eigen::Index>(i)) = parse_double(key, parts[i]);
    return v;
  }

  const KeyValues& kv() const { return kv_; }

 private:
  const KeyValues& kv_;
  std::string prefix_;
};

std::string resolve_path(const KeyValues& kv, const std::string& p) {
  const std::filesystem::path path(p);
  if (path.is_absolute() || kv.base_dir.empty()) return p;
  return (std::filesystem::path(kv.base_dir) / path).string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("write to '" + path + "' failed");
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
    if (kv.values.count(key))
      throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
    kv.values[key] = value;
    kv.lines[key] = no;
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  KeyValues kv = parse_key_values(read_file(path), path);
  kv.base_dir = std::filesystem::path(path).parent_path().string();
  return kv;
}

void check_known_keys(const KeyValues& kv) {
  for (const auto& [key, value] : kv.values)
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
}

ScenarioConfig scenario_from(const KeyValues& kv, const std::string& prefix) {
  const Reader r(kv, prefix);
  ScenarioConfig sc;
  sc.problem = r.str("problem", "tutorial");
  if (sc.problem != "tutorial" && sc.problem != "cascade")
    r.fail("problem", "expected tutorial or cascade");
  sc.seed = static_cast<std::uint32_t>(r.integer("seed", 42));

  CascadeConfig& c = sc.cascade;
  c.n_tanks = r.integer("cascade.n_tanks", c.n_tanks);
  c.horizon = r.integer("cascade.horizon", c.horizon);
  c.dt = r.num("cascade.dt", c.dt);
  c.substeps = r.integer("cascade.substeps", c.substeps);
  c.outflow_coeff = r.vec("cascade.outflow_coeff", Vec());
  c.surface = r.vec("cascade.surface", Vec());
  c.state_weight = r.vec("cascade.state_weight", Vec());
  c.control_weight = r.vec("cascade.control_weight", Vec());
  c.u_lo = r.num("cascade.u_lo", c.u_lo);
  c.u_hi = r.num("cascade.u_hi", c.u_hi);
  c.w_lo = r.num("cascade.w_lo", c.w_lo);
  c.w_hi = r.num("cascade.w_hi", c.w_hi);
  c.terminal_radius_scale = r.num("cascade.terminal_radius_scale", c.terminal_radius_scale);
  c.u_steady = r.vec("cascade.u_steady", Vec());
  c.terminal_samples = r.integer("cascade.terminal_samples", c.terminal_samples);
  c.seed = sc.seed;

  sc.variant = r.str("variant", "apcscp");
  if (sc.variant != "apcscp" && sc.variant != "pcscp" && sc.variant != "rtgn" &&
      sc.variant != "fascp")
    r.fail("variant", "expected apcscp, pcscp, rtgn or fascp");

  sc.jacobian_name = r.str("jacobian", sc.variant == "apcscp" ? "frozen" : "exact");
  const double step = r.num("jacobian.step", 1e-7);
  if (sc.jacobian_name == "exact") {
    sc.jacobian = JacobianStrategy::exact();
  } else if (sc.jacobian_name == "fd") {
    sc.jacobian = JacobianStrategy::finite_difference(step);
  } else if (sc.jacobian_name == "frozen") {
    sc.jacobian = JacobianStrategy::frozen();
  } else if (sc.jacobian_name == "broyden") {
    sc.jacobian = JacobianStrategy::broyden(r.integer("jacobian.reset", 0),
                                            r.num("jacobian.skip", -1.0));
  } else {
    r.fail("jacobian", "expected exact, fd, frozen or broyden");
  }
  sc.jacobian.step_scale = step;

  const std::string hess = r.str("hessian", "zero");
  if (hess == "zero") {
    sc.hessian = HessianStrategy::zero();
  } else if (hess == "projected") {
    sc.hessian = HessianStrategy::projected(r.num("hessian.eig_floor", 0.0));
  } else if (hess == "gauss_newton") {
    if (sc.problem != "cascade") r.fail("hessian", "gauss_newton needs problem = cascade");
    sc.gauss_newton = true;
  } else {
    r.fail("hessian", "expected zero, projected or gauss_newton");
  }

  sc.solver.tol = r.num("solver.tol", sc.solver.tol);
  sc.solver.max_iter = r.integer("solver.max_iter", sc.solver.max_iter);
  if (!(sc.solver.tol > 0.0)) r.fail("solver.tol", "must be positive");
  if (sc.solver.max_iter < 1) r.fail("solver.max_iter", "must be >= 1");
  sc.refresh_on_failure = r.boolean("refresh_on_failure", false);

  const std::string sched = r.str("schedule", sc.problem == "cascade" ? "closed_loop" : "linear");
  if (sched == "linear") {
    sc.schedule = ScheduleKind::Linear;
    sc.schedule_start = r.vec("schedule.start", Vec::Constant(1, 1.2));
    sc.schedule_step = r.vec("schedule.step", Vec::Constant(1, 0.25));
    sc.schedule_count = r.integer("schedule.count", 10);
    if (sc.schedule_start.size() != sc.schedule_step.size())
      r.fail("schedule.step", "must have the size of schedule.start");
  } else if (sched == "list") {
    sc.schedule = ScheduleKind::List;
    const std::string v = r.str("schedule.values", "");
    if (!trim(v).empty())
      for (const auto& item : split(v, ',')) sc.schedule_values.push_back(r.parse_vec("schedule.values", item));
  } else if (sched == "file") {
    sc.schedule = ScheduleKind::File;
    const auto p = r.raw("schedule.path");
    if (!p) r.fail("schedule.path", "required for schedule = file");
    sc.schedule_path = resolve_path(r.kv(), *p);
  } else if (sched == "closed_loop") {
    sc.schedule = ScheduleKind::ClosedLoop;
    sc.closed_loop_steps = r.integer("closed_loop.steps", sc.closed_loop_steps);
    sc.closed_loop_disturbance = r.num("closed_loop.disturbance", sc.closed_loop_disturbance);
    if (sc.problem != "cascade") r.fail("schedule", "closed_loop needs problem = cascade");
    if (sc.closed_loop_steps < 1) r.fail("closed_loop.steps", "must be >= 1");
    if (!(sc.closed_loop_disturbance >= 0.0 && sc.closed_loop_disturbance < 1.0))
      r.fail("closed_loop.disturbance", "must lie in [0, 1)");
  } else {
    r.fail("schedule", "expected linear, list, file or closed_loop");
  }

  sc.oracle = r.boolean("oracle", false);
  sc.fascp_eps = r.num("fascp.eps", sc.fascp_eps);
  sc.fascp_max_iter = r.integer("fascp.max_iter", sc.fascp_max_iter);
  if (!(sc.fascp_eps > 0.0)) r.fail("fascp.eps", "must be positive");
  if (sc.fascp_max_iter < 1) r.fail("fascp.max_iter", "must be >= 1");

  sc.xi = r.vec("xi", Vec());
  sc.start = r.str("start", sc.problem == "cascade" ? "steady" : "solution");
  if (sc.start != "solution" && sc.start != "perturbed" && sc.start != "steady")
    r.fail("start", "expected solution, perturbed or steady");
  if (sc.start == "steady" && sc.problem != "cascade")
    r.fail("start", "steady needs problem = cascade");
  if (sc.start != "steady" && sc.problem == "cascade")
    r.fail("start", "the cascade supports start = steady only");
  sc.perturbation = r.num("start.perturbation", sc.perturbation);

  if (const auto o = r.raw("output")) sc.output = resolve_path(r.kv(), *o);

  try {
    if (sc.problem == "cascade") sc.cascade.validate();
    tracker_config(sc).validate();
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
  return sc;
}

Instance build_instance(const ScenarioConfig& sc) {
  Instance in;
  if (sc.problem == "tutorial") {
    in.problem = tutorial_problem();
  } else {
    in.cascade = cascade_problem(sc.cascade);
    in.problem = in.cascade->problem;
    if (sc.gauss_newton) in.hessian = HessianStrategy::fixed_matrix(in.cascade->objective_hessian);
  }
  return in;
}

TrackerConfig tracker_config(const ScenarioConfig& sc) {
  TrackerConfig c;
  if (sc.variant == "pcscp") {
    c.variant = Variant::PCSCP;
  } else if (sc.variant == "rtgn") {
    c.variant = Variant::RTGN;
  } else if (sc.variant == "fascp") {
    c.variant = sc.jacobian.is_exact() ? Variant::PCSCP : Variant::APCSCP;
  } else {
    c.variant = Variant::APCSCP;
  }
  c.jacobian = sc.jacobian;
  c.hessian = sc.hessian;
  c.solver = sc.solver;
  c.record_oracle_error = sc.oracle;
  c.refresh_on_failure = sc.refresh_on_failure;
  return c;
}

std::vector<Vec> schedule_values(const ScenarioConfig& sc, Eigen::Index p) {
  std::vector<Vec> xs;
  switch (sc.schedule) {
    case ScheduleKind::Linear:
      for (int k = 0; k < sc.schedule_count; ++k)
        xs.push_back(sc.schedule_start + static_cast<double>(k) * sc.schedule_step);
      break;
    case ScheduleKind::List:
      xs = sc.schedule_values;
      break;
    case ScheduleKind::File: {
      const KeyValues dummy;
      const Reader r(dummy, "");
      std::istringstream is(read_file(sc.schedule_path));
      std::string line;
      while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (!line.empty()) xs.push_back(r.parse_vec("schedule.path", line));
      }
      break;
    }
    case ScheduleKind::ClosedLoop:
      throw UsageError("schedule_values: closed-loop schedules are generated online");
  }
  if (xs.empty()) throw ConfigError("schedule is empty");
  for (const Vec& x : xs)
    if (x.size() != p)
      throw ConfigError("schedule entries must have " + std::to_string(p) + " components");
  return xs;
}

namespace {

PrimalDual tutorial_start(const ScenarioConfig& sc, double xi) {
  PrimalDual z = tutorial_solution(xi).z;
  if (sc.start == "perturbed") {
    z.x.array() += sc.perturbation;
    z.y.array() += sc.perturbation;
  }
  return z;
}

Vec disturbed_state(const ScenarioConfig& sc, const Vec& ws) {
  std::mt19937 rng(sc.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec w = ws;
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) *= 1.0 + sc.closed_loop_disturbance * u(rng);
  return w;
}

}  // namespace

TrackOutcome run_track(const ScenarioConfig& sc) {
  const Instance in = build_instance(sc);
  const ParametricNLP& p = in.problem;
  TrackerConfig cfg = tracker_config(sc);
  if (in.hessian) cfg.hessian = *in.hessian;
  const bool full = sc.variant == "fascp";
  TrackOutcome out;

  if (sc.schedule == ScheduleKind::ClosedLoop) {
    const CascadeBenchmark& b = *in.cascade;
    const Vec xi0 = disturbed_state(sc, b.steady.w);
    const PrimalDual z0 = oracle_solution(p, xi0, b.steady_point());
    ParameterSource src = [&b](int, const Vec& w, const PrimalDual& z) {
      return b.plant_step(w, z.x);
    };
    out.trace = full ? track_converged(p, xi0, sc.closed_loop_steps, src, z0, cfg, sc.fascp_eps,
                                       sc.fascp_max_iter)
                     : track(p, xi0, sc.closed_loop_steps, src, z0, cfg);
    const double e0 = (xi0 - b.steady.w).norm();
    if (e0 > 0.0) out.state_ratio = (out.trace.records.back().xi - b.steady.w).norm() / e0;
    return out;
  }

  const std::vector<Vec> xs = schedule_values(sc, p.p);
  PrimalDual z0;
  if (in.cascade) {
    z0 = oracle_solution(p, xs.front(), in.cascade->steady_point());
  } else {
    z0 = tutorial_start(sc, xs.front()(0));
  }
  out.trace = full ? track_converged(p, xs, z0, cfg, sc.fascp_eps, sc.fascp_max_iter)
                   : track(p, xs, z0, cfg);
  return out;
}

TrackSummary summarize(const TrackingTrace& trace) {
  TrackSummary s;
  s.samples = trace.records.size();
  double sum = 0.0, mx = 0.0;
  std::size_t count = 0;
  s.max_violation = -kInf;
  for (const auto& r : trace.records) {
    s.max_violation = std::max(s.max_violation, r.region_violation);
    s.solver_iters += r.solver_iters;
    if (r.oracle_error) {
      mx = std::max(mx, *r.oracle_error);
      sum += *r.oracle_error;
      ++count;
    }
  }
  if (trace.records.empty()) s.max_violation = 0.0;
  if (count > 0) {
    s.max_oracle_error = mx;
    s.mean_oracle_error = sum / static_cast<double>(count);
  }
  s.jacobian_evals = trace.counters.full_jacobian;
  return s;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string format_vec(const Vec& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) s += ';';
    s += format_double(v(i));
  }
  return s;
}

std::string trace_csv(const TrackingTrace& trace) {
  std::string s = std::string(kTraceHeader) + "\n";
  for (const auto& r : trace.records) {
    s += std::to_string(r.k) + "," + format_vec(r.xi) + "," + r.status + "," +
         std::to_string(r.solver_iters) + "," + format_double(r.kkt.stationarity) + "," +
         format_double(r.kkt.equality) + "," + format_double(r.region_violation) + "," +
         opt(r.jac_error) + "," + opt(r.oracle_error) + "\n";
  }
  return s;
}

std::string fascp_csv(const FascpResult& r) {
  std::string s = std::string(kSolveHeader) + "\n";
  for (const auto& it : r.trace)
    s += std::to_string(it.j) + "," + format_double(it.step_inf_norm) + "," +
         format_double(it.kkt.total) + "," + opt(it.error_vs_reference) + "\n";
  return s;
}

namespace {

std::string output_path(const ScenarioConfig& sc, const std::optional<std::string>& out) {
  if (out) return *out;
  if (sc.output.empty()) throw ConfigError("no output path: set 'output' or pass --out");
  return sc.output;
}

std::string summary_line(const TrackSummary& s, const TrackingTrace& tr,
                         const std::optional<double>& ratio) {
  std::string line = "summary status=" + std::string(tr.aborted ? "aborted" : "ok") +
                     " samples=" + std::to_string(s.samples) +
                     " max_oracle_error=" + opt(s.max_oracle_error) +
                     " mean_oracle_error=" + opt(s.mean_oracle_error) +
                     " max_violation=" + format_double(s.max_violation) +
                     " solver_iters=" + std::to_string(s.solver_iters) +
                     " jacobian_evals=" + std::to_string(s.jacobian_evals);
  if (ratio) line += " state_ratio=" + format_double(*ratio);
  return line;
}

}  // namespace

int cmd_track(const std::string& config_path, const std::optional<std::string>& out) {
  ScenarioConfig sc;
  std::string path;
  try {
    const KeyValues kv = load_key_values(config_path);
    check_known_keys(kv);
    sc = scenario_from(kv);
    path = output_path(sc, out);
    if (sc.schedule != ScheduleKind::ClosedLoop)
      schedule_values(sc, sc.problem == "cascade" ? sc.cascade.n_tanks : 1);
    if (sc.problem == "tutorial" && sc.schedule != ScheduleKind::ClosedLoop &&
        schedule_values(sc, 1).front()(0) < 1.2)
      throw ConfigError("tutorial schedules must start at xi >= 1.2");
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  }

  TrackOutcome res;
  try {
    res = run_track(sc);
  } catch (const ConfigError& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  } catch (const ModelError& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  try {
    write_file(path, trace_csv(res.trace));
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  std::cout << summary_line(summarize(res.trace), res.trace, res.state_ratio) << "\n";
  if (res.trace.aborted) {
    std::cerr << "scp-track: run aborted: " << res.trace.failure << "\n";
    return 2;
  }
  return 0;
}

int cmd_solve(const std::string& config_path, const std::optional<std::string>& out) {
  ScenarioConfig sc;
  std::string path;
  try {
    const KeyValues kv = load_key_values(config_path);
    check_known_keys(kv);
    sc = scenario_from(kv);
    path = output_path(sc, out);
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  }

  FascpResult r;
  PrimalDual z0;
  Vec xi;
  Instance in;
  try {
    in = build_instance(sc);
    if (in.cascade) {
      xi = sc.xi.size() > 0 ? sc.xi : in.cascade->steady.w;
      z0 = in.cascade->steady_point();
      z0.x(in.cascade->layout.slack()) = 0.0;
    } else {
      xi = sc.xi.size() > 0 ? sc.xi : Vec::Constant(1, 1.2);
      if (xi.size() == 1 && xi(0) < 1.2) throw ConfigError("tutorial start needs xi >= 1.2");
      z0 = xi.size() == 1 ? tutorial_start(sc, xi(0)) : PrimalDual{};
    }
    if (xi.size() != in.problem.p)
      throw ConfigError("xi must have " + std::to_string(in.problem.p) + " components");
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  }

  try {
    std::optional<PrimalDual> ref;
    if (sc.oracle) ref = oracle_solution(in.problem, xi, z0);
    TrackerConfig cfg = tracker_config(sc);
    if (in.hessian) cfg.hessian = *in.hessian;
    r = fascp_solve(in.problem, xi, z0, cfg, sc.fascp_eps, sc.fascp_max_iter, ref);
  } catch (const StepFailure& e) {
    std::cerr << "scp-track: solve failed at iteration " << e.prior().k + 1 << ": " << e.what()
              << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  try {
    write_file(path, fascp_csv(r));
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  std::cout << "summary converged=" << (r.converged ? 1 : 0) << " iterations=" << r.iterations
            << " final_kkt=" << format_double(r.final_kkt.total)
            << " objective=" << format_double(in.problem.c.dot(r.z.x)) << "\n";
  return r.converged ? 0 : 2;
}

int cmd_bench(const std::string& config_path, const std::optional<std::string>& out,
              int threads) {
  std::vector<ScenarioConfig> scenarios;
  std::string path;
  try {
    const KeyValues kv = load_key_values(config_path);
    const auto list = kv.values.find("bench.scenarios");
    if (list == kv.values.end() || trim(list->second).empty())
      throw ConfigError("bench.scenarios is missing or empty");
    const std::vector<std::string> names = split(list->second, ',');
    const std::set<std::string> declared(names.begin(), names.end());
    if (declared.size() != names.size()) throw ConfigError("bench.scenarios has duplicates");
    for (const auto& [key, value] : kv.values) {
      if (key == "bench.scenarios") continue;
      if (key.rfind("scenario.", 0) == 0) {
        const auto dot = key.find('.', 9);
        const std::string name = dot == std::string::npos ? "" : key.substr(9, dot - 9);
        if (!declared.count(name)) throw ConfigError("key '" + key + "' names no scenario");
        if (!known_keys().count(key.substr(dot + 1)))
          throw ConfigError("unknown config key '" + key + "'");
        continue;
      }
      if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    for (const auto& name : names) {
      if (name.empty()) throw ConfigError("bench.scenarios has an empty name");
      ScenarioConfig sc = scenario_from(kv, "scenario." + name + ".");
      sc.name = name;
      if (sc.schedule != ScheduleKind::ClosedLoop)
        schedule_values(sc, sc.problem == "cascade" ? sc.cascade.n_tanks : 1);
      scenarios.push_back(std::move(sc));
    }
    const auto o = kv.values.find("output");
    if (out) {
      path = *out;
    } else if (o != kv.values.end()) {
      path = resolve_path(kv, o->second);
    } else {
      throw ConfigError("no output path: set 'output' or pass --out");
    }
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 1;
  }

  std::vector<std::string> rows(scenarios.size());
  std::vector<int> failed(scenarios.size(), 0);
  std::vector<std::string> messages(scenarios.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      const ScenarioConfig& sc = scenarios[i];
      std::string status = "ok";
      TrackSummary s;
      std::optional<double> ratio;
      try {
        const TrackOutcome res = run_track(sc);
        s = summarize(res.trace);
        ratio = res.state_ratio;
        if (res.trace.aborted) {
          status = "aborted";
          messages[i] = res.trace.failure;
        }
      } catch (const Error& e) {
        status = "error";
        messages[i] = e.what();
      }
      failed[i] = status == "ok" ? 0 : 1;
      rows[i] = sc.name + "," + sc.problem + "," + sc.variant + "," + sc.jacobian_name + "," +
                status + "," + std::to_string(s.samples) + "," + opt(s.max_oracle_error) + "," +
                opt(s.mean_oracle_error) + "," + format_double(s.max_violation) + "," +
                std::to_string(s.solver_iters) + "," + std::to_string(s.jacobian_evals) + "," +
                opt(ratio);
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(scenarios.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::string csv = std::string(kBenchHeader) + "\n";
  for (const auto& row : rows) csv += row + "\n";
  try {
    write_file(path, csv);
  } catch (const Error& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  int n_failed = 0;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (!failed[i]) continue;
    ++n_failed;
    std::cerr << "scp-track: scenario " << scenarios[i].name << ": " << messages[i] << "\n";
  }
  std::cout << "summary scenarios=" << scenarios.size() << " failed=" << n_failed << "\n";
  return n_failed > 0 ? 2 : 0;
}

}  // namespace scp::cli
