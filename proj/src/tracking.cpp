#include "scp/tracking.hpp"

#include <cmath>

#include "scp/benchmarks.hpp"

namespace scp {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::APCSCP:
      return "apcscp";
    case Variant::PCSCP:
      return "pcscp";
    case Variant::RTGN:
      return "rtgn";
  }
  return "?";
}

void TrackerConfig::validate() const {
  jacobian.validate();
  hessian.validate();
  if (variant != Variant::APCSCP)
    require(jacobian.is_exact(), "tracker: " + to_string(variant) +
                                     " needs an exact or finite-difference Jacobian");
}

ConvexRegion linearize_region(const ConvexRegion& region, const Vec& x) {
  ConvexRegion out(region.lower(), region.upper());
  for (const auto& h : region.affine()) out.add_affine(h.a, h.b);
  auto add_linear = [&](const Vec& a, double b) {
    if (a.squaredNorm() == 0.0 && b >= 0.0) return;
    out.add_affine(a, b);
  };
  for (const auto& s : region.socs()) {
    const Vec r = s.D() * x + s.d();
    const double nr = r.norm();
    Vec grad = -s.e();
    if (nr > 0.0) grad += s.D().transpose() * (r / nr);
    const double phi = nr - s.e().dot(x) - s.f();
    add_linear(grad, grad.dot(x) - phi);
  }
  for (const auto& e : region.ellipsoids()) {
    const Vec dx = x - e.center();
    const Vec a = 2.0 * (e.shape() * dx);
    add_linear(a, e.radius() + dx.dot(e.shape() * dx) + a.dot(e.center()));
  }
  return out;
}

ConvexSubproblem build_subproblem(const IterateState& state, const ParametricNLP& problem,
                                  const Vec& xi, const TrackerConfig& config) {
  require(xi.size() == problem.p, "build_subproblem: xi has wrong size");
  ConvexSubproblem sp;
  sp.c = problem.c;
  sp.m_corr = config.variant == Variant::APCSCP ? state.m_corr : Vec::Zero(problem.n);
  sp.H = state.H;
  sp.x_ref = state.z.x;
  sp.A_eq = state.A;
  sp.b_eq = state.g;
  if (problem.p > 0) sp.b_eq += problem.M * xi;
  sp.region = config.variant == Variant::RTGN ? linearize_region(problem.region, state.z.x)
                                               : problem.region;
  return sp;
}

namespace {

StepResult generic_step(const IterateState& state, const ParametricNLP& problem,
                        const Vec& xi_next, const TrackerConfig& config, EvalCounters* counters) {
  ConvexSubproblem sp = build_subproblem(state, problem, xi_next, config);
  ConicSolver solver(config.solver);
  if (counters) ++counters->subproblem_solves;
  SubproblemSolution sol = solver.solve(sp, state.z);

  IterateState base = state;
  if (sol.status != SolveStatus::Optimal && config.refresh_on_failure) {
    base.A = full_jacobian(problem, state.z.x, config.jacobian.step_scale, counters);
    base.m_corr = correction_vector(problem, state.z.x, state.z.y, base.A, counters);
    sp = build_subproblem(base, problem, xi_next, config);
    if (counters) ++counters->subproblem_solves;
    sol = solver.solve(sp, state.z);
  }
  if (sol.status != SolveStatus::Optimal)
    throw StepFailure("step " + std::to_string(state.k + 1) + ": subproblem " +
                          to_string(sol.status),
                      state, sol.status);

  IterateState next;
  next.z = PrimalDual{sol.x, sol.y};
  if (counters) ++counters->g_eval;
  next.g = problem.g_eval(sol.x);
  next.A = update_jacobian(config.jacobian, base, sol.x, base.g, next.g, problem, counters);
  next.H = update_hessian(config.hessian, problem, next.z);
  next.m_corr = config.variant == Variant::APCSCP
                    ? correction_vector(problem, sol.x, sol.y, next.A, counters)
                    : Vec::Zero(problem.n);
  next.k = state.k + 1;
  return {std::move(next), std::move(sol)};
}

}  // namespace

StepResult apcscp_step(const IterateState& state, const ParametricNLP& problem,
                       const Vec& xi_next, const TrackerConfig& config, EvalCounters* counters) {
  TrackerConfig c = config;
  c.variant = Variant::APCSCP;
  return generic_step(state, problem, xi_next, c, counters);
}

StepResult pcscp_step(const IterateState& state, const ParametricNLP& problem, const Vec& xi_next,
                      const TrackerConfig& config, EvalCounters* counters) {
  TrackerConfig c = config;
  c.variant = Variant::PCSCP;
  c.validate();
  return generic_step(state, problem, xi_next, c, counters);
}

StepResult rtgn_step(const IterateState& state, const ParametricNLP& problem, const Vec& xi_next,
                     const TrackerConfig& config, EvalCounters* counters) {
  TrackerConfig c = config;
  c.variant = Variant::RTGN;
  c.validate();
  return generic_step(state, problem, xi_next, c, counters);
}

StepResult tracking_step(const IterateState& state, const ParametricNLP& problem,
                         const Vec& xi_next, const TrackerConfig& config, EvalCounters* counters) {
  switch (config.variant) {
    case Variant::APCSCP:
      return apcscp_step(state, problem, xi_next, config, counters);
    case Variant::PCSCP:
      return pcscp_step(state, problem, xi_next, config, counters);
    case Variant::RTGN:
      return rtgn_step(state, problem, xi_next, config, counters);
  }
  throw UsageError("tracking_step: unknown variant");
}

IterateState start_state(const ParametricNLP& problem, const PrimalDual& z0,
                         const TrackerConfig& config, EvalCounters* counters) {
  config.validate();
  IterateState s = initial_state(problem, z0, config.jacobian, config.hessian, counters);
  if (config.variant != Variant::APCSCP) s.m_corr.setZero();
  return s;
}

FascpResult fascp_solve(const ParametricNLP& problem, const Vec& xi, const PrimalDual& z0,
                        const TrackerConfig& config, double eps, int max_iter,
                        const std::optional<PrimalDual>& reference, EvalCounters* counters) {
  require(eps > 0.0, "fascp_solve: eps must be positive");
  require(max_iter > 0, "fascp_solve: max_iter must be positive");
  problem.validate();
  IterateState state = start_state(problem, z0, config, counters);
  FascpResult res;
  for (int j = 0; j < max_iter; ++j) {
    StepResult step = tracking_step(state, problem, xi, config, counters);
    FascpIteration it;
    it.j = j + 1;
    it.step_inf_norm = (step.state.z.x - state.z.x).lpNorm<Eigen::Infinity>();
    it.kkt = kkt_residual(problem, step.state.z, xi);
    if (reference) it.error_vs_reference = step.state.z.distance(*reference);
    res.trace.push_back(it);
    state = std::move(step.state);
    res.iterations = j + 1;
    if (it.step_inf_norm <= eps) {
      res.converged = true;
      break;
    }
  }
  res.z = state.z;
  res.final_kkt = res.trace.empty() ? kkt_residual(problem, state.z, xi) : res.trace.back().kkt;
  return res;
}

namespace {

TraceRecord make_record(const ParametricNLP& problem, const IterateState& state, const Vec& xi,
                        const std::string& status, int iters, const OracleFn& oracle) {
  TraceRecord r;
  r.k = state.k;
  r.xi = xi;
  r.z = state.z;
  r.status = status;
  r.solver_iters = iters;
  r.kkt = kkt_residual(problem, state.z, xi);
  r.region_violation = problem.region.max_violation(state.z.x);
  if (problem.has_jacobian()) r.jac_error = (problem.g_jac(state.z.x) - state.A).norm();
  if (oracle) r.oracle_error = state.z.distance(oracle(xi, state.z));
  return r;
}

OracleFn resolve_oracle(const ParametricNLP& problem, const TrackerConfig& config,
                        const OracleFn& oracle) {
  if (!config.record_oracle_error) return {};
  if (oracle) return oracle;
  return [&problem](const Vec& xi, const PrimalDual& hint) {
    return oracle_solution(problem, xi, hint);
  };
}

ParameterSource from_sequence(const std::vector<Vec>& xi_sequence) {
  require(!xi_sequence.empty(), "track: parameter sequence is empty");
  return [&xi_sequence](int k, const Vec&, const PrimalDual&) {
    return xi_sequence[static_cast<std::size_t>(k)];
  };
}

}  // namespace

TrackingTrace track(const ParametricNLP& problem, const Vec& xi0, int steps,
                    const ParameterSource& source, const PrimalDual& z0,
                    const TrackerConfig& config, const OracleFn& oracle) {
  require(steps >= 0, "track: steps must be >= 0");
  problem.validate();
  const OracleFn orc = resolve_oracle(problem, config, oracle);

  TrackingTrace trace;
  IterateState state = start_state(problem, z0, config, &trace.counters);
  trace.records.push_back(make_record(problem, state, xi0, "initial", 0, orc));
  Vec xi = xi0;
  for (int k = 1; k <= steps; ++k) {
    const Vec xi_next = source(k, xi, state.z);
    try {
      StepResult step = tracking_step(state, problem, xi_next, config, &trace.counters);
      state = std::move(step.state);
      trace.records.push_back(make_record(problem, state, xi_next,
                                          to_string(step.solution.status),
                                          step.solution.iterations, orc));
    } catch (const StepFailure& f) {
      trace.aborted = true;
      trace.failure = f.what();
      break;
    }
    xi = xi_next;
  }
  return trace;
}

TrackingTrace track(const ParametricNLP& problem, const std::vector<Vec>& xi_sequence,
                    const PrimalDual& z0, const TrackerConfig& config, const OracleFn& oracle) {
  const ParameterSource source = from_sequence(xi_sequence);
  const auto steps = static_cast<int>(xi_sequence.size()) - 1;
  return track(problem, xi_sequence.front(), steps, source, z0, config, oracle);
}

TrackingTrace track_converged(const ParametricNLP& problem, const Vec& xi0, int steps,
                              const ParameterSource& source, const PrimalDual& z0,
                              const TrackerConfig& config, double eps, int max_iter,
                              const OracleFn& oracle) {
  require(steps >= 0, "track_converged: steps must be >= 0");
  problem.validate();
  const OracleFn orc = resolve_oracle(problem, config, oracle);

  TrackingTrace trace;
  IterateState state = start_state(problem, z0, config, &trace.counters);
  trace.records.push_back(make_record(problem, state, xi0, "initial", 0, orc));
  Vec xi = xi0;
  for (int k = 1; k <= steps; ++k) {
    const Vec xi_next = source(k, xi, state.z);
    try {
      const FascpResult r = fascp_solve(problem, xi_next, state.z, config, eps, max_iter,
                                        std::nullopt, &trace.counters);
      state = start_state(problem, r.z, config, nullptr);
      state.k = k;
      trace.records.push_back(make_record(problem, state, xi_next,
                                          r.converged ? "converged" : "max_iter", r.iterations,
                                          orc));
    } catch (const StepFailure& f) {
      trace.aborted = true;
      trace.failure = "sample " + std::to_string(k) + ": " + f.what();
      break;
    }
    xi = xi_next;
  }
  return trace;
}

TrackingTrace track_converged(const ParametricNLP& problem, const std::vector<Vec>& xi_sequence,
                              const PrimalDual& z0, const TrackerConfig& config, double eps,
                              int max_iter, const OracleFn& oracle) {
  const ParameterSource source = from_sequence(xi_sequence);
  const auto steps = static_cast<int>(xi_sequence.size()) - 1;
  return track_converged(problem, xi_sequence.front(), steps, source, z0, config, eps, max_iter,
                         oracle);
}

}  // namespace scp
