#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scp/convex_solver.hpp"
#include "scp/linearization.hpp"
#include "scp/problem.hpp"

namespace scp {

enum class Variant { APCSCP, PCSCP, RTGN };

std::string to_string(Variant v);

struct TrackerConfig {
  Variant variant = Variant::APCSCP;
  JacobianStrategy jacobian;
  HessianStrategy hessian;
  SolverOptions solver;
  bool record_oracle_error = false;
  /// On a failed subproblem, refresh A with an exact Jacobian and resolve once.
  bool refresh_on_failure = false;

  /// PCSCP and RTGN require an exact or finite-difference Jacobian.
  void validate() const;
};

/// A step whose subproblem did not reach Optimal. Carries the state the step
/// started from.
class StepFailure : public Error {
 public:
  StepFailure(const std::string& what, IterateState prior, SolveStatus status)
      : Error(what), prior_(std::move(prior)), status_(status) {}
  const IterateState& prior() const { return prior_; }
  SolveStatus status() const { return status_; }

 private:
  IterateState prior_;
  SolveStatus status_;
};

struct StepResult {
  IterateState state;
  SubproblemSolution solution;
};

/// Subproblem at (x^k, A_k, H_k, m^k) for the parameter xi. RTGN replaces
/// the nonlinear region members by their tangent half spaces at x^k.
ConvexSubproblem build_subproblem(const IterateState& state, const ParametricNLP& problem,
                                  const Vec& xi, const TrackerConfig& config);

/// Region with every SOC and ellipsoid member replaced by its linearization at x.
ConvexRegion linearize_region(const ConvexRegion& region, const Vec& x);

StepResult apcscp_step(const IterateState& state, const ParametricNLP& problem,
                       const Vec& xi_next, const TrackerConfig& config,
                       EvalCounters* counters = nullptr);
StepResult pcscp_step(const IterateState& state, const ParametricNLP& problem, const Vec& xi_next,
                      const TrackerConfig& config, EvalCounters* counters = nullptr);
StepResult rtgn_step(const IterateState& state, const ParametricNLP& problem, const Vec& xi_next,
                     const TrackerConfig& config, EvalCounters* counters = nullptr);
/// Dispatches on config.variant.
StepResult tracking_step(const IterateState& state, const ParametricNLP& problem,
                         const Vec& xi_next, const TrackerConfig& config,
                         EvalCounters* counters = nullptr);

/// Starting state for a configured run.
IterateState start_state(const ParametricNLP& problem, const PrimalDual& z0,
                         const TrackerConfig& config, EvalCounters* counters = nullptr);

struct FascpIteration {
  int j = 0;
  double step_inf_norm = 0.0;
  KKTResidual kkt;
  std::optional<double> error_vs_reference;
};

struct FascpResult {
  PrimalDual z;
  bool converged = false;
  int iterations = 0;
  std::vector<FascpIteration> trace;
  KKTResidual final_kkt;
};

/// Full-step iteration at fixed xi until ||x^{j+1} - x^j||_inf <= eps.
/// Subproblem failure throws StepFailure; hitting max_iter returns
/// converged = false with the last iterate.
FascpResult fascp_solve(const ParametricNLP& problem, const Vec& xi, const PrimalDual& z0,
                        const TrackerConfig& config, double eps, int max_iter,
                        const std::optional<PrimalDual>& reference = std::nullopt,
                        EvalCounters* counters = nullptr);

struct TraceRecord {
  int k = 0;
  Vec xi;
  PrimalDual z;
  std::string status;
  int solver_iters = 0;
  KKTResidual kkt;
  double region_violation = 0.0;
  std::optional<double> jac_error;
  std::optional<double> oracle_error;
};

struct TrackingTrace {
  std::vector<TraceRecord> records;
  bool aborted = false;
  std::string failure;
  EvalCounters counters;
};

/// Converged KKT point near a hint; used for tracking errors.
using OracleFn = std::function<PrimalDual(const Vec& xi, const PrimalDual& hint)>;

/// Next parameter from the previous one and the iterate computed for it.
using ParameterSource = std::function<Vec(int k, const Vec& xi_prev, const PrimalDual& z_prev)>;

/// Tracks xi_sequence[1..] starting from z0 near a solution at xi_sequence[0].
/// The first record is the initial point.
TrackingTrace track(const ParametricNLP& problem, const std::vector<Vec>& xi_sequence,
                    const PrimalDual& z0, const TrackerConfig& config,
                    const OracleFn& oracle = {});

/// Same loop with parameters produced online (closed loop), `steps` samples
/// after xi0.
TrackingTrace track(const ParametricNLP& problem, const Vec& xi0, int steps,
                    const ParameterSource& source, const PrimalDual& z0,
                    const TrackerConfig& config, const OracleFn& oracle = {});

/// Full-NMPC counterpart of track: every sample is solved to convergence by
/// fascp_solve warm-started at the previous point. Records carry the FASCP
/// iteration count and status "converged" or "max_iter".
TrackingTrace track_converged(const ParametricNLP& problem, const Vec& xi0, int steps,
                              const ParameterSource& source, const PrimalDual& z0,
                              const TrackerConfig& config, double eps, int max_iter,
                              const OracleFn& oracle = {});
TrackingTrace track_converged(const ParametricNLP& problem, const std::vector<Vec>& xi_sequence,
                              const PrimalDual& z0, const TrackerConfig& config, double eps,
                              int max_iter, const OracleFn& oracle = {});

}  // namespace scp
