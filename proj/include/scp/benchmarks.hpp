#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scp/problem.hpp"
#include "scp/tracking.hpp"
#include "scp/types.hpp"

namespace scp {

// ---------------------------------------------------------------- tutorial

/// min -x1  s.t.  x1^2 + 2 x2 + 2 - 4 xi = 0,  ||(x1, 1)|| <= x2,  x >= 0.
ParametricNLP tutorial_problem();

struct TutorialGroundTruth {
  PrimalDual z;     // y holds the equality multiplier
  double y1 = 0.0;  // equality multiplier
  double y2 = 0.0;  // cone multiplier, diagnostic only
};

/// Closed-form stationary point for xi >= 1.2; DomainError below.
TutorialGroundTruth tutorial_solution(double xi);

// ----------------------------------------------------------------- cascade

/// Continuous dynamics with analytic partials.
struct Dynamics {
  Eigen::Index n_w = 0;
  Eigen::Index n_u = 0;
  std::function<Vec(const Vec& w, const Vec& u)> f;
  std::function<Mat(const Vec& w, const Vec& u)> f_w;
  std::function<Mat(const Vec& w, const Vec& u)> f_u;
};

struct Rk4Result {
  Vec w_next;
  Mat dw_ds;
  Mat dw_du;
};

/// Classical RK4 with fixed substeps.
Vec rk4_step(const Dynamics& dyn, const Vec& s, const Vec& u, double dt, int n_substeps);

/// RK4 together with the exact derivative of the discrete scheme.
Rk4Result rk4_step_with_tangents(const Dynamics& dyn, const Vec& s, const Vec& u, double dt,
                                 int n_substeps);

struct Rk4Adjoint {
  Vec ds;
  Vec du;
};

/// Reverse sweep: (dw/ds)^T lambda and (dw/du)^T lambda.
Rk4Adjoint rk4_step_adjoint(const Dynamics& dyn, const Vec& s, const Vec& u, double dt,
                            int n_substeps, const Vec& lambda);

struct CascadeConfig {
  int n_tanks = 3;
  Vec outflow_coeff;  // empty: all 1
  Vec surface;        // empty: all 1
  int horizon = 8;
  double dt = 1.0;
  int substeps = 4;
  Vec state_weight;    // P diagonal, empty: all 1
  Vec control_weight;  // Q diagonal, empty: all 0.1
  double u_lo = 0.0;
  double u_hi = 3.0;
  double w_lo = 0.05;
  double w_hi = 20.0;
  double terminal_radius_scale = 0.5;
  Vec u_steady;  // empty: 1.0 for the first tank and 0.5 for the rest
  std::uint32_t seed = 42;
  int terminal_samples = 500;

  /// Fills defaults and checks positivity.
  CascadeConfig resolved() const;
  void validate() const;
};

struct SteadyState {
  Vec w;
  Vec u;
};

Dynamics cascade_dynamics(const CascadeConfig& cfg);

/// Steady levels from the inflows: c_i sqrt(h_i) = sum_{j<=i} u_j.
SteadyState cascade_steady_state(const CascadeConfig& cfg);

struct TerminalSet {
  Mat S;
  double r = 0.0;
  Mat K;  // u = u_s - K (w - w_s)
  double rho_cap = 0.0;
};

/// Bounds used by the terminal-set synthesis.
struct TerminalBounds {
  Vec u_lo, u_hi, w_lo, w_hi;
};

/// Riccati terminal weight and the largest sampled one-step invariant level
/// set, times `scale`. Model errors on Riccati failure, configuration errors
/// when no level passes.
TerminalSet terminal_ellipsoid(const Dynamics& dyn, double dt, int n_substeps,
                               const SteadyState& steady, const Mat& P, const Mat& Q,
                               const TerminalBounds& bounds, double scale, std::uint32_t seed,
                               int samples = 500);
TerminalSet terminal_ellipsoid(const CascadeConfig& cfg, const SteadyState& steady);

/// True when every seeded boundary point of {(w-w_s)^T S (w-w_s) = rho} stays
/// inside after one closed-loop step and respects the bounds.
bool sampled_invariance(const Dynamics& dyn, double dt, int n_substeps, const SteadyState& steady,
                        const TerminalSet& set, double rho, const TerminalBounds& bounds,
                        std::uint32_t seed, int samples);

/// Variable layout x = (s_0, u_0, ..., s_{H-1}, u_{H-1}, s_H, slack).
struct CascadeLayout {
  Eigen::Index n_w = 0;
  Eigen::Index n_u = 0;
  int horizon = 0;

  Eigen::Index state(int i) const { return i * (n_w + n_u); }
  Eigen::Index control(int i) const { return i * (n_w + n_u) + n_w; }
  Eigen::Index slack() const { return horizon * (n_w + n_u) + n_w; }
  Eigen::Index n_nominal() const { return slack(); }
};

struct CascadeBenchmark {
  CascadeConfig cfg;
  SteadyState steady;
  TerminalSet terminal;
  CascadeLayout layout;
  Dynamics dynamics;
  ParametricNLP problem;
  /// Gauss-Newton Hessian of the tracking cost, zero in the slack.
  Mat objective_hessian;

  /// Steady trajectory with the slack at its optimal value and y = 0.
  PrimalDual steady_point() const;
  /// One plant step from w with the first control of x.
  Vec plant_step(const Vec& w, const Vec& x) const;
};

/// Multiple-shooting NMPC problem with the quadratic tracking objective
/// routed through slack_reformulate.
CascadeBenchmark cascade_problem(const CascadeConfig& cfg);
CascadeBenchmark cascade_problem(const CascadeConfig& cfg, const SteadyState& steady);

// ------------------------------------------------------------------ oracle

/// Raised when the reference solve itself fails.
class OracleFailure : public Error {
 public:
  using Error::Error;
};

/// Converged KKT point: FASCP with exact Jacobians, projected Lagrangian
/// Hessian when available, eps = 1e-10, at most 100 iterations.
PrimalDual oracle_solution(const ParametricNLP& problem, const Vec& xi, const PrimalDual& hint);

/// Tracker configuration used by oracle_solution.
TrackerConfig oracle_config(const ParametricNLP& problem);

}  // namespace scp
