#pragma once

#include <cstdint>

#include "scp/problem.hpp"
#include "scp/types.hpp"

namespace scp {

struct JacobianStrategy {
  enum class Kind { Exact, FiniteDifference, Frozen, Broyden };

  Kind kind = Kind::Exact;
  double step_scale = 1e-7;
  int reset_period = 0;
  /// Negative selects the default 1e-12 (1 + ||x||).
  double skip_threshold = -1.0;

  static JacobianStrategy exact() { return {}; }
  static JacobianStrategy finite_difference(double step_scale = 1e-7) {
    return {Kind::FiniteDifference, step_scale, 0, -1.0};
  }
  static JacobianStrategy frozen() { return {Kind::Frozen, 1e-7, 0, -1.0}; }
  static JacobianStrategy broyden(int reset_period = 0, double skip_threshold = -1.0) {
    return {Kind::Broyden, 1e-7, reset_period, skip_threshold};
  }

  /// True for strategies that evaluate a fresh Jacobian every step.
  bool is_exact() const { return kind == Kind::Exact || kind == Kind::FiniteDifference; }
  void validate() const;
};

struct HessianStrategy {
  enum class Kind { Zero, FixedMatrix, ProjectedLagrangian };

  Kind kind = Kind::Zero;
  Mat fixed;
  double eig_floor = 0.0;

  static HessianStrategy zero() { return {}; }
  static HessianStrategy fixed_matrix(Mat H) { return {Kind::FixedMatrix, std::move(H), 0.0}; }
  static HessianStrategy projected(double eig_floor = 0.0) {
    return {Kind::ProjectedLagrangian, Mat(), eig_floor};
  }
  void validate() const;
};

/// Work counters. Diagnostics never touch them.
struct EvalCounters {
  std::int64_t full_jacobian = 0;
  std::int64_t adjoint = 0;
  std::int64_t g_eval = 0;
  std::int64_t subproblem_solves = 0;
};

/// State carried between tracking steps. `g` caches g(z.x).
struct IterateState {
  PrimalDual z;
  Mat A;
  Mat H;
  Vec m_corr;
  Vec g;
  int k = 0;
};

/// g'(x)^T y through the adjoint callback.
Vec adjoint_product(const ParametricNLP& problem, const Vec& x, const Vec& y,
                    EvalCounters* counters = nullptr);

/// g'(x)^T y - A^T y.
Vec correction_vector(const ParametricNLP& problem, const Vec& x, const Vec& y, const Mat& A,
                      EvalCounters* counters = nullptr);

/// Forward differences with h_j = step_scale (1 + |x_j|).
Mat finite_difference_jacobian(const ParametricNLP& problem, const Vec& x, double step_scale,
                               EvalCounters* counters = nullptr);

/// g'(x) from the callback, or forward differences when it is absent.
Mat full_jacobian(const ParametricNLP& problem, const Vec& x, double fd_step = 1e-7,
                  EvalCounters* counters = nullptr);

Mat update_jacobian(const JacobianStrategy& strategy, const IterateState& state, const Vec& x_new,
                    const Vec& g_old, const Vec& g_new, const ParametricNLP& problem,
                    EvalCounters* counters = nullptr);

Mat update_hessian(const HessianStrategy& strategy, const ParametricNLP& problem,
                   const PrimalDual& z);

/// Symmetric eigenvalue clamp from below.
Mat project_psd(const Mat& H, double eig_floor = 0.0);

/// Builds (z, A, H, m) at a starting point. A is one full Jacobian.
IterateState initial_state(const ParametricNLP& problem, const PrimalDual& z0,
                           const JacobianStrategy& jac, const HessianStrategy& hess,
                           EvalCounters* counters = nullptr);

}  // namespace scp
