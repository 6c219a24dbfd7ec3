#pragma once

#include <optional>
#include <string>
#include <vector>

#include "scp/problem.hpp"
#include "scp/region.hpp"
#include "scp/types.hpp"

namespace scp {

/// Convex subproblem
///
///   min  c^T x + m^T (x - x_ref) + 1/2 (x - x_ref)^T (H + tikhonov I) (x - x_ref)
///   s.t. A_eq (x - x_ref) + b_eq = 0,   x in region.
///
/// The gradient pieces are stored separately and combined on demand.
struct ConvexSubproblem {
  Vec c;
  Vec m_corr;
  Mat H;
  Vec x_ref;
  Mat A_eq;
  Vec b_eq;
  ConvexRegion region;
  double tikhonov = 0.0;

  Eigen::Index n() const { return c.size(); }
  Eigen::Index m() const { return A_eq.rows(); }
  /// Objective gradient at x.
  Vec gradient(const Vec& x) const;
  double objective(const Vec& x) const;
  void validate() const;
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, MaxIter };

std::string to_string(SolveStatus s);

struct SubproblemKKT {
  double stationarity = 0.0;
  double equality = 0.0;
  double region_distance = 0.0;
  double complementarity = 0.0;
};

/// Solution with multipliers in the convention
///   grad(x) + A_eq^T y + N_Omega(x) ∋ 0.
struct SubproblemSolution {
  Vec x;
  Vec y;
  SolveStatus status = SolveStatus::MaxIter;
  SubproblemKKT kkt;
  int iterations = 0;
  /// True when the answer came from the Tikhonov-regularized retry.
  bool regularized = false;
  /// True when (x, y) were refined by the active-set Newton polish.
  bool polished = false;
  /// Equality rows removed as numerically dependent (their y entries are 0).
  std::vector<Eigen::Index> dropped_rows;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double step_fraction = 0.99;
  /// Retry once with tikhonov = 1e-6 (1 + ||c||) when H = 0 and the
  /// problem looks unbounded.
  bool tikhonov_retry = true;
};

/// Primal-dual interior-point method for quadratic objectives over linear
/// equalities and a product of nonnegative orthants and second-order cones.
///
/// Boxes and half spaces become orthant slacks; SOC members map directly;
/// ellipsoids become one SOC through the square root of their shape matrix.
/// Steps use Nesterov-Todd scaling and Mehrotra predictor-corrector.
///
/// One instance handles one solve at a time.
class ConicSolver {
 public:
  explicit ConicSolver(SolverOptions opts = {}) : opts_(opts) {}

  SubproblemSolution solve(const ConvexSubproblem& sp,
                           const std::optional<PrimalDual>& warm = std::nullopt);

  const SolverOptions& options() const { return opts_; }

 private:
  SubproblemSolution solve_once(const ConvexSubproblem& sp,
                                const std::optional<PrimalDual>& warm);

  SolverOptions opts_;
  // Workspace reused across iterations of one solve.
  Mat kkt_;
  Mat scaled_G_;
};

SubproblemSolution solve_subproblem(const ConvexSubproblem& sp,
                                    const std::optional<PrimalDual>& warm = std::nullopt,
                                    const SolverOptions& opts = {});

}  // namespace scp
