#include "scp/linearization.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace scp {

void JacobianStrategy::validate() const {
  require(step_scale > 0.0, "jacobian strategy: step_scale must be positive");
  require(reset_period >= 0, "jacobian strategy: reset_period must be >= 0");
}

void HessianStrategy::validate() const {
  require(eig_floor >= 0.0, "hessian strategy: eig_floor must be >= 0");
  if (kind == Kind::FixedMatrix) {
    require(fixed.rows() == fixed.cols(), "hessian strategy: fixed matrix must be square");
    if (fixed.size() > 0) {
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (fixed + fixed.transpose()));
      require(es.eigenvalues().minCoeff() >= -1e-10 * (1.0 + fixed.norm()),
              "hessian strategy: fixed matrix must be PSD");
    }
  }
}

Vec adjoint_product(const ParametricNLP& problem, const Vec& x, const Vec& y,
                    EvalCounters* counters) {
  require(x.size() == problem.n && y.size() == problem.m, "adjoint_product: dimension mismatch");
  if (counters) ++counters->adjoint;
  return problem.g_adjoint(x, y);
}

Vec correction_vector(const ParametricNLP& problem, const Vec& x, const Vec& y, const Mat& A,
                      EvalCounters* counters) {
  require(A.rows() == problem.m && A.cols() == problem.n, "correction_vector: A has wrong shape");
  return adjoint_product(problem, x, y, counters) - A.transpose() * y;
}

Mat finite_difference_jacobian(const ParametricNLP& problem, const Vec& x, double step_scale,
                               EvalCounters* counters) {
  require(step_scale > 0.0, "finite_difference_jacobian: step_scale must be positive");
  if (counters) ++counters->full_jacobian;
  const Vec g0 = problem.g_eval(x);
  Mat J(g0.size(), x.size());
  Vec xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step_scale * (1.0 + std::abs(x(j)));
    xp(j) = x(j) + h;
    // Use the representable step actually taken.
    const double hr = xp(j) - x(j);
    J.col(j) = (problem.g_eval(xp) - g0) / hr;
    xp(j) = x(j);
  }
  return J;
}

Mat full_jacobian(const ParametricNLP& problem, const Vec& x, double fd_step,
                  EvalCounters* counters) {
  if (!problem.has_jacobian()) return finite_difference_jacobian(problem, x, fd_step, counters);
  if (counters) ++counters->full_jacobian;
  return problem.g_jac(x);
}

Mat update_jacobian(const JacobianStrategy& strategy, const IterateState& state, const Vec& x_new,
                    const Vec& g_old, const Vec& g_new, const ParametricNLP& problem,
                    EvalCounters* counters) {
  using K = JacobianStrategy::Kind;
  switch (strategy.kind) {
    case K::Exact:
      return full_jacobian(problem, x_new, strategy.step_scale, counters);
    case K::FiniteDifference:
      return finite_difference_jacobian(problem, x_new, strategy.step_scale, counters);
    case K::Frozen:
      return state.A;
    case K::Broyden: {
      const int k_new = state.k + 1;
      if (strategy.reset_period > 0 && k_new % strategy.reset_period == 0)
        return full_jacobian(problem, x_new, strategy.step_scale, counters);
      const Vec dx = x_new - state.z.x;
      const double skip = strategy.skip_threshold >= 0.0
                              ? strategy.skip_threshold
                              : 1e-12 * (1.0 + state.z.x.norm());
      const double nrm2 = dx.squaredNorm();
      if (std::sqrt(nrm2) <= skip) return state.A;
      const Vec dg = g_new - g_old;
      return state.A + ((dg - state.A * dx) / nrm2) * dx.transpose();
    }
  }
  return state.A;
}

Mat project_psd(const Mat& H, double eig_floor) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  const Vec lam = es.eigenvalues().cwiseMax(eig_floor);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Mat update_hessian(const HessianStrategy& strategy, const ParametricNLP& problem,
                   const PrimalDual& z) {
  using K = HessianStrategy::Kind;
  switch (strategy.kind) {
    case K::Zero:
      return Mat::Zero(problem.n, problem.n);
    case K::FixedMatrix:
      require(strategy.fixed.rows() == problem.n, "hessian strategy: fixed matrix has wrong size");
      return strategy.fixed;
    case K::ProjectedLagrangian:
      require(problem.has_second_order(),
              "hessian strategy: projected Lagrangian needs a second-order callback");
      return project_psd(problem.lagrangian_hessian(z.x, z.y), strategy.eig_floor);
  }
  return Mat::Zero(problem.n, problem.n);
}

IterateState initial_state(const ParametricNLP& problem, const PrimalDual& z0,
                           const JacobianStrategy& jac, const HessianStrategy& hess,
                           EvalCounters* counters) {
  require(z0.x.size() == problem.n && z0.y.size() == problem.m,
          "initial_state: z0 has wrong dimensions");
  IterateState s;
  s.z = z0;
  s.A = jac.kind == JacobianStrategy::Kind::FiniteDifference
            ? finite_difference_jacobian(problem, z0.x, jac.step_scale, counters)
            : full_jacobian(problem, z0.x, jac.step_scale, counters);
  s.H = update_hessian(hess, problem, z0);
  if (counters) ++counters->g_eval;
  s.g = problem.g_eval(z0.x);
  s.m_corr = correction_vector(problem, z0.x, z0.y, s.A, counters);
  s.k = 0;
  return s;
}

}  // namespace scp
