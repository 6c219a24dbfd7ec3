#pragma once

#include <functional>

#include "scp/region.hpp"
#include "scp/types.hpp"

namespace scp {

/// Parametric problem  min c^T x  s.t.  g(x) + M xi = 0,  x in Omega.
///
/// Callbacks must be safe to call concurrently; the struct is treated as
/// immutable once built.
struct ParametricNLP {
  using VecFn = std::function<Vec(const Vec&)>;
  using MatFn = std::function<Mat(const Vec&)>;
  using AdjointFn = std::function<Vec(const Vec& x, const Vec& y)>;
  using HessFn = std::function<Mat(const Vec& x, const Vec& y)>;

  Eigen::Index n = 0;
  Eigen::Index m = 0;
  Eigen::Index p = 0;
  Vec c;
  VecFn g_eval;
  MatFn g_jac;            // optional; finite differences stand in when empty
  AdjointFn g_adjoint;    // g'(x)^T y
  HessFn lagrangian_hessian;  // optional; sum_i y_i * hess g_i(x)
  Mat M;
  ConvexRegion region;

  bool has_jacobian() const { return static_cast<bool>(g_jac); }
  bool has_second_order() const { return static_cast<bool>(lagrangian_hessian); }
  /// Throws UsageError if dimensions or mandatory callbacks are inconsistent.
  void validate() const;
};

/// z = (x, y): primal point and equality multipliers.
struct PrimalDual {
  Vec x;
  Vec y;

  Vec stacked() const {
    Vec z(x.size() + y.size());
    z << x, y;
    return z;
  }
  double distance(const PrimalDual& o) const { return (stacked() - o.stacked()).norm(); }
};

struct KKTResidual {
  double stationarity = 0.0;
  double equality = 0.0;
  double region_distance = 0.0;
  double total = 0.0;
};

/// g(x) + M xi.
Vec eval_constraints(const ParametricNLP& problem, const Vec& x, const Vec& xi);

/// Natural-map KKT residual of the inclusion 0 ∈ c + g'(x)^T y + N_Omega(x)
/// together with the equality and region-distance residuals.
KKTResidual kkt_residual(const ParametricNLP& problem, const PrimalDual& z, const Vec& xi,
                         double tol = 1e-10);

/// Convex objective accepted by slack_reformulate.
///
/// Quadratic objectives are f(x) = x^T Q x + q^T x + k with Q PSD. Generic
/// callbacks are representable but rejected by slack_reformulate.
struct ConvexObjective {
  enum class Kind { Affine, Quadratic, Generic };

  Kind kind = Kind::Affine;
  Vec linear;
  Mat quad;
  double constant = 0.0;
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> gradient;

  static ConvexObjective affine(Vec c, double k = 0.0);
  static ConvexObjective quadratic(Mat Q, Vec q, double k = 0.0);
  static ConvexObjective generic(std::function<double(const Vec&)> f,
                                 std::function<Vec(const Vec&)> grad);

  double operator()(const Vec& x) const;
};

/// Rewrites min f(x) over the problem's constraints into the linear-objective
/// form. Affine f returns the problem with c replaced by the gradient.
/// Quadratic f appends a slack s as the last variable, minimizes s, and adds
/// the rotated cone ||(R x, (tau-1)/2)|| <= (tau+1)/2 with tau = s - q^T x - k
/// and R^T R = Q. The problem's own c is ignored.
ParametricNLP slack_reformulate(const ConvexObjective& objective, const ParametricNLP& problem);

}  // namespace scp
