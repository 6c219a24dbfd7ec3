#include "scp/problem.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace scp {

void ParametricNLP::validate() const {
  require(n > 0, "problem: n must be positive");
  require(c.size() == n, "problem: c has wrong size");
  require(M.rows() == m && M.cols() == p, "problem: M must be m x p");
  require(region.dim() == n, "problem: region dimension differs from n");
  require(static_cast<bool>(g_eval), "problem: g_eval is required");
  require(static_cast<bool>(g_adjoint), "problem: g_adjoint is required");
}

Vec eval_constraints(const ParametricNLP& problem, const Vec& x, const Vec& xi) {
  require(x.size() == problem.n, "eval_constraints: x has wrong size");
  require(xi.size() == problem.p, "eval_constraints: xi has wrong size");
  Vec r = problem.g_eval(x);
  require(r.size() == problem.m, "eval_constraints: g returned wrong size");
  if (problem.p > 0) r += problem.M * xi;
  return r;
}

KKTResidual kkt_residual(const ParametricNLP& problem, const PrimalDual& z, const Vec& xi,
                         double tol) {
  require(z.y.size() == problem.m, "kkt_residual: y has wrong size");
  KKTResidual r;
  r.equality = eval_constraints(problem, z.x, xi).norm();
  const Vec grad = problem.c + problem.g_adjoint(z.x, z.y);
  r.stationarity = (z.x - project_region(problem.region, z.x - grad, tol)).norm();
  r.region_distance = (z.x - project_region(problem.region, z.x, tol)).norm();
  r.total = std::max({r.stationarity, r.equality, r.region_distance});
  return r;
}

ConvexObjective ConvexObjective::affine(Vec c, double k) {
  ConvexObjective o;
  o.kind = Kind::Affine;
  o.linear = std::move(c);
  o.constant = k;
  return o;
}

ConvexObjective ConvexObjective::quadratic(Mat Q, Vec q, double k) {
  require(Q.rows() == Q.cols() && Q.rows() == q.size(), "quadratic objective: size mismatch");
  ConvexObjective o;
  o.kind = Kind::Quadratic;
  o.quad = std::move(Q);
  o.linear = std::move(q);
  o.constant = k;
  return o;
}

ConvexObjective ConvexObjective::generic(std::function<double(const Vec&)> f,
                                         std::function<Vec(const Vec&)> grad) {
  ConvexObjective o;
  o.kind = Kind::Generic;
  o.value = std::move(f);
  o.gradient = std::move(grad);
  return o;
}

double ConvexObjective::operator()(const Vec& x) const {
  switch (kind) {
    case Kind::Affine:
      return linear.dot(x) + constant;
    case Kind::Quadratic:
      return x.dot(quad * x) + linear.dot(x) + constant;
    case Kind::Generic:
      return value(x);
  }
  return 0.0;
}

ParametricNLP slack_reformulate(const ConvexObjective& objective, const ParametricNLP& problem) {
  problem.validate();
  using Kind = ConvexObjective::Kind;
  if (objective.kind == Kind::Generic)
    throw UnsupportedFeature("slack_reformulate: only affine and convex-quadratic objectives");
  require(objective.linear.size() == problem.n, "slack_reformulate: objective size mismatch");

  if (objective.kind == Kind::Affine) {
    ParametricNLP out = problem;
    out.c = objective.linear;
    return out;
  }

  const Eigen::Index n = problem.n;
  const Mat Q = 0.5 * (objective.quad + objective.quad.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(Q);
  const double qn = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().size() > 0 && es.eigenvalues().minCoeff() < -1e-10 * qn)
    throw UnsupportedFeature("slack_reformulate: quadratic objective is not convex");

  // Factor Q = R^T R keeping only the numerically nonzero spectrum.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (es.eigenvalues()(i) > 1e-14 * qn) keep.push_back(i);
  const auto r = static_cast<Eigen::Index>(keep.size());

  Mat D = Mat::Zero(r + 1, n + 1);
  for (Eigen::Index i = 0; i < r; ++i)
    D.row(i).head(n) =
        std::sqrt(es.eigenvalues()(keep[i])) * es.eigenvectors().col(keep[i]).transpose();
  D.row(r).head(n) = -0.5 * objective.linear.transpose();
  D(r, n) = 0.5;
  Vec d = Vec::Zero(r + 1);
  d(r) = -0.5 * (objective.constant + 1.0);
  Vec e = Vec::Zero(n + 1);
  e.head(n) = -0.5 * objective.linear;
  e(n) = 0.5;
  const double f = 0.5 * (1.0 - objective.constant);

  ParametricNLP out;
  out.n = n + 1;
  out.m = problem.m;
  out.p = problem.p;
  out.c = Vec::Zero(n + 1);
  out.c(n) = 1.0;
  out.M = problem.M;
  out.region = problem.region.extended(1);
  out.region.add_soc(SocConstraint(D, d, e, f));

  const ParametricNLP::VecFn g = problem.g_eval;
  out.g_eval = [g, n](const Vec& xs) { return g(xs.head(n)); };
  if (problem.g_jac) {
    const ParametricNLP::MatFn jac = problem.g_jac;
    out.g_jac = [jac, n](const Vec& xs) {
      const Mat J = jac(xs.head(n));
      Mat Js = Mat::Zero(J.rows(), n + 1);
      Js.leftCols(n) = J;
      return Js;
    };
  }
  const ParametricNLP::AdjointFn adj = problem.g_adjoint;
  out.g_adjoint = [adj, n](const Vec& xs, const Vec& y) {
    Vec v = Vec::Zero(n + 1);
    v.head(n) = adj(xs.head(n), y);
    return v;
  };
  if (problem.lagrangian_hessian) {
    const ParametricNLP::HessFn hess = problem.lagrangian_hessian;
    out.lagrangian_hessian = [hess, n](const Vec& xs, const Vec& y) {
      Mat H = Mat::Zero(n + 1, n + 1);
      H.topLeftCorner(n, n) = hess(xs.head(n), y);
      return H;
    };
  }
  return out;
}

}  // namespace scp
