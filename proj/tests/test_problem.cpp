#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "scp/benchmarks.hpp"
#include "scp/convex_solver.hpp"
#include "scp/problem.hpp"

using namespace scp;
using scp::testing::cd_jacobian;
using scp::testing::random_psd;
using scp::testing::random_vec;

namespace {

// Linear g(x) = B x + b, p = 0.
ParametricNLP linear_problem(const Mat& B, const Vec& b, ConvexRegion region) {
  ParametricNLP p;
  p.n = B.cols();
  p.m = B.rows();
  p.p = 0;
  p.c = Vec::Zero(p.n);
  p.g_eval = [B, b](const Vec& x) -> Vec { return B * x + b; };
  p.g_jac = [B](const Vec&) -> Mat { return B; };
  p.g_adjoint = [B](const Vec&, const Vec& y) -> Vec { return B.transpose() * y; };
  p.M = Mat::Zero(p.m, 0);
  p.region = std::move(region);
  return p;
}

// One convex subproblem at x_ref = 0; exact for linear g.
ConvexSubproblem as_subproblem(const ParametricNLP& p, const Mat& H) {
  ConvexSubproblem sp;
  sp.c = p.c;
  sp.m_corr = Vec::Zero(p.n);
  sp.H = H;
  sp.x_ref = Vec::Zero(p.n);
  sp.A_eq = p.g_jac(sp.x_ref);
  sp.b_eq = p.g_eval(sp.x_ref);
  sp.region = p.region;
  return sp;
}

}  // namespace

TEST_CASE("eval_constraints: tutorial values") {
  const ParametricNLP p = tutorial_problem();
  const Vec xi = Vec::Constant(1, 1.2);
  CHECK(eval_constraints(p, Vec::Zero(2), xi)(0) == doctest::Approx(-2.8).epsilon(1e-15));
  const Vec xs{{0.6466989, 1.1908902}};
  CHECK(std::abs(eval_constraints(p, xs, xi)(0)) <= 1e-6);
  CHECK_THROWS_AS(eval_constraints(p, Vec::Zero(3), xi), UsageError);
  CHECK_THROWS_AS(eval_constraints(p, Vec::Zero(2), Vec::Zero(2)), UsageError);
}

TEST_CASE("eval_constraints: empty parameter returns g") {
  const Mat B{{1.0, 2.0}, {0.0, -1.0}};
  const Vec b{{0.5, 3.0}};
  const ParametricNLP p = linear_problem(B, b, ConvexRegion(2));
  const Vec x{{0.3, -0.7}};
  CHECK((eval_constraints(p, x, Vec(0)) - (B * x + b)).norm() == 0.0);
}

TEST_CASE("kkt_residual: tutorial stationary point and arithmetic example") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  const KKTResidual r = kkt_residual(p, t.z, Vec::Constant(1, 1.2));
  CHECK(r.total <= 1e-8);

  const PrimalDual z{Vec{{0.0, 2.0}}, Vec::Zero(1)};
  const KKTResidual e = kkt_residual(p, z, Vec::Constant(1, 1.2));
  CHECK(e.equality == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(e.total == std::max({e.stationarity, e.equality, e.region_distance}));
  CHECK(e.stationarity >= 0.0);
  CHECK(e.region_distance >= 0.0);
}

TEST_CASE("kkt_residual: unconstrained stationary point is exactly zero") {
  // min x1 + x2 s.t. x1 + x2 - 1 = 0 over R^2, y = -1.
  ParametricNLP p = linear_problem(Mat{{1.0, 1.0}}, Vec::Constant(1, -1.0), ConvexRegion(2));
  p.c = Vec{{1.0, 1.0}};
  const PrimalDual z{Vec{{0.25, 0.75}}, Vec::Constant(1, -1.0)};
  const KKTResidual r = kkt_residual(p, z, Vec(0));
  CHECK(r.total == 0.0);
}

TEST_CASE("kkt_residual: zero at every tutorial sweep point") {
  const ParametricNLP p = tutorial_problem();
  for (int k = 0; k < 10; ++k) {
    const double xi = 1.2 + 0.25 * k;
    CAPTURE(xi);
    CHECK(kkt_residual(p, tutorial_solution(xi).z, Vec::Constant(1, xi)).total <= 1e-8);
  }
}

TEST_CASE("adjoint consistency on the benchmarks") {
  std::mt19937 rng(7);
  const ParametricNLP tut = tutorial_problem();
  CascadeConfig cfg;
  cfg.horizon = 3;
  const CascadeBenchmark cas = cascade_problem(cfg);
  const Vec base = cas.steady_point().x;
  for (int trial = 0; trial < 20; ++trial) {
    {
      const Vec x = random_vec(rng, 2, 0.0, 3.0);
      const Vec y = random_vec(rng, 1, -2.0, 2.0);
      const Vec adj = tut.g_adjoint(x, y);
      const Mat J = cd_jacobian(tut.g_eval, x);
      CHECK((adj - J.transpose() * y).norm() <= 1e-6 * (1.0 + y.norm()));
      CHECK((adj - tut.g_jac(x).transpose() * y).norm() <= 1e-10 * (1.0 + adj.norm()));
    }
    {
      const Vec x = base + random_vec(rng, cas.problem.n, -0.3, 0.3);
      const Vec y = random_vec(rng, cas.problem.m);
      const Vec adj = cas.problem.g_adjoint(x, y);
      const Mat J = cd_jacobian(cas.problem.g_eval, x);
      CHECK((adj - J.transpose() * y).norm() <= 1e-6 * (1.0 + y.norm()));
      CHECK((adj - cas.problem.g_jac(x).transpose() * y).norm() <= 1e-10 * (1.0 + adj.norm()));
    }
  }
}

TEST_CASE("slack_reformulate: affine objective keeps the problem") {
  const ParametricNLP p = tutorial_problem();
  const ParametricNLP q = slack_reformulate(ConvexObjective::affine(Vec{{-1.0, 0.0}}), p);
  CHECK(q.n == p.n);
  CHECK(q.m == p.m);
  CHECK((q.c - p.c).norm() == 0.0);
  CHECK(q.region.member_count() == p.region.member_count());
}

TEST_CASE("slack_reformulate: squared norm becomes a rotated cone") {
  // min ||x||^2 s.t. x1 + x2 = 1, box [-10, 10]^2.
  const ParametricNLP p = linear_problem(Mat{{1.0, 1.0}}, Vec::Constant(1, -1.0),
                                         ConvexRegion(Vec::Constant(2, -10.0), Vec::Constant(2, 10.0)));
  const ParametricNLP q = slack_reformulate(ConvexObjective::quadratic(Mat::Identity(2, 2), Vec::Zero(2)), p);
  REQUIRE(q.n == 3);
  CHECK(q.m == 1);
  CHECK((q.c - Vec{{0.0, 0.0, 1.0}}).norm() == 0.0);
  REQUIRE(q.region.socs().size() == 1);

  // Points on the epigraph boundary are feasible; below it they are not.
  CHECK(q.region.max_violation(Vec{{0.6, 0.8, 1.0}}) <= 1e-14);
  CHECK(q.region.max_violation(Vec{{0.6, 0.8, 0.99}}) > 0.0);

  const SubproblemSolution direct = solve_subproblem(as_subproblem(p, 2.0 * Mat::Identity(2, 2)));
  const SubproblemSolution lifted = solve_subproblem(as_subproblem(q, Mat::Zero(3, 3)));
  REQUIRE(direct.status == SolveStatus::Optimal);
  REQUIRE(lifted.status == SolveStatus::Optimal);
  CHECK(lifted.x(2) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(lifted.x(2) == doctest::Approx(direct.x.squaredNorm()).epsilon(1e-7));
  CHECK((lifted.x.head(2) - direct.x).norm() <= 1e-6);
}

TEST_CASE("slack_reformulate: random quadratic objectives keep the optimal value") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 4;
    const Mat Q = random_psd(rng, n, 3) + 0.05 * Mat::Identity(n, n);
    const Vec qv = random_vec(rng, n);
    const double k = 0.7;
    const Mat B = scp::testing::random_mat(rng, 2, n);
    const ParametricNLP p = linear_problem(B, random_vec(rng, 2, -0.5, 0.5),
                                           ConvexRegion(Vec::Constant(n, -2.0), Vec::Constant(n, 2.0)));
    const ConvexObjective f = ConvexObjective::quadratic(Q, qv, k);
    const ParametricNLP q = slack_reformulate(f, p);

    ConvexSubproblem ds = as_subproblem(p, 2.0 * Q);
    ds.c = qv;
    const SubproblemSolution direct = solve_subproblem(ds);
    const SubproblemSolution lifted = solve_subproblem(as_subproblem(q, Mat::Zero(n + 1, n + 1)));
    REQUIRE(direct.status == SolveStatus::Optimal);
    REQUIRE(lifted.status == SolveStatus::Optimal);
    CHECK(lifted.x(n) == doctest::Approx(f(direct.x)).epsilon(1e-6));
    CHECK(f(lifted.x.head(n)) <= lifted.x(n) + 1e-7);
  }
}

TEST_CASE("slack_reformulate: generic objectives are rejected") {
  const ParametricNLP p = tutorial_problem();
  const ConvexObjective f = ConvexObjective::generic(
      [](const Vec& x) { return std::exp(x(0)); },
      [](const Vec& x) { return Vec{{std::exp(x(0)), 0.0}}; });
  CHECK_THROWS_AS(slack_reformulate(f, p), UnsupportedFeature);
}

TEST_CASE("problem: validate catches dimension errors") {
  ParametricNLP p = tutorial_problem();
  CHECK_NOTHROW(p.validate());
  p.M = Mat::Zero(2, 1);
  CHECK_THROWS_AS(p.validate(), UsageError);
  p = tutorial_problem();
  p.g_adjoint = nullptr;
  CHECK_THROWS_AS(p.validate(), UsageError);
}
