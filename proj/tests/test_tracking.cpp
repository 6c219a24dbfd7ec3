#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "scp/benchmarks.hpp"
#include "scp/tracking.hpp"

using namespace scp;
using scp::testing::random_vec;

namespace {

// xi_k = start + k step, k = 0 .. count-1.
std::vector<Vec> sweep(double start, double step, int count) {
  std::vector<Vec> xs;
  for (int k = 0; k < count; ++k) xs.push_back(Vec::Constant(1, start + step * k));
  return xs;
}

double cone_violation(const Vec& x) { return std::hypot(x(0), 1.0) - x(1); }

TrackerConfig config(Variant v, JacobianStrategy j = JacobianStrategy::exact(),
                     HessianStrategy h = HessianStrategy::zero()) {
  TrackerConfig c;
  c.variant = v;
  c.jacobian = std::move(j);
  c.hessian = std::move(h);
  return c;
}

OracleFn tutorial_oracle() {
  return [](const Vec& xi, const PrimalDual&) { return tutorial_solution(xi(0)).z; };
}

// Largest x1 on the line {A(x - xk) + b = 0} inside the cone x2 >= hypot(x1, 1).
// Independent reference for the tutorial LP subproblem.
double line_cone_argmax(const Vec& xk, double xi) {
  const double gk = xk(0) * xk(0) + 2.0 * xk(1) + 2.0 - 4.0 * xi;
  auto x2 = [&](double x1) { return xk(1) - (2.0 * xk(0) * (x1 - xk(0)) + gk) / 2.0; };
  auto slack = [&](double x1) { return x2(x1) - std::hypot(x1, 1.0); };
  double lo = 0.0, hi = 10.0;
  REQUIRE(slack(lo) >= 0.0);
  REQUIRE(slack(hi) < 0.0);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slack(mid) >= 0.0 ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

TEST_CASE("build_subproblem: linearization arithmetic") {
  const ParametricNLP p = tutorial_problem();
  IterateState s = initial_state(p, PrimalDual{Vec{{1.0, 1.0}}, Vec::Zero(1)},
                                 JacobianStrategy::exact(), HessianStrategy::zero());
  const ConvexSubproblem sp = build_subproblem(s, p, Vec::Constant(1, 1.2), config(Variant::APCSCP));
  // 2 (x1 - 1) + 2 (x2 - 1) + 0.2 = 0, i.e. 2 x1 + 2 x2 = 3.8.
  CHECK((sp.A_eq - Mat{{2.0, 2.0}}).norm() == 0.0);
  CHECK(sp.b_eq(0) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(sp.m_corr.norm() == 0.0);
  CHECK(sp.H.norm() == 0.0);
  CHECK(sp.region.socs().size() == 1);
  CHECK_THROWS_AS(build_subproblem(s, p, Vec::Zero(2), config(Variant::APCSCP)), UsageError);
}

TEST_CASE("build_subproblem: fixed point at the tutorial solution for any PSD H") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  for (const Mat& H : {Mat(Mat::Zero(2, 2)), Mat(Mat{{0.8, 0.0}, {0.0, 0.0}}),
                       Mat(Mat{{2.0, 0.3}, {0.3, 1.0}})}) {
    IterateState s = initial_state(p, t.z, JacobianStrategy::exact(), HessianStrategy::fixed_matrix(H));
    const SubproblemSolution sol =
        solve_subproblem(build_subproblem(s, p, Vec::Constant(1, 1.2), config(Variant::PCSCP)));
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK((sol.x - t.z.x).norm() <= 1e-6);
  }
}

TEST_CASE("tutorial subproblem agrees with a one-dimensional reference") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  IterateState s = initial_state(p, t.z, JacobianStrategy::exact(), HessianStrategy::zero());
  const SubproblemSolution sol =
      solve_subproblem(build_subproblem(s, p, Vec::Constant(1, 1.45), config(Variant::PCSCP)));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(cone_violation(sol.x) <= 1e-8);
  const double x1 = line_cone_argmax(t.z.x, 1.45);
  CHECK(sol.x(0) == doctest::Approx(x1).epsilon(1e-8));
  // The linearized equality holds exactly.
  CHECK(std::abs(2.0 * t.z.x(0) * (sol.x(0) - t.z.x(0)) + 2.0 * (sol.x(1) - t.z.x(1)) +
                 p.g_eval(t.z.x)(0) - 4.0 * 1.45) <= 1e-8);
}

TEST_CASE("steps: fixed point at an exact KKT point, including a wrong frozen A") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.7);
  const Vec xi = Vec::Constant(1, 1.7);
  const double tol = SolverOptions{}.tol;

  IterateState wrong = initial_state(p, t.z, JacobianStrategy::frozen(), HessianStrategy::zero());
  wrong.A = Mat{{0.3, 1.5}};
  wrong.m_corr = correction_vector(p, t.z.x, t.z.y, wrong.A);

  const StepResult a = apcscp_step(wrong, p, xi, config(Variant::APCSCP, JacobianStrategy::frozen()));
  CHECK(a.state.z.distance(t.z) <= 10.0 * tol);
  CHECK((a.state.A - wrong.A).norm() == 0.0);

  const IterateState exact = start_state(p, t.z, config(Variant::PCSCP));
  const StepResult b = pcscp_step(exact, p, xi, config(Variant::PCSCP));
  CHECK(b.state.z.distance(t.z) <= 10.0 * tol);
  CHECK(b.state.m_corr.norm() == 0.0);

  const StepResult c = rtgn_step(exact, p, xi, config(Variant::RTGN));
  CHECK(c.state.z.distance(t.z) <= 10.0 * tol);
}

TEST_CASE("apcscp_step: first tutorial step contracts toward the new solution") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t0 = tutorial_solution(1.2);
  const TutorialGroundTruth t1 = tutorial_solution(1.45);
  EvalCounters cnt;
  const TrackerConfig cfg = config(Variant::APCSCP);
  const IterateState s = start_state(p, t0.z, cfg, &cnt);
  const auto init_jac = cnt.full_jacobian;
  const auto init_adj = cnt.adjoint;
  const StepResult r = apcscp_step(s, p, Vec::Constant(1, 1.45), cfg, &cnt);
  CHECK(cone_violation(r.state.z.x) <= 1e-8);
  CHECK((r.state.z.x - t1.z.x).norm() < (t0.z.x - t1.z.x).norm());
  CHECK(cnt.subproblem_solves == 1);
  CHECK(cnt.adjoint - init_adj == 1);
  CHECK(cnt.full_jacobian - init_jac == 1);
  CHECK(r.state.k == 1);
}

TEST_CASE("apcscp_step: frozen and Broyden strategies evaluate no Jacobian") {
  const ParametricNLP p = tutorial_problem();
  for (const JacobianStrategy& j : {JacobianStrategy::frozen(), JacobianStrategy::broyden()}) {
    TrackingTrace tr = track(p, sweep(1.2, 0.25, 10), tutorial_solution(1.2).z,
                             config(Variant::APCSCP, j));
    REQUIRE_FALSE(tr.aborted);
    CHECK(tr.counters.full_jacobian == 1);
    CHECK(tr.counters.subproblem_solves == 9);
    CHECK(tr.counters.adjoint == 10);
  }
}

TEST_CASE("apcscp_step: zero embedding keeps a KKT point stationary") {
  ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(2.0);
  // Fold xi = 2 into g and drop the parameter's effect.
  const auto g0 = p.g_eval;
  p.g_eval = [g0](const Vec& x) -> Vec { return g0(x) - Vec::Constant(1, 8.0); };
  p.M = Mat::Zero(1, 1);
  std::vector<Vec> xs;
  for (int k = 0; k < 6; ++k) xs.push_back(Vec::Constant(1, 1.0 + k));
  const TrackingTrace tr = track(p, xs, t.z, config(Variant::APCSCP, JacobianStrategy::frozen()));
  REQUIRE_FALSE(tr.aborted);
  for (const auto& r : tr.records) CHECK(r.z.distance(t.z) <= 1e-7);
}

TEST_CASE("rtgn_step: equals pcscp_step when the region is polyhedral") {
  ParametricNLP p = tutorial_problem();
  p.region = ConvexRegion(Vec::Zero(2), Vec::Constant(2, 5.0));
  p.region.add_affine(Vec{{1.0, -1.0}}, 0.0);
  const PrimalDual z0{Vec{{1.0, 1.5}}, Vec::Constant(1, 0.3)};
  const IterateState s = start_state(p, z0, config(Variant::PCSCP));
  const HessianStrategy h = HessianStrategy::fixed_matrix(Mat::Identity(2, 2));
  IterateState sh = s;
  sh.H = Mat::Identity(2, 2);
  const StepResult a = pcscp_step(sh, p, Vec::Constant(1, 1.6), config(Variant::PCSCP, JacobianStrategy::exact(), h));
  const StepResult b = rtgn_step(sh, p, Vec::Constant(1, 1.6), config(Variant::RTGN, JacobianStrategy::exact(), h));
  CHECK(a.state.z.distance(b.state.z) <= 1e-7);
}

TEST_CASE("linearize_region: tangent half spaces") {
  ConvexRegion r(Vec::Constant(2, -kInf), Vec::Constant(2, kInf));
  r.add_ellipsoid(EllipsoidConstraint(Vec{{1.0, 0.0}}, Mat{{2.0, 0.0}, {0.0, 1.0}}, 1.0));
  Mat D(2, 2);
  D << 1.0, 0.0, 0.0, 0.0;
  r.add_soc(SocConstraint(D, Vec{{0.0, 1.0}}, Vec{{0.0, 1.0}}, 0.0));
  const Vec xk{{1.5, 2.0}};
  const ConvexRegion l = linearize_region(r, xk);
  REQUIRE(l.socs().empty());
  REQUIRE(l.ellipsoids().empty());
  REQUIRE(l.affine().size() == 2);
  // Ellipsoid: 2 (xk - w)^T S (x - w) <= r + (xk - w)^T S (xk - w).
  const auto& he = l.affine()[1];
  const Vec x{{0.3, -0.7}};
  const Vec dk = xk - Vec{{1.0, 0.0}};
  const Mat S{{2.0, 0.0}, {0.0, 1.0}};
  const double lhs = 2.0 * dk.dot(S * (x - Vec{{1.0, 0.0}}));
  const double rhs = 1.0 + dk.dot(S * dk);
  CHECK(he.violation(x) == doctest::Approx(lhs - rhs).epsilon(1e-12));
  // Cone: first-order expansion of ||(x1, 1)|| - x2 at xk.
  const auto& hs = l.affine()[0];
  const double nk = std::hypot(xk(0), 1.0);
  const double lin = nk - xk(1) + (xk(0) / nk) * (x(0) - xk(0)) - (x(1) - xk(1));
  CHECK(hs.violation(x) == doctest::Approx(lin).epsilon(1e-12));

  // At the apex of a standard cone the zero subgradient is used.
  ConvexRegion c(3);
  Mat D3 = Mat::Zero(2, 3);
  D3(0, 0) = 1.0;
  D3(1, 1) = 1.0;
  c.add_soc(SocConstraint(D3, Vec::Zero(2), Vec{{0.0, 0.0, 1.0}}, 0.0));
  const ConvexRegion lc = linearize_region(c, Vec::Zero(3));
  REQUIRE(lc.affine().size() == 1);
  CHECK((lc.affine()[0].a - Vec{{0.0, 0.0, -1.0}}).norm() == 0.0);
  CHECK(lc.affine()[0].b == 0.0);
}

TEST_CASE("tracker config: exact Jacobian required for pcscp and rtgn") {
  CHECK_THROWS_AS(config(Variant::PCSCP, JacobianStrategy::frozen()).validate(), UsageError);
  CHECK_THROWS_AS(config(Variant::RTGN, JacobianStrategy::broyden()).validate(), UsageError);
  CHECK_NOTHROW(config(Variant::APCSCP, JacobianStrategy::broyden()).validate());
  CHECK_NOTHROW(config(Variant::PCSCP, JacobianStrategy::finite_difference()).validate());
}

TEST_CASE("fascp_solve: exact start stops after one iteration") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  const FascpResult r = fascp_solve(p, Vec::Constant(1, 1.2), t.z, config(Variant::PCSCP), 1e-7, 30);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.trace.front().step_inf_norm <= 10.0 * SolverOptions{}.tol);
}

TEST_CASE("fascp_solve: linear convergence from a perturbed start, exact and frozen A") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  const PrimalDual z0{t.z.x + Vec{{0.1, 0.1}}, t.z.y + Vec::Constant(1, 0.1)};
  TrackerConfig cfg = config(Variant::PCSCP);
  cfg.solver.tol = 1e-10;
  const FascpResult r = fascp_solve(p, Vec::Constant(1, 1.2), z0, cfg, 1e-10, 30, t.z);
  REQUIRE(r.converged);
  CHECK(r.final_kkt.total <= 1e-8);
  bool contracted = false;
  for (std::size_t j = 1; j < r.trace.size(); ++j) {
    const double e0 = *r.trace[j - 1].error_vs_reference, e1 = *r.trace[j].error_vs_reference;
    if (e0 > 1e-9 && e1 / e0 <= 0.9) contracted = true;
  }
  CHECK(contracted);

  TrackerConfig fz = config(Variant::APCSCP, JacobianStrategy::frozen());
  fz.solver.tol = 1e-10;
  const FascpResult f = fascp_solve(p, Vec::Constant(1, 1.2), z0, fz, 1e-10, 100, t.z);
  REQUIRE(f.converged);
  CHECK(f.z.distance(t.z) <= 1e-6);
  CHECK(f.iterations > r.iterations);
}

TEST_CASE("fascp_solve: hitting max_iter flags non-convergence") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.2);
  const PrimalDual z0{t.z.x + Vec{{0.1, 0.1}}, t.z.y};
  const FascpResult r = fascp_solve(p, Vec::Constant(1, 1.2), z0,
                                    config(Variant::APCSCP, JacobianStrategy::frozen()), 1e-12, 2);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
  CHECK(r.trace.size() == 2);
  CHECK_THROWS_AS(fascp_solve(p, Vec::Constant(1, 1.2), z0, config(Variant::PCSCP), 0.0, 5), UsageError);
}

TEST_CASE("track: constant parameter at a KKT point stays put") {
  const ParametricNLP p = tutorial_problem();
  const TutorialGroundTruth t = tutorial_solution(1.45);
  TrackerConfig cfg = config(Variant::APCSCP, JacobianStrategy::frozen());
  cfg.record_oracle_error = true;
  const TrackingTrace tr = track(p, sweep(1.45, 0.0, 5), t.z, cfg, tutorial_oracle());
  REQUIRE(tr.records.size() == 5);
  for (const auto& r : tr.records) CHECK(*r.oracle_error <= 10.0 * cfg.solver.tol);
}

TEST_CASE("track: tutorial sweep, PCSCP and APCSCP stay feasible with bounded error") {
  const ParametricNLP p = tutorial_problem();
  for (const TrackerConfig& base : {config(Variant::PCSCP), config(Variant::APCSCP, JacobianStrategy::frozen()),
                                    config(Variant::PCSCP, JacobianStrategy::exact(), HessianStrategy::projected())}) {
    TrackerConfig cfg = base;
    cfg.record_oracle_error = true;
    const TrackingTrace tr = track(p, sweep(1.2, 0.25, 10), tutorial_solution(1.2).z, cfg);
    REQUIRE_FALSE(tr.aborted);
    REQUIRE(tr.records.size() == 10);
    CHECK(tr.records.front().status == "initial");
    double worst = 0.0, emax = 0.0, efirst = 0.0;
    for (const auto& r : tr.records) {
      worst = std::max(worst, cone_violation(r.z.x));
      CHECK(r.region_violation <= 1e-6);
      emax = std::max(emax, *r.oracle_error);
      if (efirst == 0.0 && *r.oracle_error > 1e-8) efirst = *r.oracle_error;
      CHECK(r.jac_error.has_value());
    }
    CHECK(worst <= 1e-6);
    CHECK(emax <= 0.5);
    CHECK(emax <= 5.0 * efirst);
  }
}

TEST_CASE("track: halving the parameter step reduces the tracking error") {
  const ParametricNLP p = tutorial_problem();
  TrackerConfig cfg = config(Variant::PCSCP);
  cfg.record_oracle_error = true;
  auto max_err = [&](double step, int count) {
    const TrackingTrace tr = track(p, sweep(1.2, step, count), tutorial_solution(1.2).z, cfg);
    REQUIRE_FALSE(tr.aborted);
    double e = 0.0;
    for (const auto& r : tr.records) e = std::max(e, *r.oracle_error);
    return e;
  };
  CHECK(max_err(0.125, 20) < max_err(0.25, 10));
}

TEST_CASE("track: rtgn violates the cone on the tutorial sweep") {
  const ParametricNLP p = tutorial_problem();
  const TrackingTrace tr = track(p, sweep(1.2, 0.25, 10), tutorial_solution(1.2).z, config(Variant::RTGN));
  REQUIRE_FALSE(tr.aborted);
  double worst = 0.0;
  for (const auto& r : tr.records) worst = std::max(worst, r.region_violation);
  CHECK(worst > 1e-4);
}

TEST_CASE("track: subproblem failure aborts with a partial trace") {
  const ParametricNLP p = tutorial_problem();
  std::vector<Vec> xs = sweep(1.2, 0.25, 3);
  xs.push_back(Vec::Constant(1, 0.0));
  xs.push_back(Vec::Constant(1, 1.2));
  const TrackingTrace tr = track(p, xs, tutorial_solution(1.2).z, config(Variant::PCSCP));
  CHECK(tr.aborted);
  CHECK(tr.records.size() == 3);
  CHECK(tr.failure.find("step 3") != std::string::npos);

  try {
    const IterateState s = start_state(p, tutorial_solution(1.2).z, config(Variant::PCSCP));
    pcscp_step(s, p, Vec::Constant(1, 0.0), config(Variant::PCSCP));
    FAIL("expected StepFailure");
  } catch (const StepFailure& f) {
    CHECK(f.prior().k == 0);
    CHECK(f.status() == SolveStatus::Infeasible);
  }
  CHECK_THROWS_AS(track(p, std::vector<Vec>{}, tutorial_solution(1.2).z, config(Variant::PCSCP)),
                  UsageError);
}

TEST_CASE("track: closed-loop source sees the previous iterate") {
  const ParametricNLP p = tutorial_problem();
  int calls = 0;
  ParameterSource src = [&](int k, const Vec& prev, const PrimalDual& z) {
    ++calls;
    CHECK(k == calls);
    CHECK(z.x.size() == 2);
    return Vec(prev.array() + 0.1);
  };
  const TrackingTrace tr = track(p, Vec::Constant(1, 1.2), 4, src, tutorial_solution(1.2).z,
                                 config(Variant::PCSCP));
  CHECK(calls == 4);
  REQUIRE(tr.records.size() == 5);
  CHECK(tr.records.back().xi(0) == doctest::Approx(1.6));
}

TEST_CASE("track_converged: every sample lands on the stationary point") {
  const ParametricNLP p = tutorial_problem();
  TrackerConfig cfg = config(Variant::PCSCP, JacobianStrategy::exact(), HessianStrategy::projected());
  cfg.solver.tol = 1e-10;
  cfg.record_oracle_error = true;
  const TrackingTrace tr = track_converged(p, sweep(1.2, 0.25, 6), tutorial_solution(1.2).z, cfg,
                                           1e-10, 100, tutorial_oracle());
  REQUIRE_FALSE(tr.aborted);
  REQUIRE(tr.records.size() == 6);
  for (std::size_t k = 1; k < tr.records.size(); ++k) {
    CHECK(tr.records[k].status == "converged");
    CHECK(*tr.records[k].oracle_error <= 1e-8);
    CHECK(tr.records[k].kkt.total <= 1e-8);
  }
}
