#include "scp/benchmarks.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace scp {

ParametricNLP tutorial_problem() {
  ParametricNLP p;
  p.n = 2;
  p.m = 1;
  p.p = 1;
  p.c = Vec{{-1.0, 0.0}};
  p.g_eval = [](const Vec& x) { return Vec::Constant(1, x(0) * x(0) + 2.0 * x(1) + 2.0); };
  p.g_jac = [](const Vec& x) {
    Mat J(1, 2);
    J << 2.0 * x(0), 2.0;
    return J;
  };
  p.g_adjoint = [](const Vec& x, const Vec& y) { return Vec{{2.0 * x(0) * y(0), 2.0 * y(0)}}; };
  p.lagrangian_hessian = [](const Vec&, const Vec& y) {
    Mat H = Mat::Zero(2, 2);
    H(0, 0) = 2.0 * y(0);
    return H;
  };
  p.M = Mat::Constant(1, 1, -4.0);
  p.region = ConvexRegion(Vec::Zero(2), Vec::Constant(2, kInf));
  Mat D(2, 2);
  D << 1.0, 0.0, 0.0, 0.0;
  p.region.add_soc(SocConstraint(D, Vec{{0.0, 1.0}}, Vec{{0.0, 1.0}}, 0.0));
  return p;
}

TutorialGroundTruth tutorial_solution(double xi) {
  if (!(xi >= 1.2)) throw DomainError("tutorial_solution: xi must be >= 1.2");
  const double sx = std::sqrt(xi);
  const double den = 8.0 * std::sqrt(xi * xi - xi * sx);
  TutorialGroundTruth t;
  t.y1 = (2.0 * sx - 1.0) / den;
  t.y2 = 1.0 / den;
  t.z.x = Vec{{2.0 * std::sqrt(xi - sx), 2.0 * sx - 1.0}};
  t.z.y = Vec::Constant(1, t.y1);
  return t;
}

// ---------------------------------------------------------------- RK4

Vec rk4_step(const Dynamics& dyn, const Vec& s, const Vec& u, double dt, int n_substeps) {
  require(n_substeps > 0, "rk4: substeps must be positive");
  const double h = dt / n_substeps;
  Vec w = s;
  for (int i = 0; i < n_substeps; ++i) {
    const Vec k1 = dyn.f(w, u);
    const Vec k2 = dyn.f(w + 0.5 * h * k1, u);
    const Vec k3 = dyn.f(w + 0.5 * h * k2, u);
    const Vec k4 = dyn.f(w + h * k3, u);
    w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return w;
}

Rk4Result rk4_step_with_tangents(const Dynamics& dyn, const Vec& s, const Vec& u, double dt,
                                 int n_substeps) {
  require(n_substeps > 0, "rk4: substeps must be positive");
  const Eigen::Index nw = dyn.n_w, nu = dyn.n_u;
  const double h = dt / n_substeps;
  Vec w = s;
  // T = [dw/ds | dw/du]
  Mat T(nw, nw + nu);
  T << Mat::Identity(nw, nw), Mat::Zero(nw, nu);
  auto stage = [&](const Vec& wi, const Mat& Ti, Vec& k, Mat& dk) {
    k = dyn.f(wi, u);
    dk = dyn.f_w(wi, u) * Ti;
    dk.rightCols(nu) += dyn.f_u(wi, u);
  };
  Vec k1, k2, k3, k4;
  Mat d1, d2, d3, d4;
  for (int i = 0; i < n_substeps; ++i) {
    stage(w, T, k1, d1);
    stage(w + 0.5 * h * k1, T + 0.5 * h * d1, k2, d2);
    stage(w + 0.5 * h * k2, T + 0.5 * h * d2, k3, d3);
    stage(w + h * k3, T + h * d3, k4, d4);
    w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    T += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
  }
  return {w, T.leftCols(nw), T.rightCols(nu)};
}

Rk4Adjoint rk4_step_adjoint(const Dynamics& dyn, const Vec& s, const Vec& u, double dt,
                            int n_substeps, const Vec& lambda) {
  require(n_substeps > 0, "rk4: substeps must be positive");
  const double h = dt / n_substeps;
  struct Stages {
    Vec w1, w2, w3, w4;
  };
  std::vector<Stages> tape(static_cast<std::size_t>(n_substeps));
  Vec w = s;
  for (auto& st : tape) {
    st.w1 = w;
    const Vec k1 = dyn.f(st.w1, u);
    st.w2 = w + 0.5 * h * k1;
    const Vec k2 = dyn.f(st.w2, u);
    st.w3 = w + 0.5 * h * k2;
    const Vec k3 = dyn.f(st.w3, u);
    st.w4 = w + h * k3;
    const Vec k4 = dyn.f(st.w4, u);
    w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  Vec wb = lambda;
  Vec ub = Vec::Zero(dyn.n_u);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    Vec k4b = (h / 6.0) * wb;
    Vec k3b = (h / 3.0) * wb;
    Vec k2b = (h / 3.0) * wb;
    Vec k1b = (h / 6.0) * wb;
    Vec wn = wb;

    Vec a = dyn.f_w(it->w4, u).transpose() * k4b;
    ub += dyn.f_u(it->w4, u).transpose() * k4b;
    wn += a;
    k3b += h * a;

    a = dyn.f_w(it->w3, u).transpose() * k3b;
    ub += dyn.f_u(it->w3, u).transpose() * k3b;
    wn += a;
    k2b += 0.5 * h * a;

    a = dyn.f_w(it->w2, u).transpose() * k2b;
    ub += dyn.f_u(it->w2, u).transpose() * k2b;
    wn += a;
    k1b += 0.5 * h * a;

    wn += dyn.f_w(it->w1, u).transpose() * k1b;
    ub += dyn.f_u(it->w1, u).transpose() * k1b;
    wb = std::move(wn);
  }
  return {wb, ub};
}

// ------------------------------------------------------------- cascade

namespace {

constexpr double kLevelFloor = 1e-6;

Vec filled(const Vec& v, int n, double value) {
  return v.size() == 0 ? Vec::Constant(n, value) : v;
}

}  // namespace

CascadeConfig CascadeConfig::resolved() const {
  CascadeConfig c = *this;
  c.outflow_coeff = filled(outflow_coeff, n_tanks, 1.0);
  c.surface = filled(surface, n_tanks, 1.0);
  c.state_weight = filled(state_weight, n_tanks, 1.0);
  c.control_weight = filled(control_weight, n_tanks, 0.1);
  if (u_steady.size() == 0) {
    c.u_steady = Vec::Constant(n_tanks, 0.5);
    if (n_tanks > 0) c.u_steady(0) = 1.0;
  }
  return c;
}

void CascadeConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("cascade: " + what); };
  if (n_tanks < 1) bad("n_tanks must be >= 1");
  if (horizon < 2) bad("horizon must be >= 2");
  if (!(dt > 0.0)) bad("dt must be positive");
  if (substeps < 1) bad("substeps must be >= 1");
  if (!(terminal_radius_scale > 0.0 && terminal_radius_scale <= 1.0))
    bad("terminal_radius_scale must lie in (0, 1]");
  if (!(u_lo < u_hi) || !(w_lo < w_hi)) bad("bounds must satisfy lo < hi");
  if (terminal_samples < 1) bad("terminal_samples must be >= 1");
  const CascadeConfig c = resolved();
  for (const Vec* v : {&c.outflow_coeff, &c.surface, &c.state_weight, &c.control_weight}) {
    if (v->size() != n_tanks) bad("per-tank vectors must have n_tanks entries");
    if (!(v->minCoeff() > 0.0)) bad("per-tank coefficients and weights must be positive");
  }
  if (c.u_steady.size() != n_tanks) bad("u_steady must have n_tanks entries");
}

Dynamics cascade_dynamics(const CascadeConfig& cfg_in) {
  const CascadeConfig cfg = cfg_in.resolved();
  const Vec c = cfg.outflow_coeff, S = cfg.surface;
  const Eigen::Index n = cfg.n_tanks;
  Dynamics d;
  d.n_w = n;
  d.n_u = n;
  d.f = [c, S, n](const Vec& w, const Vec& u) {
    Vec out(n);
    double upstream = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = c(i) * std::sqrt(std::max(w(i), kLevelFloor));
      out(i) = (u(i) + upstream - q) / S(i);
      upstream = q;
    }
    return out;
  };
  d.f_w = [c, S, n](const Vec& w, const Vec&) {
    Mat J = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dq = w(i) > kLevelFloor ? 0.5 * c(i) / std::sqrt(w(i)) : 0.0;
      J(i, i) = -dq / S(i);
      if (i + 1 < n) J(i + 1, i) = dq / S(i + 1);
    }
    return J;
  };
  d.f_u = [S, n](const Vec&, const Vec&) {
    Mat J = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) J(i, i) = 1.0 / S(i);
    return J;
  };
  return d;
}

SteadyState cascade_steady_state(const CascadeConfig& cfg_in) {
  const CascadeConfig cfg = cfg_in.resolved();
  SteadyState st;
  st.u = cfg.u_steady;
  st.w.resize(cfg.n_tanks);
  double inflow = 0.0;
  for (int i = 0; i < cfg.n_tanks; ++i) {
    inflow += st.u(i);
    const double sq = inflow / cfg.outflow_coeff(i);
    st.w(i) = sq * sq;
  }
  return st;
}

namespace {

double margin(double v, double lo, double hi) { return std::min(v - lo, hi - v); }

bool within(const Vec& v, const Vec& lo, const Vec& hi, double tol) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) < lo(i) - tol || v(i) > hi(i) + tol) return false;
  return true;
}

}  // namespace

bool sampled_invariance(const Dynamics& dyn, double dt, int n_substeps, const SteadyState& steady,
                        const TerminalSet& set, double rho, const TerminalBounds& bounds,
                        std::uint32_t seed, int samples) {
  const Eigen::Index n = dyn.n_w;
  const Eigen::LLT<Mat> llt(set.S);
  const Mat Linv_t = llt.matrixL().transpose().solve(Mat::Identity(n, n));
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double tol = 1e-12 * (1.0 + rho);
  for (int k = 0; k < samples; ++k) {
    Vec dir(n);
    do {
      for (Eigen::Index i = 0; i < n; ++i) dir(i) = unif(rng);
    } while (dir.norm() < 1e-3);
    dir.normalize();
    const Vec delta = std::sqrt(rho) * (Linv_t * dir);
    const Vec w = steady.w + delta;
    const Vec u = steady.u - set.K * delta;
    if (!within(u, bounds.u_lo, bounds.u_hi, 1e-12) || !within(w, bounds.w_lo, bounds.w_hi, 1e-12))
      return false;
    const Vec dn = rk4_step(dyn, w, u, dt, n_substeps) - steady.w;
    if (dn.dot(set.S * dn) > rho + tol) return false;
  }
  return true;
}

TerminalSet terminal_ellipsoid(const Dynamics& dyn, double dt, int n_substeps,
                               const SteadyState& steady, const Mat& P, const Mat& Q,
                               const TerminalBounds& bounds, double scale, std::uint32_t seed,
                               int samples) {
  require(scale > 0.0 && scale <= 1.0, "terminal_ellipsoid: scale must lie in (0, 1]");
  const Rk4Result lin = rk4_step_with_tangents(dyn, steady.w, steady.u, dt, n_substeps);
  const Mat& A = lin.dw_ds;
  const Mat& B = lin.dw_du;

  TerminalSet set;
  Mat S = P;
  bool converged = false;
  for (int it = 0; it < 100000; ++it) {
    const Mat BtS = B.transpose() * S;
    const Mat G = (Q + BtS * B).ldlt().solve(BtS * A);
    Mat Sn = P + A.transpose() * S * A - A.transpose() * S * B * G;
    Sn = 0.5 * (Sn + Sn.transpose());
    if (!Sn.allFinite()) break;
    const double diff = (Sn - S).stableNorm();
    S = std::move(Sn);
    const double size = S.stableNorm();
    if (!std::isfinite(diff) || !std::isfinite(size)) break;
    if (diff <= 1e-12 * (1.0 + size)) {
      converged = true;
      break;
    }
  }
  if (!converged) throw ModelError("terminal_ellipsoid: Riccati iteration did not converge");
  set.S = S;
  const Mat BtS = B.transpose() * S;
  set.K = (Q + BtS * B).ldlt().solve(BtS * A);

  // Largest level keeping the linear feedback and the state inside the boxes.
  const Mat Sinv = S.ldlt().solve(Mat::Identity(S.rows(), S.cols()));
  double cap = kInf;
  for (Eigen::Index j = 0; j < set.K.rows(); ++j) {
    const double spread = set.K.row(j) * Sinv * set.K.row(j).transpose();
    const double mg = margin(steady.u(j), bounds.u_lo(j), bounds.u_hi(j));
    if (spread > 0.0) cap = std::min(cap, mg * mg / spread);
  }
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const double mg = margin(steady.w(i), bounds.w_lo(i), bounds.w_hi(i));
    cap = std::min(cap, mg * mg / Sinv(i, i));
  }
  if (!(cap > 0.0) || !std::isfinite(cap))
    throw ConfigError("terminal_ellipsoid: bounds give no usable level set");
  set.rho_cap = cap;

  auto ok = [&](double rho) {
    return sampled_invariance(dyn, dt, n_substeps, steady, set, rho, bounds, seed, samples);
  };
  double rho = cap;
  if (!ok(cap)) {
    double lo = 0.0, hi = cap;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (ok(mid) ? lo : hi) = mid;
    }
    if (lo <= 0.0) throw ConfigError("terminal_ellipsoid: no invariant level set found");
    rho = lo;
  }
  set.r = scale * rho;
  return set;
}

TerminalSet terminal_ellipsoid(const CascadeConfig& cfg_in, const SteadyState& steady) {
  cfg_in.validate();
  const CascadeConfig cfg = cfg_in.resolved();
  const Eigen::Index n = cfg.n_tanks;
  TerminalBounds b{Vec::Constant(n, cfg.u_lo), Vec::Constant(n, cfg.u_hi),
                   Vec::Constant(n, cfg.w_lo), Vec::Constant(n, cfg.w_hi)};
  return terminal_ellipsoid(cascade_dynamics(cfg), cfg.dt, cfg.substeps, steady,
                            Mat(cfg.state_weight.asDiagonal()), Mat(cfg.control_weight.asDiagonal()),
                            b, cfg.terminal_radius_scale, cfg.seed, cfg.terminal_samples);
}

PrimalDual CascadeBenchmark::steady_point() const {
  PrimalDual z;
  z.x = Vec::Zero(problem.n);
  for (int i = 0; i <= layout.horizon; ++i) {
    z.x.segment(layout.state(i), layout.n_w) = steady.w;
    if (i < layout.horizon) z.x.segment(layout.control(i), layout.n_u) = steady.u;
  }
  z.y = Vec::Zero(problem.m);
  return z;
}

Vec CascadeBenchmark::plant_step(const Vec& w, const Vec& x) const {
  return rk4_step(dynamics, w, x.segment(layout.control(0), layout.n_u), cfg.dt, cfg.substeps);
}

CascadeBenchmark cascade_problem(const CascadeConfig& cfg) {
  return cascade_problem(cfg, cascade_steady_state(cfg));
}

CascadeBenchmark cascade_problem(const CascadeConfig& cfg_in, const SteadyState& steady) {
  cfg_in.validate();
  CascadeBenchmark b;
  b.cfg = cfg_in.resolved();
  const CascadeConfig& cfg = b.cfg;
  b.steady = steady;
  b.dynamics = cascade_dynamics(cfg);
  require(steady.w.size() == cfg.n_tanks && steady.u.size() == cfg.n_tanks,
          "cascade_problem: steady state has wrong size");
  const double res = b.dynamics.f(steady.w, steady.u).norm();
  if (res > 1e-10) throw ConfigError("cascade_problem: (w_s, u_s) is not a steady state");
  b.terminal = terminal_ellipsoid(cfg, steady);

  CascadeLayout L{cfg.n_tanks, cfg.n_tanks, cfg.horizon};
  b.layout = L;
  const Eigen::Index nw = L.n_w, nu = L.n_u, n = L.n_nominal();
  const int H = L.horizon;
  const Dynamics dyn = b.dynamics;
  const double dt = cfg.dt;
  const int ns = cfg.substeps;

  ParametricNLP p;
  p.n = n;
  p.m = (H + 1) * nw;
  p.p = nw;
  p.c = Vec::Zero(n);
  p.M = Mat::Zero(p.m, nw);
  p.M.topRows(nw) = -Mat::Identity(nw, nw);
  p.g_eval = [dyn, L, dt, ns](const Vec& x) {
    Vec g((L.horizon + 1) * L.n_w);
    g.head(L.n_w) = x.segment(L.state(0), L.n_w);
    for (int i = 0; i < L.horizon; ++i)
      g.segment((i + 1) * L.n_w, L.n_w) =
          rk4_step(dyn, x.segment(L.state(i), L.n_w), x.segment(L.control(i), L.n_u), dt, ns) -
          x.segment(L.state(i + 1), L.n_w);
    return g;
  };
  p.g_jac = [dyn, L, dt, ns, n](const Vec& x) {
    Mat J = Mat::Zero((L.horizon + 1) * L.n_w, n);
    J.block(0, L.state(0), L.n_w, L.n_w).setIdentity();
    for (int i = 0; i < L.horizon; ++i) {
      const Rk4Result r = rk4_step_with_tangents(dyn, x.segment(L.state(i), L.n_w),
                                                 x.segment(L.control(i), L.n_u), dt, ns);
      const Eigen::Index row = (i + 1) * L.n_w;
      J.block(row, L.state(i), L.n_w, L.n_w) = r.dw_ds;
      J.block(row, L.control(i), L.n_w, L.n_u) = r.dw_du;
      J.block(row, L.state(i + 1), L.n_w, L.n_w) = -Mat::Identity(L.n_w, L.n_w);
    }
    return J;
  };
  p.g_adjoint = [dyn, L, dt, ns, n](const Vec& x, const Vec& y) {
    Vec v = Vec::Zero(n);
    v.segment(L.state(0), L.n_w) += y.head(L.n_w);
    for (int i = 0; i < L.horizon; ++i) {
      const Vec lam = y.segment((i + 1) * L.n_w, L.n_w);
      const Rk4Adjoint a = rk4_step_adjoint(dyn, x.segment(L.state(i), L.n_w),
                                            x.segment(L.control(i), L.n_u), dt, ns, lam);
      v.segment(L.state(i), L.n_w) += a.ds;
      v.segment(L.control(i), L.n_u) += a.du;
      v.segment(L.state(i + 1), L.n_w) -= lam;
    }
    return v;
  };

  Vec lo(n), hi(n), xs(n), wdiag(n);
  for (int i = 0; i <= H; ++i) {
    lo.segment(L.state(i), nw).setConstant(cfg.w_lo);
    hi.segment(L.state(i), nw).setConstant(cfg.w_hi);
    xs.segment(L.state(i), nw) = steady.w;
    wdiag.segment(L.state(i), nw) = cfg.state_weight;
    if (i < H) {
      lo.segment(L.control(i), nu).setConstant(cfg.u_lo);
      hi.segment(L.control(i), nu).setConstant(cfg.u_hi);
      xs.segment(L.control(i), nu) = steady.u;
      wdiag.segment(L.control(i), nu) = cfg.control_weight;
    }
  }
  p.region = ConvexRegion(lo, hi);
  Mat shape = Mat::Zero(n, n);
  shape.block(L.state(H), L.state(H), nw, nw) = b.terminal.S;
  p.region.add_ellipsoid(EllipsoidConstraint(xs, shape, b.terminal.r));
  p.validate();

  // Tracking cost with the Riccati matrix as terminal weight.
  Mat W = Mat(wdiag.asDiagonal());
  W.block(L.state(H), L.state(H), nw, nw) = b.terminal.S;
  const ConvexObjective obj = ConvexObjective::quadratic(W, -2.0 * (W * xs), xs.dot(W * xs));
  b.problem = slack_reformulate(obj, p);
  b.objective_hessian = Mat::Zero(n + 1, n + 1);
  b.objective_hessian.topLeftCorner(n, n) = 2.0 * W;
  return b;
}

// ------------------------------------------------------------------ oracle

TrackerConfig oracle_config(const ParametricNLP& problem) {
  TrackerConfig c;
  c.variant = Variant::PCSCP;
  c.jacobian = JacobianStrategy::exact();
  c.hessian = problem.has_second_order() ? HessianStrategy::projected() : HessianStrategy::zero();
  c.solver.tol = 1e-10;
  c.solver.max_iter = 300;
  return c;
}

PrimalDual oracle_solution(const ParametricNLP& problem, const Vec& xi, const PrimalDual& hint) {
  FascpResult r;
  try {
    r = fascp_solve(problem, xi, hint, oracle_config(problem), 1e-10, 100);
  } catch (const StepFailure& f) {
    throw OracleFailure(std::string("oracle: ") + f.what());
  }
  if (!r.converged) throw OracleFailure("oracle: FASCP did not converge in 100 iterations");
  if (r.final_kkt.total > 1e-8) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3) << "oracle: KKT residual "
       << r.final_kkt.total << " above 1e-8";
    throw OracleFailure(os.str());
  }
  return r.z;
}

}  // namespace scp
