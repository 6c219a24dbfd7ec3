#include "scp/convex_solver.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

namespace scp {

namespace {

/// Product cone R_+^l x Q^{q_1} x ... x Q^{q_k}.
struct ConeDims {
  Eigen::Index l = 0;
  std::vector<Eigen::Index> q;

  Eigen::Index size() const {
    Eigen::Index s = l;
    for (auto k : q) s += k;
    return s;
  }
  double degree() const { return static_cast<double>(l + static_cast<Eigen::Index>(q.size())); }

  template <typename F>
  void for_each_soc(F&& f) const {
    Eigen::Index off = l;
    for (auto k : q) {
      f(off, k);
      off += k;
    }
  }
};

// t^2 - |u|^2 without cancellation.
double soc_det(double t, double nu) { return (t - nu) * (t + nu); }

Vec identity(const ConeDims& K) {
  Vec e = Vec::Zero(K.size());
  e.head(K.l).setOnes();
  K.for_each_soc([&](Eigen::Index o, Eigen::Index) { e(o) = 1.0; });
  return e;
}

Vec jordan_product(const ConeDims& K, const Vec& u, const Vec& v) {
  Vec w(u.size());
  w.head(K.l) = u.head(K.l).cwiseProduct(v.head(K.l));
  K.for_each_soc([&](Eigen::Index o, Eigen::Index k) {
    w(o) = u.segment(o, k).dot(v.segment(o, k));
    w.segment(o + 1, k - 1) = u(o) * v.segment(o + 1, k - 1) + v(o) * u.segment(o + 1, k - 1);
  });
  return w;
}

/// Solves lambda ∘ x = r.
Vec jordan_divide(const ConeDims& K, const Vec& lambda, const Vec& r) {
  Vec x(r.size());
  x.head(K.l) = r.head(K.l).cwiseQuotient(lambda.head(K.l));
  K.for_each_soc([&](Eigen::Index o, Eigen::Index k) {
    const double l0 = lambda(o);
    const auto l1 = lambda.segment(o + 1, k - 1);
    const double det = soc_det(l0, l1.norm());
    const double x0 = (l0 * r(o) - l1.dot(r.segment(o + 1, k - 1))) / det;
    x(o) = x0;
    x.segment(o + 1, k - 1) = (r.segment(o + 1, k - 1) - x0 * l1) / l0;
  });
  return x;
}

double min_eig(const ConeDims& K, const Vec& u) {
  double m = kInf;
  if (K.l > 0) m = u.head(K.l).minCoeff();
  K.for_each_soc([&](Eigen::Index o, Eigen::Index k) {
    m = std::min(m, u(o) - u.segment(o + 1, k - 1).norm());
  });
  return m;
}

double soc_max_step(double u0, const Eigen::Ref<const Vec>& u1, double d0,
                    const Eigen::Ref<const Vec>& d1) {
  const double a = d0 * d0 - d1.squaredNorm();
  const double b = 2.0 * (u0 * d0 - u1.dot(d1));
  const double c = soc_det(u0, u1.norm());
  if (c <= 0.0 || u0 <= 0.0) return 0.0;
  // Axis component stays positive (lines through the apex).
  double best = d0 < 0.0 ? -u0 / d0 : kInf;
  if (a == 0.0) return b < 0.0 ? std::min(best, -c / b) : best;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return best;
  const double qq = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  const double r1 = qq / a;
  if (r1 > 0.0) best = std::min(best, r1);
  if (qq != 0.0) {
    const double r2 = c / qq;
    if (r2 > 0.0) best = std::min(best, r2);
  }
  return best;
}

/// Largest alpha with u + alpha du in the cone (u interior).
double max_step(const ConeDims& K, const Vec& u, const Vec& du) {
  double alpha = kInf;
  for (Eigen::Index i = 0; i < K.l; ++i)
    if (du(i) < 0.0) alpha = std::min(alpha, -u(i) / du(i));
  K.for_each_soc([&](Eigen::Index o, Eigen::Index k) {
    alpha = std::min(alpha, soc_max_step(u(o), u.segment(o + 1, k - 1), du(o),
                                         du.segment(o + 1, k - 1)));
  });
  return alpha;
}

/// Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s.
struct Scaling {
  Mat W;
  Mat Winv;
  Vec lambda;
};

Scaling nt_scaling(const ConeDims& K, const Vec& s, const Vec& z) {
  const Eigen::Index N = K.size();
  Scaling sc;
  sc.W = Mat::Zero(N, N);
  sc.Winv = Mat::Zero(N, N);
  for (Eigen::Index i = 0; i < K.l; ++i) {
    const double w = std::sqrt(s(i) / z(i));
    sc.W(i, i) = w;
    sc.Winv(i, i) = 1.0 / w;
  }
  K.for_each_soc([&](Eigen::Index o, Eigen::Index k) {
    const auto sb = s.segment(o, k);
    const auto zb = z.segment(o, k);
    const double sjs = std::max(soc_det(sb(0), sb.tail(k - 1).norm()), 1e-300);
    const double zjz = std::max(soc_det(zb(0), zb.tail(k - 1).norm()), 1e-300);
    const Vec sn = sb / std::sqrt(sjs);
    const Vec zn = zb / std::sqrt(zjz);
    const double gamma = std::sqrt(0.5 * (1.0 + sn.dot(zn)));
    Vec w(k);
    w(0) = (sn(0) + zn(0)) / (2.0 * gamma);
    w.tail(k - 1) = (sn.tail(k - 1) - zn.tail(k - 1)) / (2.0 * gamma);
    const double eta = std::pow(sjs / zjz, 0.25);
    const Vec w1 = w.tail(k - 1);
    Mat Wb(k, k);
    Wb(0, 0) = w(0);
    Wb.block(0, 1, 1, k - 1) = w1.transpose();
    Wb.block(1, 0, k - 1, 1) = w1;
    Wb.block(1, 1, k - 1, k - 1) =
        Mat::Identity(k - 1, k - 1) + w1 * w1.transpose() / (1.0 + w(0));
    Mat Wib = Wb;
    Wib.block(0, 1, 1, k - 1) *= -1.0;
    Wib.block(1, 0, k - 1, 1) *= -1.0;
    sc.W.block(o, o, k, k) = eta * Wb;
    sc.Winv.block(o, o, k, k) = Wib / eta;
  });
  sc.lambda = sc.W * z;
  return sc;
}

/// Standard conic form of a subproblem with independent equality rows.
struct ConicForm {
  Mat P;
  Vec q;
  Mat A;
  Vec b;
  Mat G;
  Vec h;
  ConeDims K;
  std::vector<Eigen::Index> kept;
  std::vector<Eigen::Index> dropped;
  bool inconsistent = false;
};

ConicForm build_conic_form(const ConvexSubproblem& sp) {
  const Eigen::Index n = sp.n();
  ConicForm f;
  f.P = 0.5 * (sp.H + sp.H.transpose());
  if (sp.tikhonov > 0.0) f.P.diagonal().array() += sp.tikhonov;
  f.q = sp.c + sp.m_corr - f.P * sp.x_ref;

  // Equality presolve: keep a maximal independent set of rows.
  const Eigen::Index me = sp.m();
  const Vec b_full = sp.A_eq * sp.x_ref - sp.b_eq;
  if (me > 0) {
    Eigen::ColPivHouseholderQR<Mat> qr(sp.A_eq.transpose());
    qr.setThreshold(1e-10);
    const Eigen::Index rank = qr.rank();
    std::vector<bool> keep(me, false);
    for (Eigen::Index i = 0; i < rank; ++i) keep[qr.colsPermutation().indices()(i)] = true;
    for (Eigen::Index i = 0; i < me; ++i) (keep[i] ? f.kept : f.dropped).push_back(i);
    f.A.resize(static_cast<Eigen::Index>(f.kept.size()), n);
    f.b.resize(static_cast<Eigen::Index>(f.kept.size()));
    for (std::size_t i = 0; i < f.kept.size(); ++i) {
      f.A.row(i) = sp.A_eq.row(f.kept[i]);
      f.b(i) = b_full(f.kept[i]);
    }
    if (!f.dropped.empty()) {
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(f.A.transpose());
      for (auto r : f.dropped) {
        const Vec coef = cod.solve(Vec(sp.A_eq.row(r).transpose()));
        const double mismatch = std::abs(b_full(r) - coef.dot(f.b));
        if (mismatch > 1e-8 * (1.0 + std::abs(b_full(r)) + f.b.norm())) f.inconsistent = true;
      }
    }
  } else {
    f.A.resize(0, n);
    f.b.resize(0);
  }

  // Cone rows.
  const ConvexRegion& R = sp.region;
  std::vector<std::pair<Vec, double>> lin;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(R.lower()(i))) {
      Vec g = Vec::Zero(n);
      g(i) = -1.0;
      lin.emplace_back(g, -R.lower()(i));
    }
    if (std::isfinite(R.upper()(i))) {
      Vec g = Vec::Zero(n);
      g(i) = 1.0;
      lin.emplace_back(g, R.upper()(i));
    }
  }
  for (const auto& hs : R.affine()) lin.emplace_back(hs.a, hs.b);

  struct SocRows {
    Mat G;
    Vec h;
  };
  std::vector<SocRows> socs;
  for (const auto& s : R.socs()) {
    const Eigen::Index k = s.D().rows() + 1;
    SocRows r{Mat(k, n), Vec(k)};
    r.G.row(0) = -s.e().transpose();
    r.G.bottomRows(k - 1) = -s.D();
    r.h(0) = s.f();
    r.h.tail(k - 1) = s.d();
    socs.push_back(std::move(r));
  }
  for (const auto& e : R.ellipsoids()) {
    // (x-w)^T S (x-w) <= r  <=>  ||F (x - w)|| <= sqrt(r),  F^T F = S.
    const Vec& lam = e.eigvals();
    const double tol = 1e-14 * std::max(1.0, lam.maxCoeff());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < lam.size(); ++i)
      if (lam(i) > tol) keep.push_back(i);
    const Eigen::Index k = static_cast<Eigen::Index>(keep.size()) + 1;
    Mat F(k - 1, n);
    for (Eigen::Index i = 0; i < k - 1; ++i)
      F.row(i) = std::sqrt(lam(keep[i])) * e.eigvecs().col(keep[i]).transpose();
    SocRows r{Mat::Zero(k, n), Vec(k)};
    r.G.bottomRows(k - 1) = -F;
    r.h(0) = std::sqrt(e.radius());
    r.h.tail(k - 1) = -F * e.center();
    socs.push_back(std::move(r));
  }

  f.K.l = static_cast<Eigen::Index>(lin.size());
  Eigen::Index rows = f.K.l;
  for (const auto& s : socs) {
    f.K.q.push_back(s.G.rows());
    rows += s.G.rows();
  }
  f.G.resize(rows, n);
  f.h.resize(rows);
  Eigen::Index r = 0;
  for (const auto& [g, hv] : lin) {
    f.G.row(r) = g.transpose();
    f.h(r) = hv;
    ++r;
  }
  for (const auto& s : socs) {
    f.G.middleRows(r, s.G.rows()) = s.G;
    f.h.segment(r, s.G.rows()) = s.h;
    r += s.G.rows();
  }
  return f;
}

/// Makes u strictly interior by shifting along the identity if needed.
void shift_interior(const ConeDims& K, Vec& u) {
  const double me = min_eig(K, u);
  const double nrm = std::max(1.0, u.norm());
  if (me <= 1e-8 * nrm) u += (1.0 - me) * identity(K);
}

// A region member treated as an equality phi(x) = 0 by the polish.
struct ActiveMember {
  enum class Kind { Linear, Soc, Ellipsoid } kind = Kind::Linear;
  Vec a;
  double b = 0.0;
  const SocConstraint* soc = nullptr;
  const EllipsoidConstraint* ell = nullptr;

  double phi(const Vec& x) const {
    switch (kind) {
      case Kind::Linear:
        return a.dot(x) - b;
      case Kind::Soc:
        return soc->violation(x);
      case Kind::Ellipsoid:
        return ell->violation(x);
    }
    return 0.0;
  }
  Vec grad(const Vec& x) const {
    switch (kind) {
      case Kind::Linear:
        return a;
      case Kind::Soc: {
        const Vec r = soc->D() * x + soc->d();
        return soc->D().transpose() * (r / r.norm()) - soc->e();
      }
      case Kind::Ellipsoid:
        return 2.0 * (ell->shape() * (x - ell->center()));
    }
    return a;
  }
  // Adds lambda * hess(phi) to H.
  void add_hessian(const Vec& x, double lambda, Mat& H) const {
    if (kind == Kind::Soc) {
      const Vec r = soc->D() * x + soc->d();
      const double nr = r.norm();
      const Vec rh = r / nr;
      const Mat proj = Mat::Identity(r.size(), r.size()) - rh * rh.transpose();
      H += (lambda / nr) * (soc->D().transpose() * proj * soc->D());
    } else if (kind == Kind::Ellipsoid) {
      H += (2.0 * lambda) * ell->shape();
    }
  }
};

std::vector<ActiveMember> active_members(const ConvexRegion& R, const Vec& x, double width,
                                        bool& smooth) {
  const double delta = width * (1.0 + x.norm());
  std::vector<ActiveMember> act;
  const Eigen::Index n = x.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(R.lower()(i)) && x(i) - R.lower()(i) <= delta)
      act.push_back({ActiveMember::Kind::Linear, -Vec::Unit(n, i), -R.lower()(i)});
    if (std::isfinite(R.upper()(i)) && R.upper()(i) - x(i) <= delta)
      act.push_back({ActiveMember::Kind::Linear, Vec::Unit(n, i), R.upper()(i)});
  }
  for (const auto& h : R.affine())
    if (h.a.norm() > 0.0 && h.b - h.a.dot(x) <= delta * h.a.norm())
      act.push_back({ActiveMember::Kind::Linear, h.a, h.b});
  for (const auto& c : R.socs()) {
    if (c.violation(x) < -delta) continue;
    if ((c.D() * x + c.d()).norm() <= delta) {
      smooth = false;
      continue;
    }
    ActiveMember m;
    m.kind = ActiveMember::Kind::Soc;
    m.soc = &c;
    act.push_back(m);
  }
  for (const auto& e : R.ellipsoids()) {
    const Vec gr = 2.0 * (e.shape() * (x - e.center()));
    if (e.violation(x) < -delta * (1.0 + gr.norm())) continue;
    ActiveMember m;
    m.kind = ActiveMember::Kind::Ellipsoid;
    m.ell = &e;
    act.push_back(m);
  }
  return act;
}

Mat normals(const std::vector<ActiveMember>& act, const Vec& x) {
  Mat N(x.size(), static_cast<Eigen::Index>(act.size()));
  for (std::size_t j = 0; j < act.size(); ++j) N.col(static_cast<Eigen::Index>(j)) = act[j].grad(x);
  return N;
}

// Least squares for grad + At y + N lambda = 0; false when rank deficient.
bool ls_multipliers(const Mat& At, const Mat& N, const Vec& grad, Vec& y, Vec& lam) {
  Mat C(grad.size(), At.cols() + N.cols());
  C << At, N;
  if (C.cols() == 0) {
    y.resize(0);
    lam.resize(0);
    return true;
  }
  Eigen::ColPivHouseholderQR<Mat> qr(C);
  qr.setThreshold(1e-10);
  if (qr.rank() < C.cols()) return false;
  const Vec v = qr.solve(-grad);
  y = v.head(At.cols());
  lam = v.tail(N.cols());
  return true;
}

// Active-set Newton refinement of (x, y) on
//   grad(x) + A^T y + sum lambda_i grad phi_i(x) = 0,  A (x - x_ref) + b = 0,  phi_i(x) = 0.
// The IPM's y converges only like the square root of the gap on curved
// cones; this restores both x and y to roundoff when the solution is
// nondegenerate. Leaves sol untouched and returns false otherwise.
bool polish_once(const ConvexSubproblem& sp, SubproblemSolution& sol, double tol, double width) {
  if (!sol.x.allFinite()) return false;
  const Eigen::Index n = sp.n();
  bool smooth = true;
  std::vector<ActiveMember> act = active_members(sp.region, sol.x, width, smooth);
  if (!smooth) return false;

  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < sp.m(); ++i)
    if (std::find(sol.dropped_rows.begin(), sol.dropped_rows.end(), i) == sol.dropped_rows.end())
      kept.push_back(i);
  const auto mk = static_cast<Eigen::Index>(kept.size());
  Mat Ak(mk, n);
  Vec bk(mk);
  for (Eigen::Index j = 0; j < mk; ++j) {
    Ak.row(j) = sp.A_eq.row(kept[j]);
    bk(j) = sp.b_eq(kept[j]);
  }
  const Mat At = Ak.transpose();

  Vec x = sol.x, y, lam;
  const double gscale = 1.0 + sp.gradient(x).norm();
  const double sign_tol = 1e-9 * gscale;
  const double xscale = 1.0 + x.norm();
  // Multipliers at the IPM point; drop wrong-signed members and members that
  // carry no multiplier without being exactly active.
  for (;;) {
    if (!ls_multipliers(At, normals(act, x), sp.gradient(x), y, lam)) return false;
    Eigen::Index worst = -1;
    double most = -sign_tol;
    for (Eigen::Index j = 0; j < lam.size(); ++j)
      if (lam(j) < most) {
        most = lam(j);
        worst = j;
      }
    if (worst < 0) {
      for (Eigen::Index j = 0; j < lam.size(); ++j)
        if (std::abs(lam(j)) <= sign_tol && act[static_cast<std::size_t>(j)].phi(x) < -1e-12 * xscale) {
          worst = j;
          break;
        }
    }
    if (worst < 0) break;
    act.erase(act.begin() + worst);
  }
  const auto na = static_cast<Eigen::Index>(act.size());
  const Mat Hq = sp.H + sp.tikhonov * Mat::Identity(n, n);

  auto residual = [&](const Vec& xv, const Vec& yv, const Vec& lv, Vec& F) {
    F.resize(n + mk + na);
    F.head(n) = sp.gradient(xv) + At * yv + normals(act, xv) * lv;
    F.segment(n, mk) = Ak * (xv - sp.x_ref) + bk;
    for (Eigen::Index j = 0; j < na; ++j) F(n + mk + j) = act[static_cast<std::size_t>(j)].phi(xv);
    return F.norm();
  };

  Vec F;
  const double res0 = residual(x, y, lam, F);
  double res = res0;
  for (int it = 0; it < 8 && res > 1e-15 * gscale * xscale; ++it) {
    const Mat N = normals(act, x);
    Mat Hl = Hq;
    for (Eigen::Index j = 0; j < na; ++j) act[static_cast<std::size_t>(j)].add_hessian(x, lam(j), Hl);
    const Eigen::Index nt = n + mk + na;
    Mat J = Mat::Zero(nt, nt);
    J.topLeftCorner(n, n) = Hl;
    J.block(0, n, n, mk) = At;
    J.block(0, n + mk, n, na) = N;
    J.block(n, 0, mk, n) = Ak;
    J.block(n + mk, 0, na, n) = N.transpose();
    Eigen::FullPivLU<Mat> lu(J);
    if (!lu.isInvertible()) return false;
    const Vec d = lu.solve(-F);
    if (!d.allFinite()) return false;
    const Vec xn = x + d.head(n);
    const Vec yn = y + d.segment(n, mk);
    const Vec ln = lam + d.tail(na);
    Vec Fn;
    const double rn = residual(xn, yn, ln, Fn);
    if (!(rn < res)) break;
    x = xn;
    y = yn;
    lam = ln;
    F = Fn;
    res = rn;
  }

  if (res > res0 || res > tol) return false;
  if ((x - sol.x).norm() > std::max(1e-5, 10.0 * width) * xscale) return false;
  if (lam.size() > 0 && lam.minCoeff() < -sign_tol) return false;
  if (sp.region.max_violation(x) > 1e-10 * xscale) return false;

  sol.x = x;
  sol.y = Vec::Zero(sp.m());
  for (Eigen::Index j = 0; j < mk; ++j) sol.y(kept[j]) = y(j);
  sol.kkt.stationarity = F.head(n).norm();
  sol.kkt.equality = sp.m() > 0 ? (sp.A_eq * (x - sp.x_ref) + sp.b_eq).norm() : 0.0;
  sol.kkt.region_distance = std::max(0.0, sp.region.max_violation(x));
  double comp = 0.0;
  for (Eigen::Index j = 0; j < na; ++j) comp += std::abs(lam(j) * F(n + mk + j));
  sol.kkt.complementarity = comp;
  sol.polished = true;
  return true;
}

// Active-set guesses with growing widths.
bool newton_polish(const ConvexSubproblem& sp, SubproblemSolution& sol, double tol) {
  for (const double width : {1e-6, 1e-4, 1e-3})
    if (polish_once(sp, sol, tol, width)) return true;
  return false;
}

}  // namespace

Vec ConvexSubproblem::gradient(const Vec& x) const {
  Vec g = c + m_corr + H * (x - x_ref);
  if (tikhonov > 0.0) g += tikhonov * (x - x_ref);
  return g;
}

double ConvexSubproblem::objective(const Vec& x) const {
  const Vec dx = x - x_ref;
  return c.dot(x) + m_corr.dot(dx) + 0.5 * dx.dot(H * dx) + 0.5 * tikhonov * dx.squaredNorm();
}

void ConvexSubproblem::validate() const {
  const Eigen::Index nn = n();
  require(m_corr.size() == nn, "subproblem: m has wrong size");
  require(H.rows() == nn && H.cols() == nn, "subproblem: H has wrong size");
  require(x_ref.size() == nn, "subproblem: x_ref has wrong size");
  require(A_eq.cols() == nn && A_eq.rows() == b_eq.size(), "subproblem: A_eq/b_eq mismatch");
  require(region.dim() == nn, "subproblem: region has wrong size");
  require(tikhonov >= 0.0, "subproblem: tikhonov must be nonnegative");
}

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal:
      return "optimal";
    case SolveStatus::Infeasible:
      return "infeasible";
    case SolveStatus::Unbounded:
      return "unbounded";
    case SolveStatus::MaxIter:
      return "max_iter";
  }
  return "unknown";
}

SubproblemSolution ConicSolver::solve(const ConvexSubproblem& sp,
                                      const std::optional<PrimalDual>& warm) {
  sp.validate();
  SubproblemSolution sol = solve_once(sp, warm);
  if (sol.status == SolveStatus::Unbounded && opts_.tikhonov_retry && sp.tikhonov == 0.0 &&
      sp.H.norm() == 0.0) {
    ConvexSubproblem reg = sp;
    reg.tikhonov = 1e-6 * (1.0 + sp.c.norm());
    sol = solve_once(reg, warm);
    sol.regularized = true;
  }
  if (sol.status == SolveStatus::Optimal && !sol.polished) newton_polish(sp, sol, opts_.tol);
  return sol;
}

SubproblemSolution ConicSolver::solve_once(const ConvexSubproblem& sp,
                                           const std::optional<PrimalDual>& warm) {
  const Eigen::Index n = sp.n();
  const ConicForm f = build_conic_form(sp);
  const ConeDims& K = f.K;
  const Eigen::Index me = f.A.rows();
  const Eigen::Index ms = K.size();
  const Eigen::Index nk = n + me;

  SubproblemSolution sol;
  sol.dropped_rows = f.dropped;

  auto finish = [&](const Vec& x, const Vec& y_kept, SolveStatus status, double rx,
                    double gap, int iters) {
    sol.x = x;
    sol.y = Vec::Zero(sp.m());
    for (std::size_t i = 0; i < f.kept.size(); ++i) sol.y(f.kept[i]) = y_kept(i);
    sol.status = status;
    sol.iterations = iters;
    sol.kkt.stationarity = rx;
    sol.kkt.equality = sp.m() > 0 ? (sp.A_eq * (x - sp.x_ref) + sp.b_eq).norm() : 0.0;
    sol.kkt.region_distance = std::max(0.0, sp.region.max_violation(x));
    sol.kkt.complementarity = std::max(0.0, gap);
    return sol;
  };

  if (f.inconsistent) return finish(sp.x_ref, Vec::Zero(me), SolveStatus::Infeasible, kInf, kInf, 0);

  const double data_scale = 1.0 + f.P.norm() + f.G.norm() + (me > 0 ? f.A.norm() : 0.0);
  const double reg = 1e-13 * data_scale;

  // Reduced KKT matrix [P + Gh^T Gh + reg I, A^T; A, -reg I] with Gh = W^{-1} G.
  auto factor = [&](const Mat& Gh) {
    kkt_.setZero(nk, nk);
    kkt_.topLeftCorner(n, n) = f.P + Gh.transpose() * Gh;
    if (me > 0) {
      kkt_.block(0, n, n, me) = f.A.transpose();
      kkt_.block(n, 0, me, n) = f.A;
    }
    Mat regd = kkt_;
    regd.diagonal().head(n).array() += reg;
    regd.diagonal().tail(me).array() -= reg;
    return Eigen::PartialPivLU<Mat>(regd);
  };
  auto reduced_solve = [&](const Eigen::PartialPivLU<Mat>& lu, const Vec& rhs) {
    Vec sol_v = lu.solve(rhs);
    for (int it = 0; it < 2; ++it) sol_v += lu.solve(rhs - kkt_ * sol_v);
    return sol_v;
  };

  // Initial point from the W = I system.
  Vec x(n), y(me), s(ms), z(ms);
  {
    scaled_G_ = f.G;
    const auto lu = factor(scaled_G_);
    Vec rhs(nk);
    rhs.head(n) = -f.q + f.G.transpose() * f.h;
    rhs.tail(me) = f.b;
    const Vec v = reduced_solve(lu, rhs);
    x = v.head(n);
    y = v.tail(me);
    z = f.G * x - f.h;
    s = -z;
    if (warm && warm->x.size() == n) {
      x = warm->x;
      s = f.h - f.G * x;
      if (warm->y.size() == sp.m())
        for (std::size_t i = 0; i < f.kept.size(); ++i) y(i) = warm->y(f.kept[i]);
    }
    if (ms > 0) {
      shift_interior(K, s);
      shift_interior(K, z);
    }
  }

  const Vec e = identity(K);
  const double deg = std::max(1.0, K.degree());
  const double tol = opts_.tol;
  const double blowup = 1e9 * (1.0 + sp.x_ref.norm() + f.h.norm() + f.b.norm());
  const double dual_blowup = 1e9 * (1.0 + f.q.norm() + f.P.norm());

  const double rx_scale = 1.0 + f.q.norm();
  const double pres_scale = 1.0 + std::max(f.h.norm(), f.b.norm());

  Vec best_x = x, best_y = y;
  double best_merit = kInf, best_rx = kInf, best_gap = kInf;
  int stalled = 0;
  int iters_done = opts_.max_iter;

  for (int iter = 0; iter <= opts_.max_iter; ++iter) {
    const Vec rx = f.P * x + f.q + f.A.transpose() * y + f.G.transpose() * z;
    const Vec ry = f.A * x - f.b;
    const Vec rz = f.G * x + s - f.h;
    const double gap = ms > 0 ? s.dot(z) : 0.0;
    const double nrx = rx.norm();
    const double pres = std::max(ry.size() ? ry.norm() : 0.0, rz.size() ? rz.norm() : 0.0);
    const double pobj = 0.5 * x.dot(f.P * x) + f.q.dot(x);
    const double merit =
        std::max({nrx / rx_scale, pres / pres_scale, gap / std::max(1.0, std::abs(pobj))});
    if (merit < best_merit) {
      best_merit = merit;
      best_x = x;
      best_y = y;
      best_rx = nrx;
      best_gap = gap;
    }

    if (merit <= tol) return finish(x, y, SolveStatus::Optimal, nrx, gap, iter);

    if (x.norm() > blowup) return finish(best_x, best_y, SolveStatus::Unbounded, best_rx, best_gap, iter);
    if (z.norm() + y.norm() > dual_blowup && pres > 1e-6)
      return finish(best_x, best_y, SolveStatus::Infeasible, best_rx, best_gap, iter);
    if (iter == opts_.max_iter) break;

    // Direction solver for
    //   P dx + A^T dy + G^T dz = r1,  A dx = r2,  G dx + ds = r3,
    //   lambda ∘ (W dz + W^{-1} ds) = rc.
    const Scaling sc = ms > 0 ? nt_scaling(K, s, z) : Scaling{};
    scaled_G_ = ms > 0 ? Mat(sc.Winv * f.G) : Mat(0, n);
    const auto lu = factor(scaled_G_);
    auto direction = [&](const Vec& r1, const Vec& r2, const Vec& r3, const Vec& rc, Vec& dx,
                         Vec& dy, Vec& dz, Vec& ds) {
      Vec t = ms > 0 ? jordan_divide(K, sc.lambda, rc) : Vec(0);
      Vec w3 = ms > 0 ? Vec(sc.Winv * r3 - t) : Vec(0);
      Vec rhs(nk);
      rhs.head(n) = r1 + scaled_G_.transpose() * w3;
      rhs.tail(me) = r2;
      const Vec v = reduced_solve(lu, rhs);
      dx = v.head(n);
      dy = v.tail(me);
      if (ms > 0) {
        const Vec dzh = scaled_G_ * dx - w3;
        dz = sc.Winv * dzh;
        ds = sc.W * (t - dzh);
      } else {
        dz.resize(0);
        ds.resize(0);
      }
    };

    Vec dx, dy, dz, ds;
    double alpha = 1.0;
    if (ms > 0) {
      const Vec ll = jordan_product(K, sc.lambda, sc.lambda);
      direction(-rx, -ry, -rz, -ll, dx, dy, dz, ds);
      const double a_aff =
          std::min({1.0, max_step(K, s, ds), max_step(K, z, dz)});
      const double mu = gap / deg;
      const double gap_aff = (s + a_aff * ds).dot(z + a_aff * dz);
      const double sigma = std::clamp(std::pow(std::max(gap_aff, 0.0) / gap, 3.0), 0.0, 1.0);

      const Vec corr = jordan_product(K, sc.Winv * ds, sc.W * dz);
      direction(-rx, -ry, -rz, -ll - corr + sigma * mu * e, dx, dy, dz, ds);
      alpha = std::min({1.0, opts_.step_fraction * max_step(K, s, ds),
                        opts_.step_fraction * max_step(K, z, dz)});
    } else {
      // Equality-constrained QP: one Newton step is exact.
      direction(-rx, -ry, Vec(0), Vec(0), dx, dy, dz, ds);
    }

    if (!std::isfinite(alpha) || alpha <= 0.0 || !dx.allFinite() || !dy.allFinite() ||
        !dz.allFinite() || !ds.allFinite()) {
      iters_done = iter + 1;
      break;
    }
    x += alpha * dx;
    y += alpha * dy;
    if (ms > 0) {
      s += alpha * ds;
      z += alpha * dz;
    }

    stalled = alpha < 1e-10 ? stalled + 1 : 0;
    if (ms > 0 && (min_eig(K, s) <= 0.0 || min_eig(K, z) <= 0.0)) {
      iters_done = iter + 1;
      break;
    }
    if (stalled >= 5) {
      const SolveStatus st = pres > 1e-6 ? SolveStatus::Infeasible
                             : nrx > 1e-6 ? SolveStatus::Unbounded
                                          : SolveStatus::MaxIter;
      return finish(best_x, best_y, st, best_rx, best_gap, iter + 1);
    }
  }

  // Numerical floor reached close to the solution: accept if the polish
  // certifies it.
  if (best_merit <= std::max(1e3 * tol, 1e-6)) {
    SubproblemSolution cand = finish(best_x, best_y, SolveStatus::Optimal, best_rx, best_gap,
                                     iters_done);
    if (newton_polish(sp, cand, tol)) return cand;
  }

  // Iteration cap: classify by what failed to converge.
  const Vec rz = f.G * best_x + s - f.h;
  const Vec ry = f.A * best_x - f.b;
  const double pres = std::max(ry.size() ? ry.norm() : 0.0, rz.size() ? rz.norm() : 0.0);
  SolveStatus st = SolveStatus::MaxIter;
  if (pres > 1e-6 && z.norm() + y.norm() > 1e6 * (1.0 + f.q.norm())) st = SolveStatus::Infeasible;
  else if (best_x.norm() > 1e6 * (1.0 + sp.x_ref.norm() + f.h.norm())) st = SolveStatus::Unbounded;
  return finish(best_x, best_y, st, best_rx, best_gap, iters_done);
}

SubproblemSolution solve_subproblem(const ConvexSubproblem& sp,
                                    const std::optional<PrimalDual>& warm,
                                    const SolverOptions& opts) {
  ConicSolver solver(opts);
  return solver.solve(sp, warm);
}

}  // namespace scp
