#include "scp/region.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace scp {

namespace {

Mat append_zero_cols(const Mat& A, Eigen::Index extra) {
  Mat out = Mat::Zero(A.rows(), A.cols() + extra);
  out.leftCols(A.cols()) = A;
  return out;
}

Vec append_zeros(const Vec& v, Eigen::Index extra) {
  Vec out = Vec::Zero(v.size() + extra);
  out.head(v.size()) = v;
  return out;
}

// Sample abscissae for scanning one continuity interval of a rational
// function in mu. Clustered towards both ends so poles and roots near them
// are bracketed.
std::vector<double> interval_samples(double a, double b) {
  std::vector<double> s;
  if (std::isfinite(b)) {
    const double w = b - a;
    for (int k = 1; k <= 52; ++k) {
      s.push_back(a + w * std::ldexp(1.0, -k));
      s.push_back(b - w * std::ldexp(1.0, -k));
    }
    for (int j = 1; j < 32; ++j) s.push_back(a + w * j / 32.0);
  } else {
    const double scale = std::max(1.0, std::abs(a));
    for (int k = -52; k <= 64; ++k) s.push_back(a + scale * std::ldexp(1.0, k));
  }
  if (a == 0.0) s.push_back(0.0);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  s.erase(std::remove_if(s.begin(), s.end(),
                         [&](double m) { return m < a || (std::isfinite(b) && m >= b) ||
                                                (m == a && a != 0.0); }),
          s.end());
  return s;
}

}  // namespace

Vec HalfSpace::project(const Vec& v) const {
  const double viol = a.dot(v) - b;
  if (viol <= 0.0) return v;
  const double nrm2 = a.squaredNorm();
  if (nrm2 == 0.0) return v;  // 0 <= b with b < 0 is empty; leave to caller
  return v - (viol / nrm2) * a;
}

SocConstraint::SocConstraint(Mat D, Vec d, Vec e, double f)
    : D_(std::move(D)), d_(std::move(d)), e_(std::move(e)), f_(f) {
  require(D_.rows() == d_.size(), "soc: D rows must match d");
  require(D_.cols() == e_.size(), "soc: D cols must match e");

  const Mat Q = D_.transpose() * D_ - e_ * e_.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(Q);
  basis_ = es.eigenvectors();
  eigvals_ = es.eigenvalues();
  const Vec q = D_.transpose() * d_ - f_ * e_;
  q_eig_ = basis_.transpose() * q;
  e_eig_ = basis_.transpose() * e_;
  kappa_ = d_.squaredNorm() - f_ * f_;

  Mat B(D_.rows() + 1, D_.cols());
  B.topRows(D_.rows()) = D_;
  B.bottomRows(1) = e_.transpose();
  apex_rhs_.resize(d_.size() + 1);
  apex_rhs_.head(d_.size()) = d_;
  apex_rhs_(d_.size()) = f_;
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(B);
  apex_map_ = cod.pseudoInverse();
  apex_point_ = -(apex_map_ * apex_rhs_);
  const double res = (B * apex_point_ + apex_rhs_).norm();
  apex_consistent_ = res <= 1e-10 * (1.0 + apex_rhs_.norm());
}

double SocConstraint::violation(const Vec& x) const {
  return (D_ * x + d_).norm() - (e_.dot(x) + f_);
}

SocConstraint SocConstraint::extended(Eigen::Index extra) const {
  return SocConstraint(append_zero_cols(D_, extra), d_, append_zeros(e_, extra), f_);
}

Vec SocConstraint::project(const Vec& v) const {
  if (violation(v) <= 0.0) return v;

  const Vec c = basis_.transpose() * v;
  const Eigen::Index n = c.size();
  Vec xt(n);
  auto point = [&](double mu) {
    for (Eigen::Index i = 0; i < n; ++i)
      xt(i) = (c(i) - mu * q_eig_(i)) / (1.0 + mu * eigvals_(i));
  };
  auto phi = [&](double mu) {
    point(mu);
    double val = kappa_;
    for (Eigen::Index i = 0; i < n; ++i)
      val += eigvals_(i) * xt(i) * xt(i) + 2.0 * q_eig_(i) * xt(i);
    return val;
  };
  auto nappe = [&](double mu) {
    point(mu);
    return e_eig_.dot(xt) + f_;
  };

  const double scale = 1.0 + v.norm() + d_.norm() + std::abs(f_);
  const double eig_tol = 1e-14 * std::max(1.0, eigvals_.cwiseAbs().maxCoeff());
  std::vector<double> poles;
  for (Eigen::Index i = 0; i < n; ++i)
    if (eigvals_(i) < -eig_tol) poles.push_back(-1.0 / eigvals_(i));
  std::sort(poles.begin(), poles.end());

  std::vector<std::pair<double, double>> intervals;
  double lo = 0.0;
  for (double p : poles) {
    intervals.emplace_back(lo, p);
    lo = p;
  }
  intervals.emplace_back(lo, kInf);

  for (auto [a, b] : intervals) {
    const auto samples = interval_samples(a, b);
    if (samples.size() < 2) continue;
    double m0 = samples[0];
    double f0 = phi(m0);
    for (std::size_t j = 1; j < samples.size(); ++j) {
      const double m1 = samples[j];
      const double f1 = phi(m1);
      if (std::isfinite(f0) && std::isfinite(f1) && f0 * f1 <= 0.0) {
        double l = m0, r = m1, fl = f0;
        for (int it = 0; it < 200 && r - l > 1e-17 * std::max(1.0, r); ++it) {
          const double mid = 0.5 * (l + r);
          const double fm = phi(mid);
          if (fm == 0.0) {
            l = r = mid;
            break;
          }
          if ((fm > 0.0) == (fl > 0.0)) {
            l = mid;
            fl = fm;
          } else {
            r = mid;
          }
        }
        const double root = 0.5 * (l + r);
        if (nappe(root) >= -1e-12 * scale) {
          point(root);
          Vec x = basis_ * xt;
          if (violation(x) <= 1e-9 * scale) return x;
        }
      }
      m0 = m1;
      f0 = f1;
    }
  }

  // Hard case: the component of v along a negative eigenvector vanishes, the
  // pole disappears and the multiplier sits exactly at mu = -1/lambda_j with
  // that coordinate left free. Pick it so that phi = 0 on the upper nappe.
  {
    Vec best;
    double best_dist = kInf;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (eigvals_(j) >= -eig_tol) continue;
      const double mu = -1.0 / eigvals_(j);
      if (std::abs(c(j) - mu * q_eig_(j)) > 1e-10 * scale) continue;
      point(mu);
      double rest = kappa_;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i == j) continue;
        rest += eigvals_(i) * xt(i) * xt(i) + 2.0 * q_eig_(i) * xt(i);
      }
      const double a = eigvals_(j), b = 2.0 * q_eig_(j);
      const double disc = b * b - 4.0 * a * rest;
      if (disc < 0.0) continue;
      for (double sgn : {-1.0, 1.0}) {
        xt(j) = (-b + sgn * std::sqrt(disc)) / (2.0 * a);
        if (e_eig_.dot(xt) + f_ < -1e-12 * scale) continue;
        Vec x = basis_ * xt;
        const double dist = (x - v).norm();
        if (violation(x) <= 1e-9 * scale && dist < best_dist) {
          best_dist = dist;
          best = std::move(x);
        }
      }
    }
    if (best.size() > 0) return best;
  }

  if (apex_consistent_) {
    // Projection onto the affine apex set {Dx + d = 0, e^T x + f = 0}.
    Mat B(D_.rows() + 1, D_.cols());
    B.topRows(D_.rows()) = D_;
    B.bottomRows(1) = e_.transpose();
    return v - apex_map_ * (B * v + apex_rhs_);
  }
  // Roundoff-level violation with no sign change in phi.
  if (violation(v) <= 1e-12 * scale) return v;
  throw NonConvergence("soc projection: no boundary point found (empty member?)", v);
}

EllipsoidConstraint::EllipsoidConstraint(Vec center, Mat shape, double radius)
    : center_(std::move(center)), shape_(std::move(shape)), radius_(radius) {
  require(shape_.rows() == shape_.cols() && shape_.rows() == center_.size(),
          "ellipsoid: shape must be square and match center");
  require(radius_ > 0.0, "ellipsoid: radius must be positive");
  require((shape_ - shape_.transpose()).norm() <= 1e-10 * (1.0 + shape_.norm()),
          "ellipsoid: shape must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(shape_);
  basis_ = es.eigenvectors();
  eigvals_ = es.eigenvalues();
  require(eigvals_.size() == 0 || eigvals_.minCoeff() >= -1e-10 * shape_.norm(),
          "ellipsoid: shape must be positive semidefinite");
  eigvals_ = eigvals_.cwiseMax(0.0);
}

double EllipsoidConstraint::violation(const Vec& x) const {
  const Vec dx = x - center_;
  return dx.dot(shape_ * dx) - radius_;
}

EllipsoidConstraint EllipsoidConstraint::extended(Eigen::Index extra) const {
  Mat S = Mat::Zero(shape_.rows() + extra, shape_.cols() + extra);
  S.topLeftCorner(shape_.rows(), shape_.cols()) = shape_;
  return EllipsoidConstraint(append_zeros(center_, extra), S, radius_);
}

Vec EllipsoidConstraint::project(const Vec& v) const {
  const Vec c = basis_.transpose() * (v - center_);
  auto value = [&](double mu, double* deriv) {
    double val = -radius_, der = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      const double den = 1.0 + mu * eigvals_(i);
      const double t = eigvals_(i) * c(i) * c(i) / (den * den);
      val += t;
      der -= 2.0 * eigvals_(i) * t / den;
    }
    if (deriv) *deriv = der;
    return val;
  };
  if (value(0.0, nullptr) <= 0.0) return v;

  // psi is convex and decreasing on mu >= 0, so Newton from the left is
  // monotone.
  double mu = 0.0;
  for (int it = 0; it < 500; ++it) {
    double der = 0.0;
    const double val = value(mu, &der);
    if (val <= 1e-15 * radius_ || der == 0.0) break;
    const double step = -val / der;
    mu += step;
    if (step <= 1e-16 * std::max(1.0, mu)) break;
  }
  Vec xt(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) xt(i) = c(i) / (1.0 + mu * eigvals_(i));
  return center_ + basis_ * xt;
}

ConvexRegion::ConvexRegion(Eigen::Index n)
    : lower_(Vec::Constant(n, -kInf)), upper_(Vec::Constant(n, kInf)) {}

ConvexRegion::ConvexRegion(Vec lower, Vec upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  require(lower_.size() == upper_.size(), "region: bound sizes differ");
  require((lower_.array() <= upper_.array()).all(), "region: lower > upper");
}

ConvexRegion& ConvexRegion::add_affine(Vec a, double b) {
  require(a.size() == dim(), "region: affine row has wrong size");
  affine_.push_back(HalfSpace{std::move(a), b});
  return *this;
}

ConvexRegion& ConvexRegion::add_soc(SocConstraint soc) {
  require(soc.dim() == dim(), "region: soc has wrong size");
  socs_.push_back(std::move(soc));
  return *this;
}

ConvexRegion& ConvexRegion::add_ellipsoid(EllipsoidConstraint ell) {
  require(ell.center().size() == dim(), "region: ellipsoid has wrong size");
  ellipsoids_.push_back(std::move(ell));
  return *this;
}

bool ConvexRegion::has_finite_box() const {
  return (lower_.array() > -kInf).any() || (upper_.array() < kInf).any();
}

std::size_t ConvexRegion::member_count() const {
  return (has_finite_box() ? 1 : 0) + affine_.size() + socs_.size() + ellipsoids_.size();
}

double ConvexRegion::max_violation(const Vec& x) const {
  double worst = -kInf;
  for (Eigen::Index i = 0; i < dim(); ++i) {
    if (std::isfinite(lower_(i))) worst = std::max(worst, lower_(i) - x(i));
    if (std::isfinite(upper_(i))) worst = std::max(worst, x(i) - upper_(i));
  }
  for (const auto& h : affine_) worst = std::max(worst, h.violation(x));
  for (const auto& s : socs_) worst = std::max(worst, s.violation(x));
  for (const auto& e : ellipsoids_) worst = std::max(worst, e.violation(x));
  return worst == -kInf ? 0.0 : worst;
}

ConvexRegion ConvexRegion::extended(Eigen::Index extra) const {
  Vec lo(dim() + extra), up(dim() + extra);
  lo << lower_, Vec::Constant(extra, -kInf);
  up << upper_, Vec::Constant(extra, kInf);
  ConvexRegion out(lo, up);
  for (const auto& h : affine_) out.add_affine(append_zeros(h.a, extra), h.b);
  for (const auto& s : socs_) out.add_soc(s.extended(extra));
  for (const auto& e : ellipsoids_) out.add_ellipsoid(e.extended(extra));
  return out;
}

Vec clamp_box(const Vec& lower, const Vec& upper, const Vec& v) {
  return v.cwiseMax(lower).cwiseMin(upper);
}

Vec project_region(const ConvexRegion& region, const Vec& v, double tol, int max_iter) {
  require(v.size() == region.dim(), "project_region: dimension mismatch");

  std::vector<std::function<Vec(const Vec&)>> members;
  if (region.has_finite_box())
    members.emplace_back(
        [&](const Vec& p) { return clamp_box(region.lower(), region.upper(), p); });
  for (const auto& h : region.affine())
    members.emplace_back([&h](const Vec& p) { return h.project(p); });
  for (const auto& s : region.socs())
    members.emplace_back([&s](const Vec& p) { return s.project(p); });
  for (const auto& e : region.ellipsoids())
    members.emplace_back([&e](const Vec& p) { return e.project(p); });

  if (members.empty()) return v;
  if (members.size() == 1) return members.front()(v);

  Vec x = v;
  std::vector<Vec> incr(members.size(), Vec::Zero(v.size()));
  for (int it = 0; it < max_iter; ++it) {
    const Vec prev = x;
    for (std::size_t i = 0; i < members.size(); ++i) {
      const Vec shifted = x + incr[i];
      Vec y = members[i](shifted);
      incr[i] = shifted - y;
      x = std::move(y);
    }
    if ((x - prev).norm() <= tol && region.max_violation(x) <= 1e-6 * (1.0 + x.norm()))
      return x;
  }
  throw NonConvergence("project_region: Dykstra iteration cap exceeded", x);
}

}  // namespace scp
