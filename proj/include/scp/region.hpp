#pragma once

#include <vector>

#include "scp/types.hpp"

namespace scp {

/// Half space a^T x <= b.
struct HalfSpace {
  Vec a;
  double b = 0.0;

  double violation(const Vec& x) const { return a.dot(x) - b; }
  Vec project(const Vec& v) const;
};

/// Second-order cone member ||D x + d|| <= e^T x + f.
///
/// Projection uses the quadric phi(x) = ||Dx+d||^2 - (e^T x + f)^2 written in
/// the eigenbasis of D^T D - e e^T. Any root mu >= 0 of phi(x(mu)) with
/// x(mu) = (I + mu Q)^{-1}(v - mu q) on the upper nappe is the projection;
/// when no such root exists the projection lies on the apex set
/// {Dx + d = 0, e^T x + f = 0}.
class SocConstraint {
 public:
  SocConstraint(Mat D, Vec d, Vec e, double f);

  const Mat& D() const { return D_; }
  const Vec& d() const { return d_; }
  const Vec& e() const { return e_; }
  double f() const { return f_; }
  Eigen::Index dim() const { return D_.cols(); }

  /// ||Dx + d|| - (e^T x + f); nonpositive inside.
  double violation(const Vec& x) const;
  Vec project(const Vec& v) const;
  /// Same member with `extra` trailing variables that it does not involve.
  SocConstraint extended(Eigen::Index extra) const;

 private:
  Mat D_;
  Vec d_;
  Vec e_;
  double f_;

  Mat basis_;
  Vec eigvals_;
  Vec q_eig_;
  Vec e_eig_;
  double kappa_ = 0.0;
  Mat apex_map_;  // pseudo-inverse of [D; e^T]
  Vec apex_rhs_;  // [d; f]
  bool apex_consistent_ = false;
  Vec apex_point_;
};

/// Ellipsoid (x - center)^T S (x - center) <= radius, S symmetric PSD.
class EllipsoidConstraint {
 public:
  EllipsoidConstraint(Vec center, Mat shape, double radius);

  const Vec& center() const { return center_; }
  const Mat& shape() const { return shape_; }
  double radius() const { return radius_; }

  /// (x-w)^T S (x-w) - r; nonpositive inside.
  double violation(const Vec& x) const;
  Vec project(const Vec& v) const;
  EllipsoidConstraint extended(Eigen::Index extra) const;
  /// Eigendecomposition S = V diag(lambda) V^T cached at construction.
  const Mat& eigvecs() const { return basis_; }
  const Vec& eigvals() const { return eigvals_; }

 private:
  Vec center_;
  Mat shape_;
  double radius_;
  Mat basis_;
  Vec eigvals_;
};

/// Omega: box ∩ half spaces ∩ second-order cones ∩ ellipsoids.
class ConvexRegion {
 public:
  ConvexRegion() = default;
  /// Unconstrained region R^n.
  explicit ConvexRegion(Eigen::Index n);
  ConvexRegion(Vec lower, Vec upper);

  Eigen::Index dim() const { return lower_.size(); }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const std::vector<HalfSpace>& affine() const { return affine_; }
  const std::vector<SocConstraint>& socs() const { return socs_; }
  const std::vector<EllipsoidConstraint>& ellipsoids() const { return ellipsoids_; }

  ConvexRegion& add_affine(Vec a, double b);
  ConvexRegion& add_soc(SocConstraint soc);
  ConvexRegion& add_ellipsoid(EllipsoidConstraint ell);

  bool has_finite_box() const;
  std::size_t member_count() const;

  /// Largest signed violation over all members (<= 0 means inside).
  double max_violation(const Vec& x) const;
  /// Append `extra` free variables.
  ConvexRegion extended(Eigen::Index extra) const;

 private:
  Vec lower_;
  Vec upper_;
  std::vector<HalfSpace> affine_;
  std::vector<SocConstraint> socs_;
  std::vector<EllipsoidConstraint> ellipsoids_;
};

Vec clamp_box(const Vec& lower, const Vec& upper, const Vec& v);

/// Euclidean projection onto the region by Dykstra's alternating projections.
/// Throws NonConvergence (carrying the last iterate) after `max_iter` sweeps.
Vec project_region(const ConvexRegion& region, const Vec& v, double tol = 1e-10,
                   int max_iter = 10000);

}  // namespace scp
