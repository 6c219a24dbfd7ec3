#pragma once

#include <random>

#include "scp/types.hpp"

namespace scp::testing {

inline Vec random_vec(std::mt19937& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline Mat random_mat(std::mt19937& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

inline Mat random_psd(std::mt19937& rng, Eigen::Index n, Eigen::Index rank) {
  const Mat F = random_mat(rng, rank, n);
  return F.transpose() * F;
}

/// Forward-difference Jacobian used as an independent oracle in tests.
template <typename G>
Mat fd_jacobian(G&& g, const Vec& x, double h = 1e-7) {
  const Vec g0 = g(x);
  Mat J(g0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x;
    const double step = h * (1.0 + std::abs(x(j)));
    xp(j) += step;
    J.col(j) = (g(xp) - g0) / step;
  }
  return J;
}

/// Central differences, accurate to O(h^2).
template <typename G>
Mat cd_jacobian(G&& g, const Vec& x, double h = 1e-6) {
  const Vec g0 = g(x);
  Mat J(g0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    const double step = h * (1.0 + std::abs(x(j)));
    xp(j) += step;
    xm(j) -= step;
    J.col(j) = (g(xp) - g(xm)) / (2.0 * step);
  }
  return J;
}

}  // namespace scp::testing
