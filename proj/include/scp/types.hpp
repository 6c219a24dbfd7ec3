#pragma once

#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace scp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed inconsistent dimensions or malformed data.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Feature outside the supported subset (e.g. a non-quadratic objective).
class UnsupportedFeature : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a closed-form expression.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative method hit its cap; carries the best iterate found.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, Vec best)
      : Error(what), best_(std::move(best)) {}
  const Vec& best() const { return best_; }

 private:
  Vec best_;
};

/// Model construction failed (e.g. Riccati iteration diverged).
class ModelError : public Error {
 public:
  using Error::Error;
};

/// A configuration is inconsistent or cannot be satisfied.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw UsageError(what);
}

}  // namespace scp
