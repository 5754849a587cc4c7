#ifndef SFLOW_COMMON_HPP
#define SFLOW_COMMON_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace sflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Malformed or inconsistent input data (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite or degenerate numerical state (CLI exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsumexp(const VectorXd &v) {
  double m = v.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((v.array() - m).exp().sum());
}

inline VectorXd log_softmax(const VectorXd &logits) {
  return logits.array() - logsumexp(logits);
}

inline VectorXd softmax(const VectorXd &logits) {
  VectorXd s = (logits.array() - logits.maxCoeff()).exp();
  return s / s.sum();
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without overflow for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline void require_finite(const MatrixXd &m, const std::string &what) {
  if (!m.allFinite()) throw NumericalError("non-finite values in " + what);
}

inline void require_finite(double v, const std::string &what) {
  if (!std::isfinite(v)) throw NumericalError("non-finite value in " + what);
}

using Rng = std::mt19937_64;

inline MatrixXd gaussian_matrix(int rows, int cols, double stddev, Rng &rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline MatrixXd uniform_matrix(int rows, int cols, double halfwidth, Rng &rng) {
  std::uniform_real_distribution<double> dist(-halfwidth, halfwidth);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace sflow

#endif  // SFLOW_COMMON_HPP
