#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "blim/linalg.hpp"

namespace blim::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return a;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index m, double jitter = 0.5) {
  const Matrix a = random_matrix(rng, m, m);
  return a * a.transpose() / static_cast<double>(m) + jitter * Matrix::Identity(m, m);
}

/// Stable drift: negative diagonal plus modest coupling, checked Hurwitz.
inline Matrix random_stable(std::mt19937_64& rng, Eigen::Index m, double coupling = 0.3) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  while (true) {
    Matrix b = random_matrix(rng, m, m, coupling);
    for (Eigen::Index i = 0; i < m; ++i) b(i, i) = -u(rng);
    if (max_real_eigenvalue(b) < -0.1) return b;
  }
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

/// Central difference of a scalar function along direction dir.
inline double directional_fd(const std::function<double(const Vector&)>& f, const Vector& x,
                             const Vector& dir, double h) {
  return (f(x + h * dir) - f(x - h * dir)) / (2.0 * h);
}

/// Per-coordinate central-difference gradient.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector e = Vector::Zero(x.size());
    e(i) = 1.0;
    g(i) = directional_fd(f, x, e, h);
  }
  return g;
}

}  // namespace blim::testing
