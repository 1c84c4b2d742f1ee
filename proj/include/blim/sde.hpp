#pragma once

// Linear SDE  dx = B x dt + dW,  Cov(dW) = Q dt.

#include <cstdint>
#include <string>

#include "blim/linalg.hpp"

namespace blim {

struct LimParams {
  Matrix drift;  // B, units 1/time
  Matrix noise;  // Q, state^2/time

  Eigen::Index dim() const { return drift.rows(); }

  /// Throws unless B is square and Hurwitz and Q is SPD of matching size.
  void validate() const;
};

/// Propagator, increment covariance and stationary covariance at lead tau.
struct DerivedLim {
  double tau = 0.0;
  Matrix propagator;   // G(tau) = expm(B tau)
  Matrix increment;    // Sigma(tau) = Lambda - G Lambda G^T
  Matrix stationary;   // Lambda: B Lambda + Lambda B^T = -Q
};

DerivedLim derive(const LimParams& params, double tau);

/// Regularly sampled observations; row n is y at time n * dt.
struct TimeSeries {
  double dt = 1.0;
  Matrix values;  // T x m

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
  Vector row(Eigen::Index n) const { return values.row(n).transpose(); }

  void validate() const;
};

struct EmOptions {
  /// dt * max|eig(B)| at or above this value triggers a stability warning.
  double warn_threshold = 0.5;
  bool quiet = false;
};

/// Euler-Maruyama path with n_steps + 1 rows (the initial state first):
///   x_{k+1} = x_k + B x_k dt + sqrt(dt) chol(Q) z_k.
/// Throws ErrorKind::divergence naming the step when the state blows up.
TimeSeries simulate_em(const LimParams& params, const Vector& x0, double dt,
                       std::int64_t n_steps, std::uint64_t seed,
                       const EmOptions& options = {});

/// Exact discretization x_{n+1} = G x_n + chol(Sigma) z_n at spacing tau;
/// n_obs rows including x0.
TimeSeries simulate_exact(const LimParams& params, const Vector& x0, double tau,
                          std::int64_t n_obs, std::uint64_t seed);

/// Draw from the stationary law N(0, Lambda).
Vector draw_stationary(const LimParams& params, std::uint64_t seed);

/// Every stride-th row starting at row 0; dt scales by stride.
TimeSeries subsample(const TimeSeries& series, std::int64_t stride);

/// Rows [begin, begin + count).
TimeSeries slice(const TimeSeries& series, Eigen::Index begin, Eigen::Index count);

/// CSV with header `t,x0,x1,...`; values at 17 significant digits.
void write_series_csv(const TimeSeries& series, const std::string& path);
TimeSeries read_series_csv(const std::string& path);

}  // namespace blim
