#pragma once

// Conditional Gaussian likelihood of lag-tau transitions and its closed-form
// maximizer.

#include <optional>
#include <string>

#include "blim/io.hpp"
#include "blim/sde.hpp"

namespace blim {

/// Lag sums over the T - tau transition pairs (y_n, y_{n+tau}).
struct LagStatistics {
  Eigen::Index tau_steps = 0;
  Eigen::Index count = 0;
  Matrix s00;  // sum y_n y_n^T
  Matrix s10;  // sum y_{n+tau} y_n^T
  Matrix s11;  // sum y_{n+tau} y_{n+tau}^T

  static LagStatistics from_series(const TimeSeries& series, Eigen::Index tau_steps);

  Eigen::Index dim() const { return s00.rows(); }

  /// sum (y_{n+tau} - G y_n)(y_{n+tau} - G y_n)^T
  Matrix residual_scatter(const Matrix& g) const;
};

double log_likelihood(const LagStatistics& stats, const Matrix& g, const Matrix& sigma);
double log_likelihood(const TimeSeries& series, const Matrix& g, const Matrix& sigma,
                      Eigen::Index tau_steps);

struct LikelihoodGradient {
  Matrix d_propagator;  // d logL / dG
  Matrix d_increment;   // d logL / dSigma, symmetric; pair with symmetric directions
  double value = 0.0;
};

LikelihoodGradient gradient_log_likelihood(const LagStatistics& stats, const Matrix& g,
                                           const Matrix& sigma);
LikelihoodGradient gradient_log_likelihood(const TimeSeries& series, const Matrix& g,
                                           const Matrix& sigma, Eigen::Index tau_steps);

enum class QRecovery {
  /// Lambda solves Lambda - G Lambda G^T = Sigma-hat (model-implied).
  stationary_fdr,
  /// Lambda is the sample covariance of the whole series.
  sample_covariance,
};

struct MleOptions {
  QRecovery q_recovery = QRecovery::stationary_fdr;
};

struct MleResult {
  Eigen::Index tau_steps = 1;
  double tau = 1.0;  // tau_steps * dt
  Matrix propagator;
  Matrix increment;
  std::optional<Matrix> drift;
  std::optional<Matrix> noise;
  std::string drift_undefined_reason;
  std::string noise_undefined_reason;
  double log_likelihood_at_max = 0.0;
};

/// G-hat from the lag regression, Sigma-hat from residuals with divisor
/// (T - tau - 1), B-hat = logm(G-hat)/tau when the principal log exists and
/// Q-hat from the fluctuation-dissipation relation.
MleResult fit_mle(const TimeSeries& series, Eigen::Index tau_steps, const MleOptions& options = {});

io::Json mle_to_json(const MleResult& result);
MleResult mle_from_json(const io::Json& doc);

/// Sample covariance with divisor (count - 1).
Matrix sample_covariance(const Matrix& rows);

}  // namespace blim
