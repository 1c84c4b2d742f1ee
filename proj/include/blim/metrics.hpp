#pragma once

// Forecast scores: correlation skill, lagged-difference distribution functions,
// CDF residuals and calibration error.

#include <utility>
#include <vector>

#include "blim/forecast.hpp"

namespace blim {

/// Correlations above this count as skillful in reports.
inline constexpr double kSkillThreshold = 0.6;

double correlation(const Vector& a, const Vector& b);

/// Empirical distribution F(t) = #{x < t} / n, stored as sorted samples.
class Edf {
 public:
  Edf() = default;
  explicit Edf(std::vector<double> samples);

  double operator()(double t) const;
  Vector operator()(const Vector& grid) const;

  std::size_t size() const { return samples_.size(); }
  const std::vector<double>& samples() const { return samples_; }
  /// Sorted unique sample values.
  std::vector<double> support() const;
  /// Linear-interpolation percentile, q in [0, 1].
  double quantile(double q) const;

 private:
  std::vector<double> samples_;
};

/// A distribution function tabulated on a grid.
struct Cdf {
  Vector grid;
  Vector values;
};

struct LaggedEdf {
  std::vector<Edf> per_dim;
  Edf pooled;
};

/// Distribution of y_n - y_{n-tau} over the T - tau pairs.
LaggedEdf edf(const TimeSeries& series, Eigen::Index tau_steps);

/// Member minus initial state, (n_init * n_members) x m.
Matrix forecast_differences(const ForecastEnsemble& ens, const TimeSeries& data, Eigen::Index lead);
/// EDF of member minus initial state pooled over members, inits and dimensions.
Edf forecast_cdf(const ForecastEnsemble& ens, const TimeSeries& data, Eigen::Index lead);

/// Union of both supports restricted to the observed [lo, hi] quantile range.
Vector common_grid(const Edf& forecast, const Edf& observed, double lo = 0.01, double hi = 0.99);

/// (F_obs(t), F_fcst(t) - F_obs(t)) at each grid point.
std::vector<std::pair<double, double>> cdf_residual(const Edf& forecast, const Edf& observed,
                                                    const Vector& grid);

/// ||F_fcst - F_obs||_2 / ||F_obs||_2 on a shared grid.
double calibration_error(const Cdf& forecast, const Cdf& observed);
double calibration_error(const Edf& forecast, const Edf& observed);

}  // namespace blim
