#include "blim/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "blim/errors.hpp"

namespace blim {

double correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::dimension, "correlation: length mismatch");
  if (a.size() < 2) throw Error(ErrorKind::domain, "correlation: needs at least two values");
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double na = da.norm(), nb = db.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorKind::degenerate, "correlation: zero variance");
  return std::clamp(da.dot(db) / (na * nb), -1.0, 1.0);
}

Edf::Edf(std::vector<double> samples) : samples_(std::move(samples)) {
  for (double x : samples_) {
    if (std::isnan(x)) throw Error(ErrorKind::domain, "edf: NaN sample");
  }
  std::sort(samples_.begin(), samples_.end());
}

double Edf::operator()(double t) const {
  if (samples_.empty()) throw Error(ErrorKind::domain, "edf: no samples");
  const auto below = std::lower_bound(samples_.begin(), samples_.end(), t) - samples_.begin();
  return static_cast<double>(below) / static_cast<double>(samples_.size());
}

Vector Edf::operator()(const Vector& grid) const {
  Vector out(grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) out(i) = (*this)(grid(i));
  return out;
}

std::vector<double> Edf::support() const {
  std::vector<double> s = samples_;
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

double Edf::quantile(double q) const {
  if (samples_.empty()) throw Error(ErrorKind::domain, "edf: no samples");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::domain, "edf: quantile level outside [0, 1]");
  const double pos = q * static_cast<double>(samples_.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples_.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return samples_[lo] + w * (samples_[hi] - samples_[lo]);
}

LaggedEdf edf(const TimeSeries& series, Eigen::Index tau_steps) {
  const Eigen::Index t_len = series.length(), m = series.dim();
  if (tau_steps < 1) throw Error(ErrorKind::config, "edf: lag must be at least 1");
  if (t_len <= tau_steps) throw Error(ErrorKind::domain, "edf: series not longer than the lag");
  LaggedEdf out;
  std::vector<double> all;
  all.reserve(static_cast<std::size_t>((t_len - tau_steps) * m));
  for (Eigen::Index d = 0; d < m; ++d) {
    std::vector<double> diffs;
    diffs.reserve(static_cast<std::size_t>(t_len - tau_steps));
    for (Eigen::Index n = tau_steps; n < t_len; ++n) {
      diffs.push_back(series.values(n, d) - series.values(n - tau_steps, d));
    }
    all.insert(all.end(), diffs.begin(), diffs.end());
    out.per_dim.emplace_back(std::move(diffs));
  }
  out.pooled = Edf(std::move(all));
  return out;
}

Matrix forecast_differences(const ForecastEnsemble& ens, const TimeSeries& data, Eigen::Index lead) {
  if (ens.n_init() == 0 || ens.n_members == 0) throw Error(ErrorKind::domain, "forecast_cdf: empty ensemble");
  if (data.dim() != ens.dim()) throw Error(ErrorKind::dimension, "forecast_cdf: data dimension differs");
  Matrix out(ens.n_init() * ens.n_members, ens.dim());
  for (Eigen::Index i = 0; i < ens.n_init(); ++i) {
    const Eigen::Index idx = ens.init_index[static_cast<std::size_t>(i)];
    if (idx < 0 || idx >= data.length()) throw Error(ErrorKind::domain, "forecast_cdf: init outside the data");
    out.middleRows(i * ens.n_members, ens.n_members) =
        ens.at(i, lead).rowwise() - data.values.row(idx);
  }
  return out;
}

Edf forecast_cdf(const ForecastEnsemble& ens, const TimeSeries& data, Eigen::Index lead) {
  const Matrix d = forecast_differences(ens, data, lead);
  return Edf(std::vector<double>(d.data(), d.data() + d.size()));
}

Vector common_grid(const Edf& forecast, const Edf& observed, double lo, double hi) {
  const double a = observed.quantile(lo), b = observed.quantile(hi);
  std::vector<double> pts;
  for (const Edf* e : {&forecast, &observed}) {
    for (double x : e->support()) {
      if (x >= a && x <= b) pts.push_back(x);
    }
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.empty()) throw Error(ErrorKind::domain, "common_grid: no support points in range");
  return Eigen::Map<Vector>(pts.data(), static_cast<Eigen::Index>(pts.size()));
}

std::vector<std::pair<double, double>> cdf_residual(const Edf& forecast, const Edf& observed,
                                                    const Vector& grid) {
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(grid.size()));
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double fo = observed(grid(i));
    out.emplace_back(fo, forecast(grid(i)) - fo);
  }
  return out;
}

double calibration_error(const Cdf& forecast, const Cdf& observed) {
  if (forecast.grid.size() != observed.grid.size() || forecast.values.size() != observed.values.size() ||
      forecast.grid.size() != forecast.values.size() || forecast.grid != observed.grid) {
    throw Error(ErrorKind::dimension, "calibration_error: grids differ");
  }
  const double denom = observed.values.norm();
  if (!(denom > 0.0)) throw Error(ErrorKind::degenerate, "calibration_error: observed CDF is zero on the grid");
  return (forecast.values - observed.values).norm() / denom;
}

double calibration_error(const Edf& forecast, const Edf& observed) {
  const Vector grid = common_grid(forecast, observed);
  return calibration_error(Cdf{grid, forecast(grid)}, Cdf{grid, observed(grid)});
}

}  // namespace blim
