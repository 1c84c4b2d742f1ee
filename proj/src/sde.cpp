#include "blim/sde.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "blim/random.hpp"

namespace blim {

void LimParams::validate() const {
  if (drift.rows() != drift.cols() || drift.rows() == 0) {
    throw Error(ErrorKind::dimension, "LimParams: drift must be square");
  }
  if (noise.rows() != drift.rows() || noise.cols() != drift.cols()) {
    throw Error(ErrorKind::dimension, "LimParams: noise must match drift");
  }
  if (!drift.allFinite() || !noise.allFinite()) {
    throw Error(ErrorKind::domain, "LimParams: non-finite entries");
  }
  const double lead = max_real_eigenvalue(drift);
  if (!(lead < 0.0)) {
    std::ostringstream os;
    os << "LimParams: drift is not stable (max Re eig = " << lead << ")";
    throw Error(ErrorKind::unstable, os.str());
  }
  cholesky(noise);
}

void TimeSeries::validate() const {
  if (values.rows() < 2) throw Error(ErrorKind::domain, "TimeSeries: need T >= 2");
  if (values.cols() < 1) throw Error(ErrorKind::domain, "TimeSeries: need m >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorKind::domain, "TimeSeries: dt must be positive");
  if (!values.allFinite()) throw Error(ErrorKind::domain, "TimeSeries: non-finite values");
}

DerivedLim derive(const LimParams& params, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::domain, "derive: tau must be positive");
  params.validate();
  DerivedLim out;
  out.tau = tau;
  out.propagator = expm(params.drift, tau);
  out.stationary = lyapunov_solve(params.drift, params.noise);
  out.increment = symmetrize(out.stationary -
                             out.propagator * out.stationary * out.propagator.transpose());
  if (!try_cholesky(out.increment)) {
    throw Error(ErrorKind::not_spd,
                "derive: increment covariance is not positive definite");
  }
  return out;
}

TimeSeries simulate_em(const LimParams& params, const Vector& x0, double dt,
                       std::int64_t n_steps, std::uint64_t seed,
                       const EmOptions& options) {
  if (!(dt > 0.0)) throw Error(ErrorKind::domain, "simulate_em: dt must be positive");
  if (n_steps < 0) throw Error(ErrorKind::domain, "simulate_em: n_steps must be >= 0");
  const Eigen::Index m = params.dim();
  if (x0.size() != m) throw Error(ErrorKind::dimension, "simulate_em: x0 has wrong size");
  const Matrix chol_q = cholesky(params.noise);

  if (!options.quiet) {
    Eigen::EigenSolver<Matrix> es(params.drift, false);
    const double spectral = es.eigenvalues().cwiseAbs().maxCoeff();
    if (dt * spectral >= options.warn_threshold) {
      std::cerr << "warning: simulate_em: dt * max|eig(B)| = " << dt * spectral
                << " >= " << options.warn_threshold << "\n";
    }
  }

  TimeSeries out;
  out.dt = dt;
  out.values.resize(n_steps + 1, m);
  out.values.row(0) = x0.transpose();

  Rng rng = make_rng(seed, {0x5de});
  std::normal_distribution<double> normal;
  const Matrix step = Matrix::Identity(m, m) + dt * params.drift;
  const Matrix kick = std::sqrt(dt) * chol_q;
  Vector x = x0;
  Vector z(m);
  for (std::int64_t k = 0; k < n_steps; ++k) {
    for (Eigen::Index i = 0; i < m; ++i) z(i) = normal(rng);
    x = step * x + kick * z;
    if (!x.allFinite()) {
      std::ostringstream os;
      os << "simulate_em: state diverged at step " << k + 1;
      throw Error(ErrorKind::divergence, os.str());
    }
    out.values.row(k + 1) = x.transpose();
  }
  return out;
}

TimeSeries simulate_exact(const LimParams& params, const Vector& x0, double tau,
                          std::int64_t n_obs, std::uint64_t seed) {
  if (n_obs < 1) throw Error(ErrorKind::domain, "simulate_exact: n_obs must be >= 1");
  const DerivedLim d = derive(params, tau);
  const Matrix chol_s = cholesky(d.increment);
  const Eigen::Index m = params.dim();
  TimeSeries out;
  out.dt = tau;
  out.values.resize(n_obs, m);
  Rng rng = make_rng(seed, {0xe8ac});
  std::normal_distribution<double> normal;
  Vector x = x0;
  Vector z(m);
  out.values.row(0) = x.transpose();
  for (std::int64_t n = 1; n < n_obs; ++n) {
    for (Eigen::Index i = 0; i < m; ++i) z(i) = normal(rng);
    x = d.propagator * x + chol_s * z;
    out.values.row(n) = x.transpose();
  }
  return out;
}

Vector draw_stationary(const LimParams& params, std::uint64_t seed) {
  const Matrix lambda = lyapunov_solve(params.drift, params.noise);
  const Matrix l = cholesky(lambda);
  Rng rng = make_rng(seed, {0x57a7});
  std::normal_distribution<double> normal;
  Vector z(params.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return l * z;
}

TimeSeries subsample(const TimeSeries& series, std::int64_t stride) {
  if (stride < 1) throw Error(ErrorKind::domain, "subsample: stride must be >= 1");
  const Eigen::Index t = series.length();
  if (stride >= t && t > 1) {
    std::ostringstream os;
    os << "subsample: stride " << stride << " >= series length " << t
       << " leaves a single row";
    throw Error(ErrorKind::domain, os.str());
  }
  const Eigen::Index count = (t + stride - 1) / stride;
  TimeSeries out;
  out.dt = series.dt * static_cast<double>(stride);
  out.values.resize(count, series.dim());
  for (Eigen::Index i = 0; i < count; ++i) out.values.row(i) = series.values.row(i * stride);
  return out;
}

TimeSeries slice(const TimeSeries& series, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > series.length()) {
    throw Error(ErrorKind::domain, "slice: range outside series");
  }
  TimeSeries out;
  out.dt = series.dt;
  out.values = series.values.middleRows(begin, count);
  return out;
}

}  // namespace blim
