#include "blim/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace blim {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_tau(Eigen::Index tau_steps, Eigen::Index length) {
  if (tau_steps < 1 || tau_steps >= length) {
    std::ostringstream os;
    os << "tau_steps = " << tau_steps << " must satisfy 1 <= tau < T = " << length;
    throw Error(ErrorKind::domain, os.str());
  }
}

Matrix require_chol(const Matrix& sigma, const char* who) {
  auto l = try_cholesky(sigma);
  if (!l) throw Error(ErrorKind::domain, std::string(who) + ": Sigma is not SPD");
  return *l;
}

}  // namespace

LagStatistics LagStatistics::from_series(const TimeSeries& series, Eigen::Index tau_steps) {
  check_tau(tau_steps, series.length());
  LagStatistics s;
  s.tau_steps = tau_steps;
  s.count = series.length() - tau_steps;
  const auto head = series.values.topRows(s.count);
  const auto tail = series.values.bottomRows(s.count);
  s.s00 = head.transpose() * head;
  s.s10 = tail.transpose() * head;
  s.s11 = tail.transpose() * tail;
  return s;
}

Matrix LagStatistics::residual_scatter(const Matrix& g) const {
  const Matrix cross = g * s10.transpose();
  return symmetrize(s11 - cross - cross.transpose() + g * s00 * g.transpose());
}

double log_likelihood(const LagStatistics& stats, const Matrix& g, const Matrix& sigma) {
  const Matrix l = require_chol(sigma, "log_likelihood");
  const auto m = static_cast<double>(stats.dim());
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const Matrix r = stats.residual_scatter(g);
  const Matrix w = l.triangularView<Eigen::Lower>().solve(r);
  const Matrix quad = l.triangularView<Eigen::Lower>().solve(w.transpose());
  const double n = static_cast<double>(stats.count);
  return -0.5 * n * (m * kLog2Pi + log_det) - 0.5 * quad.trace();
}

double log_likelihood(const TimeSeries& series, const Matrix& g, const Matrix& sigma,
                      Eigen::Index tau_steps) {
  return log_likelihood(LagStatistics::from_series(series, tau_steps), g, sigma);
}

LikelihoodGradient gradient_log_likelihood(const LagStatistics& stats, const Matrix& g,
                                           const Matrix& sigma) {
  const Matrix l = require_chol(sigma, "gradient_log_likelihood");
  const Eigen::Index m = stats.dim();
  const Matrix sigma_inv = Eigen::LLT<Matrix>(sigma).solve(Matrix::Identity(m, m));
  const Matrix r = stats.residual_scatter(g);
  const double n = static_cast<double>(stats.count);
  LikelihoodGradient out;
  out.d_propagator = sigma_inv * (stats.s10 - g * stats.s00);
  out.d_increment = symmetrize(-0.5 * n * sigma_inv + 0.5 * sigma_inv * r * sigma_inv);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  out.value = -0.5 * n * (static_cast<double>(m) * kLog2Pi + log_det) -
              0.5 * (sigma_inv * r).trace();
  return out;
}

LikelihoodGradient gradient_log_likelihood(const TimeSeries& series, const Matrix& g,
                                           const Matrix& sigma, Eigen::Index tau_steps) {
  return gradient_log_likelihood(LagStatistics::from_series(series, tau_steps), g, sigma);
}

Matrix sample_covariance(const Matrix& rows) {
  if (rows.rows() < 2) throw Error(ErrorKind::domain, "sample_covariance: need >= 2 rows");
  const Vector mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - mean.transpose();
  return symmetrize(centered.transpose() * centered / static_cast<double>(rows.rows() - 1));
}

MleResult fit_mle(const TimeSeries& series, Eigen::Index tau_steps, const MleOptions& options) {
  series.validate();
  const auto stats = LagStatistics::from_series(series, tau_steps);
  const Eigen::Index m = series.dim();
  if (stats.count < m + 1) {
    std::ostringstream os;
    os << "fit_mle: T - tau = " << stats.count << " pairs cannot identify m = " << m;
    throw Error(ErrorKind::rank, os.str());
  }
  Eigen::LDLT<Matrix> gram(stats.s00);
  const Vector d = gram.vectorD();
  if (gram.info() != Eigen::Success || !(d.minCoeff() > 1e-13 * d.cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::rank, "fit_mle: lag Gram matrix is singular");
  }

  MleResult out;
  out.tau_steps = tau_steps;
  out.tau = static_cast<double>(tau_steps) * series.dt;
  // G = S10 S00^{-1}  <=>  S00 G^T = S10^T
  out.propagator = gram.solve(stats.s10.transpose()).transpose();
  out.increment = stats.residual_scatter(out.propagator) / static_cast<double>(stats.count - 1);

  if (auto l = try_cholesky(out.increment)) {
    out.log_likelihood_at_max = log_likelihood(stats, out.propagator, out.increment);
  } else {
    out.log_likelihood_at_max = std::numeric_limits<double>::quiet_NaN();
  }

  try {
    out.drift = logm_principal(out.propagator) / out.tau;
  } catch (const Error& e) {
    out.drift_undefined_reason = e.what();
  }
  if (!out.drift) {
    out.noise_undefined_reason = "drift undefined: " + out.drift_undefined_reason;
    return out;
  }
  try {
    Matrix lambda;
    if (options.q_recovery == QRecovery::stationary_fdr) {
      lambda = discrete_lyapunov_solve(out.propagator, out.increment);
    } else {
      lambda = sample_covariance(series.values);
    }
    const Matrix bl = *out.drift * lambda;
    out.noise = symmetrize(-(bl + bl.transpose()));
  } catch (const Error& e) {
    out.noise_undefined_reason = e.what();
  }
  return out;
}

io::Json mle_to_json(const MleResult& r) {
  io::Json doc;
  doc["kind"] = "mle";
  doc["tau_steps"] = r.tau_steps;
  doc["tau"] = r.tau;
  doc["G_hat"] = io::matrix_to_json(r.propagator);
  doc["Sigma_hat"] = io::matrix_to_json(r.increment);
  if (r.drift) {
    doc["B_hat"] = io::matrix_to_json(*r.drift);
  } else {
    doc["B_hat"] = nullptr;
    doc["B_hat_reason"] = r.drift_undefined_reason;
  }
  if (r.noise) {
    doc["Q_hat"] = io::matrix_to_json(*r.noise);
  } else {
    doc["Q_hat"] = nullptr;
    doc["Q_hat_reason"] = r.noise_undefined_reason;
  }
  if (std::isfinite(r.log_likelihood_at_max)) {
    doc["log_likelihood_at_max"] = r.log_likelihood_at_max;
  } else {
    doc["log_likelihood_at_max"] = nullptr;
  }
  return doc;
}

MleResult mle_from_json(const io::Json& doc) {
  try {
    MleResult r;
    r.tau_steps = doc.at("tau_steps").get<Eigen::Index>();
    r.tau = doc.at("tau").get<double>();
    r.propagator = io::matrix_from_json(doc.at("G_hat"));
    r.increment = io::matrix_from_json(doc.at("Sigma_hat"));
    if (!doc.at("B_hat").is_null()) {
      r.drift = io::matrix_from_json(doc.at("B_hat"));
    } else {
      r.drift_undefined_reason = doc.value("B_hat_reason", "");
    }
    if (!doc.at("Q_hat").is_null()) {
      r.noise = io::matrix_from_json(doc.at("Q_hat"));
    } else {
      r.noise_undefined_reason = doc.value("Q_hat_reason", "");
    }
    const auto& ll = doc.at("log_likelihood_at_max");
    r.log_likelihood_at_max = ll.is_null() ? std::numeric_limits<double>::quiet_NaN() : ll.get<double>();
    return r;
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::io, std::string("MleResult JSON: ") + e.what());
  }
}

}  // namespace blim
