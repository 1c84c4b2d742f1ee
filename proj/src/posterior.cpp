#include "blim/posterior.hpp"

#include <cmath>
#include <limits>

namespace blim {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix ml_increment(const LagStatistics& stats) {
  Eigen::LDLT<Matrix> gram(stats.s00);
  const Matrix g = gram.solve(stats.s10.transpose()).transpose();
  return stats.residual_scatter(g) / static_cast<double>(stats.count - 1);
}

}  // namespace

LogPosterior::LogPosterior(const TimeSeries& series, Eigen::Index tau_steps,
                           const PriorSpec& prior)
    : LogPosterior(LagStatistics::from_series(series, tau_steps), series.dt, prior, Matrix()) {}

LogPosterior::LogPosterior(LagStatistics stats, double dt, const PriorSpec& prior,
                           Matrix sigma_ref)
    : stats_(std::move(stats)), layout_(stats_.dim(), prior) {
  const Eigen::Index m = stats_.dim();
  if (stats_.count < m + 1) throw Error(ErrorKind::rank, "LogPosterior: too few transition pairs");
  ctx_.tau = static_cast<double>(stats_.tau_steps) * dt;
  Eigen::LDLT<Matrix> gram(stats_.s00);
  if (gram.info() != Eigen::Success) throw Error(ErrorKind::rank, "LogPosterior: singular Gram");
  ml_propagator_ = gram.solve(stats_.s10.transpose()).transpose();
  ml_increment_ = ml_increment(stats_);
  if (sigma_ref.size() == 0) {
    sigma_ref = Matrix::Zero(m, m);
    sigma_ref.diagonal() = ml_increment_.diagonal();
  }
  ctx_.sigma_ref = std::move(sigma_ref);
}

double LogPosterior::log_post(const Vector& v) const { return evaluate(v).value; }

ValueAndGradient LogPosterior::evaluate(const Vector& v) const {
  const Eigen::Index m = layout_.m;
  ValueAndGradient out;
  out.gradient = Vector::Zero(layout_.size());
  out.value = kNegInf;
  if (v.size() != layout_.size()) throw Error(ErrorKind::dimension, "log_post: wrong length");
  if (!v.allFinite()) return out;
  try {
    const Unpacked u = unpack(layout_, v);
    if (!u.noise.allFinite() || !u.drift.allFinite()) return out;
    const LyapunovOperator op(u.drift);
    if (!(op.spectral_abscissa() < 0.0)) return out;
    const Matrix lambda = symmetrize(op.solve(u.noise));
    const Matrix g = expm(u.drift, ctx_.tau);
    const Matrix sigma = symmetrize(lambda - g * lambda * g.transpose());
    if (!lambda.allFinite() || !sigma.allFinite() || !try_cholesky(sigma)) return out;

    const LikelihoodGradient lik = gradient_log_likelihood(stats_, g, sigma);
    const ValueAndGradient prior = log_prior(layout_, v, ctx_);
    if (!std::isfinite(lik.value) || !std::isfinite(prior.value)) return out;

    // Sigma = Lambda - G Lambda G^T
    const Matrix& gs = lik.d_increment;
    const Matrix g_lambda = gs - g.transpose() * gs * g;
    Matrix g_prop = lik.d_propagator - (gs + gs.transpose()) * g * lambda;
    // B Lambda + Lambda B^T = -Q
    const Matrix s = op.solve_adjoint(g_lambda);
    Matrix g_drift = (s + s.transpose()) * lambda;
    // G = expm(B tau)
    g_drift += expm_frechet(u.drift.transpose(), g_prop, ctx_.tau);

    Vector grad = prior.gradient;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) grad(i * m + j) += g_drift(i, j);
    accumulate_noise_gradient(layout_, v, u, s, grad);
    if (!grad.allFinite()) return out;
    out.value = lik.value + prior.value;
    out.gradient = std::move(grad);
  } catch (const Error&) {
    out.value = kNegInf;
    out.gradient.setZero();
  }
  return out;
}

LimParams LogPosterior::params(const Vector& v) const {
  const Unpacked u = unpack(layout_, v);
  return LimParams{u.drift, u.noise};
}

Vector LogPosterior::initial_point() const {
  const Eigen::Index m = layout_.m;
  const Matrix target = 0.5 * Matrix::Identity(m, m);
  Matrix g = ml_propagator_;
  Matrix b;
  for (int attempt = 0; attempt < 200; ++attempt) {
    g = 0.95 * g + 0.05 * target;
    try {
      b = logm_principal(g) / ctx_.tau;
      if (max_real_eigenvalue(b) < 0.0) break;
    } catch (const Error&) {
    }
    b.resize(0, 0);
  }
  if (b.size() == 0) b = std::log(0.5) / ctx_.tau * Matrix::Identity(m, m);

  Matrix q;
  try {
    const Matrix lambda = discrete_lyapunov_solve(g, ml_increment_);
    const Matrix bl = b * lambda;
    q = symmetrize(-(bl + bl.transpose()));
    if (!try_cholesky(q)) q.resize(0, 0);
  } catch (const Error&) {
    q.resize(0, 0);
  }
  if (q.size() == 0) {
    q = symmetrize(ml_increment_ / ctx_.tau);
    if (!try_cholesky(q)) q = Matrix::Identity(m, m) * std::max(1e-8, ml_increment_.trace() / m);
  }
  Vector v = pack(layout_, b, q);
  // A point the posterior rejects (Sigma not SPD at this lag) falls back to a
  // diagonal noise guess.
  if (!std::isfinite(log_post(v))) {
    Matrix diag = Matrix::Zero(m, m);
    diag.diagonal() = q.diagonal();
    v = pack(layout_, b, diag);
  }
  return v;
}

MapResult find_map(const LogPosterior& lp, const Vector& init, const MapOptions& options) {
  const Eigen::Index n = init.size();
  MapResult res;
  ValueAndGradient cur = lp.evaluate(init);
  if (!std::isfinite(cur.value)) {
    throw Error(ErrorKind::domain, "find_map: log posterior is not finite at the initial point");
  }
  Vector x = init;
  Matrix h = Matrix::Identity(n, n);  // inverse Hessian of -log_post
  bool scaled = false;
  int resets = 0;
  auto converged = [&](const ValueAndGradient& e) {
    return e.gradient.norm() <= options.tol * (1.0 + std::abs(e.value));
  };
  res.trace.push_back(cur.value);
  while (res.iterations < options.max_iters && !converged(cur)) {
    ++res.iterations;
    // Minimize f = -log_post: gradient of f is -g.
    Vector dir = h * cur.gradient;
    double slope = cur.gradient.dot(dir);
    if (!(slope > 0.0)) {
      h.setIdentity();
      scaled = false;
      dir = cur.gradient;
      slope = cur.gradient.squaredNorm();
    }
    double step = 1.0;
    if (!scaled) step = std::min(1.0, 1.0 / std::max(1e-300, dir.norm()));
    ValueAndGradient next;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      next = lp.evaluate(x + step * dir);
      if (std::isfinite(next.value) && next.value >= cur.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (resets++ < 2 && scaled) {
        h.setIdentity();
        scaled = false;
        continue;
      }
      break;
    }
    const Vector s = step * dir;
    const Vector y = cur.gradient - next.gradient;  // change in grad f
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h *= sy / y.squaredNorm();
        scaled = true;
      }
      const Vector hy = h * y;
      const double rho = 1.0 / sy;
      h += rho * ((1.0 + rho * y.dot(hy)) * (s * s.transpose()) - (hy * s.transpose()) -
                  (s * hy.transpose()));
    }
    x += s;
    cur = std::move(next);
    res.trace.push_back(cur.value);
  }
  res.point = x;
  res.log_post = cur.value;
  res.grad_norm = cur.gradient.norm();
  res.converged = converged(cur);
  return res;
}

io::Json estimate_to_json(const LogPosterior& lp, const Vector& v, const std::string& kind) {
  const Unpacked u = unpack(lp.layout(), v);
  io::Json doc;
  doc["kind"] = kind;
  doc["tau_steps"] = lp.stats().tau_steps;
  doc["tau"] = lp.tau();
  doc["B_hat"] = io::matrix_to_json(u.drift);
  doc["Q_hat"] = io::matrix_to_json(u.noise);
  try {
    const DerivedLim d = derive(LimParams{u.drift, u.noise}, lp.tau());
    doc["G_hat"] = io::matrix_to_json(d.propagator);
    doc["Sigma_hat"] = io::matrix_to_json(d.increment);
    doc["log_likelihood_at_max"] = log_likelihood(lp.stats(), d.propagator, d.increment);
  } catch (const Error& e) {
    doc["G_hat"] = io::matrix_to_json(expm(u.drift, lp.tau()));
    doc["Sigma_hat"] = nullptr;
    doc["Sigma_hat_reason"] = e.what();
    doc["log_likelihood_at_max"] = nullptr;
  }
  doc["prior"] = prior_to_json(lp.layout().spec);
  doc["parameters"] = io::vector_to_json(v);
  return doc;
}

io::Json map_to_json(const LogPosterior& lp, const MapResult& r) {
  io::Json doc = estimate_to_json(lp, r.point, "map");
  doc["log_posterior"] = r.log_post;
  doc["converged"] = r.converged;
  doc["iterations"] = r.iterations;
  doc["grad_norm"] = r.grad_norm;
  return doc;
}

}  // namespace blim
