#include "doctest.h"

#include <cmath>

#include "blim/posterior.hpp"
#include "test_util.hpp"

using namespace blim;
using blim::testing::fd_gradient;
using blim::testing::random_matrix;
using blim::testing::random_spd;
using blim::testing::random_stable;

namespace {

TimeSeries lim_series(std::uint64_t seed, Eigen::Index m, std::int64_t n, double tau = 1.0) {
  std::mt19937_64 rng(seed);
  LimParams p{random_stable(rng, m), random_spd(rng, m)};
  return simulate_exact(p, draw_stationary(p, seed), tau, n, seed + 1);
}

PriorSpec pair(DriftPrior d, NoisePrior n) {
  PriorSpec s;
  s.drift = d;
  s.noise = n;
  return s;
}

// Random point near a stable drift so most draws are finite.
Vector random_valid_point(const LogPosterior& lp, std::mt19937_64& rng) {
  const Eigen::Index m = lp.layout().m;
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  while (true) {
    Vector v(lp.dim());
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = u(rng);
    const Matrix b = random_stable(rng, m, 0.2);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) v(i * m + j) = b(i, j);
    if (std::isfinite(lp.log_post(v))) return v;
  }
}

}  // namespace

TEST_CASE("log_post: flat prior at the ML point equals the likelihood at (G-hat, Sigma-hat)") {
  const auto s = lim_series(1, 3, 400);
  const auto mle = fit_mle(s, 1);
  REQUIRE(mle.drift.has_value());
  REQUIRE(mle.noise.has_value());
  const LogPosterior lp(s, 1, PriorSpec{});
  const Vector v = pack(lp.layout(), *mle.drift, *mle.noise);
  const double expected = log_likelihood(s, mle.propagator, mle.increment, 1);
  CHECK(std::abs(lp.log_post(v) - expected) <= 1e-8 * std::abs(expected));
}

TEST_CASE("log_post: unstable drift is rejected with -inf and a zero gradient") {
  const auto s = lim_series(2, 2, 100);
  const LogPosterior lp(s, 1, pair(DriftPrior::normal, NoisePrior::lkj));
  Matrix b = -Matrix::Identity(2, 2);
  b(1, 1) = 0.2;
  const Vector v = pack(lp.layout(), b, Matrix::Identity(2, 2));
  const auto e = lp.evaluate(v);
  CHECK(e.value == -std::numeric_limits<double>::infinity());
  CHECK(e.gradient.cwiseAbs().maxCoeff() == 0.0);
  Vector nan_point = v;
  nan_point(0) = std::nan("");
  CHECK(lp.log_post(nan_point) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("grad_log_post: scalar closed-form chain") {
  Matrix y(3, 1);
  y << 1.3, 0.4, -0.2;
  TimeSeries s;
  s.dt = 0.5;
  s.values = y;
  auto stats = LagStatistics::from_series(s, 1);
  const LogPosterior lp(stats, s.dt, PriorSpec{}, Matrix::Identity(1, 1));
  const double b = -1.7, q = 0.6, tau = 0.5;
  const Vector v = pack(lp.layout(), Matrix::Constant(1, 1, b), Matrix::Constant(1, 1, q));
  const double g = std::exp(b * tau);
  const double e2 = std::exp(2 * b * tau);
  const double sig = q * (e2 - 1) / (2 * b);
  double d_g = 0.0, d_sig = 0.0;
  for (int t = 0; t < 2; ++t) {
    const double r = y(t + 1, 0) - g * y(t, 0);
    d_g += r * y(t, 0) / sig;
    d_sig += -0.5 / sig + 0.5 * r * r / (sig * sig);
  }
  const double dsig_db = q * (tau * e2 / b - (e2 - 1) / (2 * b * b));
  const double dsig_dq = (e2 - 1) / (2 * b);
  const Vector grad = lp.grad_log_post(v);
  CHECK(grad(0) == doctest::Approx(d_g * tau * g + d_sig * dsig_db).epsilon(1e-10));
  // log sigma coordinate: Q = sigma^2, dQ/dlog sigma = 2Q.
  CHECK(grad(1) == doctest::Approx(d_sig * dsig_dq * 2 * q).epsilon(1e-10));
}

TEST_CASE("grad_log_post: finite differences across prior pairs") {
  const auto s = lim_series(3, 3, 300);
  std::mt19937_64 rng(71);
  const std::pair<DriftPrior, NoisePrior> pairs[] = {
      {DriftPrior::ml, NoisePrior::ml},           {DriftPrior::normal, NoisePrior::normal},
      {DriftPrior::minnesota, NoisePrior::lkj},   {DriftPrior::minnesota, NoisePrior::horseshoe},
      {DriftPrior::horseshoe, NoisePrior::normal}, {DriftPrior::finnish, NoisePrior::finnish}};
  for (auto [d, n] : pairs) {
    const LogPosterior lp(s, 1, pair(d, n));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Vector v = random_valid_point(lp, rng);
      const Vector g = lp.grad_log_post(v);
      const Vector fd = fd_gradient([&](const Vector& x) { return lp.log_post(x); }, v, 1e-6);
      worst = std::max(worst, (g - fd).norm() / std::max(1.0, g.norm()));
    }
    INFO(pair_label(d, n));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("log_post: scale transform integrates to the prior mass") {
  // m = 1, noise = lkj: half-normal(sigma) with Jacobian sigma on u = log sigma.
  // Integrating the prior over u must give 1; the normal-on-Q family has mass 1/2
  // on Q > 0.
  for (auto [noise, mass] : {std::pair{NoisePrior::lkj, 1.0}, std::pair{NoisePrior::normal, 0.5}}) {
    PriorSpec spec;
    spec.noise = noise;
    spec.scale_family = ScaleFamily::half_normal;
    const ParamLayout layout(1, spec);
    double total = 0.0;
    const double du = 1e-3;
    for (double u = -30.0; u < 5.0; u += du) {
      Vector v(2);
      v << -1.0, u;
      total += std::exp(log_prior(layout, v, {}).value) * du;
    }
    CHECK(total == doctest::Approx(mass).epsilon(1e-4));
  }
}

TEST_CASE("find_map: flat prior started at the ML point stays there") {
  const auto s = lim_series(4, 2, 500);
  const auto mle = fit_mle(s, 1);
  const auto stats = LagStatistics::from_series(s, 1);
  // Full stationarity holds at the divisor-T-tau covariance.
  const Matrix sigma_ml = stats.residual_scatter(mle.propagator) / static_cast<double>(stats.count);
  const Matrix lambda = discrete_lyapunov_solve(mle.propagator, sigma_ml);
  const Matrix bl = *mle.drift * lambda;
  const Matrix q = symmetrize(-(bl + bl.transpose()));
  const LogPosterior lp(s, 1, PriorSpec{});
  const Vector init = pack(lp.layout(), *mle.drift, q);
  const auto res = find_map(lp, init);
  CHECK(res.converged);
  CHECK(res.iterations <= 2);
  CHECK((res.point - init).norm() < 1e-4);
}

TEST_CASE("find_map: ascent, stationarity, and the prior pulls B toward its mean") {
  LimParams truth{Matrix::Constant(1, 1, -3.0), Matrix::Constant(1, 1, 0.8)};
  const auto s = simulate_exact(truth, Vector::Zero(1), 0.05, 300, 5);
  PriorSpec spec;
  spec.drift = DriftPrior::normal;
  spec.drift_mean = -1.0;
  spec.drift_var = 1.0;
  spec.noise = NoisePrior::normal;
  const LogPosterior lp(s, 1, spec);
  const Vector init = lp.initial_point();
  const auto res = find_map(lp, init);
  CHECK(res.converged);
  CHECK(res.log_post >= lp.log_post(init));
  for (std::size_t k = 1; k < res.trace.size(); ++k) CHECK(res.trace[k] >= res.trace[k - 1]);
  CHECK(res.grad_norm <= 1e-6 * (1 + std::abs(res.log_post)));

  // Profile over B at the ML noise: posterior mode lies between the ML mode and -1.
  const LogPosterior flat(s, 1, PriorSpec{});
  const Unpacked u = unpack(lp.layout(), res.point);
  auto profile_mode = [&](const LogPosterior& target) {
    double best = -INFINITY, arg = 0.0;
    for (double b = -30.0; b < -0.01; b += 0.005) {
      const double val = target.log_post(pack(target.layout(), Matrix::Constant(1, 1, b), u.noise));
      if (val > best) {
        best = val;
        arg = b;
      }
    }
    return arg;
  };
  const double ml_mode = profile_mode(flat);
  const double post_mode = profile_mode(lp);
  CHECK(post_mode >= std::min(ml_mode, -1.0));
  CHECK(post_mode <= std::max(ml_mode, -1.0));
  CHECK(post_mode != ml_mode);
}

TEST_CASE("initial_point is finite for hierarchical priors") {
  const auto s = lim_series(6, 4, 200);
  for (auto [d, n] : {std::pair{DriftPrior::minnesota, NoisePrior::lkj},
                      std::pair{DriftPrior::minnesota, NoisePrior::horseshoe},
                      std::pair{DriftPrior::finnish, NoisePrior::normal}}) {
    const LogPosterior lp(s, 1, pair(d, n));
    CHECK(std::isfinite(lp.log_post(lp.initial_point())));
  }
}

TEST_CASE("MAP JSON carries the MleResult fields plus prior and convergence") {
  const auto s = lim_series(7, 2, 200);
  const LogPosterior lp(s, 1, pair(DriftPrior::normal, NoisePrior::lkj));
  const auto res = find_map(lp, lp.initial_point());
  const auto doc = map_to_json(lp, res);
  for (const char* key : {"G_hat", "Sigma_hat", "B_hat", "Q_hat", "tau_steps", "prior", "converged"}) {
    CHECK(doc.contains(key));
  }
  CHECK(doc["prior"]["noise"] == "lkj");
}
