#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "blim/likelihood.hpp"
#include "blim/sde.hpp"
#include "test_util.hpp"

using namespace blim;
using blim::testing::random_spd;
using blim::testing::random_stable;

namespace {

LimParams scalar(double b, double q) {
  LimParams p;
  p.drift = Matrix::Constant(1, 1, b);
  p.noise = Matrix::Constant(1, 1, q);
  return p;
}

}  // namespace

TEST_CASE("derive: scalar closed form") {
  const DerivedLim d = derive(scalar(-3.0, 0.8), 1.0);
  CHECK(d.propagator(0, 0) == doctest::Approx(std::exp(-3.0)).epsilon(1e-14));
  CHECK(d.stationary(0, 0) == doctest::Approx(0.8 / 6.0).epsilon(1e-14));
  const double sigma = (std::exp(-6.0) - 1.0) * 0.8 / (2.0 * -3.0);
  CHECK(d.increment(0, 0) == doctest::Approx(sigma).epsilon(1e-13));
  CHECK(d.increment(0, 0) == doctest::Approx(0.1330027).epsilon(1e-6));
}

TEST_CASE("derive: long lead approaches the stationary covariance") {
  LimParams p;
  p.drift = -Matrix::Identity(2, 2);
  p.noise = Matrix::Identity(2, 2);
  const DerivedLim d = derive(p, 40.0);
  CHECK((d.increment - 0.5 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("derive: increment covariance symmetric, SPD, Loewner-increasing in tau") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    LimParams p{random_stable(rng, 3), random_spd(rng, 3)};
    Matrix previous = Matrix::Zero(3, 3);
    for (double tau : {1.0, 2.0, 5.0, 10.0}) {
      const DerivedLim d = derive(p, tau);
      CHECK((d.increment - d.increment.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(try_cholesky(d.increment).has_value());
      Eigen::SelfAdjointEigenSolver<Matrix> es(d.increment - previous);
      CHECK(es.eigenvalues().minCoeff() > -1e-12);
      Eigen::SelfAdjointEigenSolver<Matrix> gap(d.stationary - d.increment);
      CHECK(gap.eigenvalues().minCoeff() > -1e-12);
      previous = d.increment;
    }
  }
}

TEST_CASE("derive: increment covariance matches Monte Carlo transitions") {
  std::mt19937_64 rng(32);
  LimParams p{random_stable(rng, 3), random_spd(rng, 3)};
  const DerivedLim d = derive(p, 0.7);
  const Matrix chol = cholesky(d.increment);
  std::normal_distribution<double> normal;
  const int draws = 1000000;
  // One transition from x0 = 0 is a draw of N(0, Sigma).
  Matrix acc = Matrix::Zero(3, 3);
  Vector z(3);
  for (int n = 0; n < draws; ++n) {
    for (int i = 0; i < 3; ++i) z(i) = normal(rng);
    const Vector x = chol * z;
    acc.noalias() += x * x.transpose();
  }
  acc /= draws;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double scale = std::sqrt(d.increment(i, i) * d.increment(j, j));
      CHECK(std::abs(acc(i, j) - d.increment(i, j)) <= 0.02 * scale);
    }
  }
}

TEST_CASE("derive: unstable drift rejected") {
  CHECK_THROWS_AS(derive(scalar(0.5, 1.0), 1.0), Error);
  CHECK_THROWS_AS(derive(scalar(-1.0, 1.0), 0.0), Error);
}

TEST_CASE("simulate_em: deterministic decay limit") {
  const LimParams p = scalar(-1.0, 1e-30);
  const TimeSeries s = simulate_em(p, Vector::Constant(1, 1.0), 1e-4, 10000, 1);
  CHECK(s.length() == 10001);
  CHECK(std::abs(s.values(10000, 0) - std::exp(-1.0)) < 1e-3);
}

TEST_CASE("simulate_em: stationary variance") {
  // A single 10^6-step path has ~1500 effective samples (3.6% relative
  // standard error on the variance), so average five independent paths.
  const LimParams p = scalar(-3.0, 0.8);
  double var = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TimeSeries s = simulate_em(p, draw_stationary(p, seed), 1e-3, 1000000, seed);
    var += sample_covariance(s.values)(0, 0) / 5.0;
  }
  CHECK(std::abs(var - 0.8 / 6.0) / (0.8 / 6.0) < 0.05);
}

TEST_CASE("simulate_em: fixed seed is bitwise reproducible, seeds differ") {
  std::mt19937_64 rng(33);
  LimParams p{random_stable(rng, 2), random_spd(rng, 2)};
  const auto a = simulate_em(p, Vector::Ones(2), 1e-2, 500, 99);
  const auto b = simulate_em(p, Vector::Ones(2), 1e-2, 500, 99);
  const auto c = simulate_em(p, Vector::Ones(2), 1e-2, 500, 100);
  CHECK(std::memcmp(a.values.data(), b.values.data(), sizeof(double) * a.values.size()) == 0);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("simulate_em: divergence reports the step") {
  EmOptions quiet;
  quiet.quiet = true;
  try {
    simulate_em(scalar(-1e6, 1.0), Vector::Ones(1), 1.0, 200, 1, quiet);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("simulate_em: lag regression approaches G as dt shrinks") {
  LimParams p;
  p.drift = Matrix(2, 2);
  p.drift << -1.0, 0.4, -0.3, -2.0;
  p.noise = Matrix::Identity(2, 2);
  const double tau = 0.5;
  const Matrix g = expm(p.drift, tau);
  auto regression_error = [&](double dt) {
    double total = 0.0;
    const auto stride = static_cast<std::int64_t>(std::llround(tau / dt));
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto path = simulate_em(p, Vector::Zero(2), dt, stride * 40000, seed);
      const auto obs = subsample(path, stride);
      const auto fit = fit_mle(obs, 1);
      total += (fit.propagator - g).norm();
    }
    return total;
  };
  // dt = tau/2 carries an O(dt) bias well above sampling noise.
  CHECK(regression_error(0.05) < regression_error(0.25));
}

TEST_CASE("subsample and slice") {
  TimeSeries s;
  s.dt = 1e-3;
  s.values.resize(10, 1);
  for (int i = 0; i < 10; ++i) s.values(i, 0) = i;
  CHECK(subsample(s, 1).values == s.values);
  const auto sub = subsample(s, 3);
  REQUIRE(sub.length() == 4);
  CHECK(sub.values(1, 0) == 3.0);
  CHECK(sub.values(3, 0) == 9.0);
  CHECK(sub.dt == doctest::Approx(3e-3));
  CHECK_THROWS_AS(subsample(s, 10), Error);
  CHECK_THROWS_AS(subsample(s, 0), Error);

  TimeSeries big;
  big.dt = 1e-3;
  big.values = Matrix::Zero(3001, 1);
  CHECK(subsample(big, 1000).dt == doctest::Approx(1.0).epsilon(1e-15));

  const auto mid = slice(s, 2, 5);
  CHECK(mid.length() == 5);
  CHECK(mid.values(0, 0) == 2.0);
  CHECK_THROWS_AS(slice(s, 8, 5), Error);
}

TEST_CASE("series CSV round trips exactly") {
  std::mt19937_64 rng(34);
  TimeSeries s;
  s.dt = 0.1;
  s.values = blim::testing::random_matrix(rng, 20, 3, 1e-3);
  s.values(3, 1) = 1.0 / 3.0;
  const auto path = (std::filesystem::temp_directory_path() / "blim_series_rt.csv").string();
  write_series_csv(s, path);
  const auto back = read_series_csv(path);
  CHECK(back.values == s.values);
  CHECK(back.dt == doctest::Approx(0.1).epsilon(1e-15));
  std::filesystem::remove(path);
}
