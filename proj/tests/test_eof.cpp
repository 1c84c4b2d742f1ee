#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "blim/eof.hpp"
#include "test_util.hpp"

using namespace blim;
using blim::testing::random_matrix;

namespace {

GriddedField plain_field(const Matrix& values) {
  GriddedField f;
  f.values = values;
  f.lat = Vector::Zero(values.cols());
  f.lon = Vector::LinSpaced(values.cols(), 0.0, 350.0);
  f.mask.assign(static_cast<std::size_t>(values.cols()), true);
  return f;
}

TimeSeries series_of(std::initializer_list<double> xs) {
  TimeSeries s;
  s.values.resize(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) s.values(i++, 0) = x;
  return s;
}

}  // namespace

TEST_CASE("synth_field: noiseless field is rank k_true, reproducible by seed") {
  SynthSpec spec;
  spec.n_points = 120;
  spec.length = 300;
  spec.k_true = 6;
  spec.snr = std::numeric_limits<double>::infinity();
  spec.seed = 3;
  const auto f = synth_field(spec);
  const auto fit = fit_eof(f, 6);
  CHECK(fit.basis.explained.sum() >= 0.999);
  const auto again = synth_field(spec);
  CHECK(again.values == f.values);
  spec.seed = 4;
  CHECK((synth_field(spec).values - f.values).norm() > 0.0);
  for (Eigen::Index i = 0; i < f.n_points(); ++i) CHECK(std::abs(f.lat(i)) <= 90.0);
}

TEST_CASE("synth_field: default noise level puts the leading ten modes between 30% and 80%") {
  SynthSpec spec;
  spec.seed = 5;
  const auto f = synth_field(spec);
  const auto fit = fit_eof(f, 10);
  const double frac = fit.basis.explained.sum();
  MESSAGE("leading-10 explained fraction " << frac);
  CHECK(frac > 0.3);
  CHECK(frac < 0.8);
}

TEST_CASE("fit_eof: rank-one field") {
  const Vector u = Vector::LinSpaced(40, -1.0, 2.0).array().sin();
  const Vector v = Vector::LinSpaced(15, 0.5, 3.0);
  const auto fit = fit_eof(plain_field(u * v.transpose()), 1, false);
  CHECK(fit.basis.explained(0) == doctest::Approx(1.0).epsilon(1e-12));
  const Vector p = fit.basis.patterns.row(0).transpose();
  CHECK(std::abs(p.dot(v.normalized())) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fit_eof: completeness, orthogonality, and the covariance-eigen oracle") {
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(rng, 50, 200);
  const auto f = plain_field(x);
  // Centered 50 x 200 data has rank 49.
  const auto full = fit_eof(f, 49, false);
  const auto back = reconstruct(full.basis, full.pcs, f.lat, f.lon);
  CHECK((back.values - x).cwiseAbs().maxCoeff() < 1e-10);
  const TimeSeries proj = project(full.basis, f);
  CHECK((proj.values - full.pcs.values).cwiseAbs().maxCoeff() < 1e-10);

  const Matrix gram = full.basis.patterns * full.basis.patterns.transpose();
  CHECK((gram - Matrix::Identity(49, 49)).cwiseAbs().maxCoeff() < 1e-10);
  const Matrix pcs = full.pcs.values.rowwise() - full.pcs.values.colwise().mean();
  const Matrix cov = pcs.transpose() * pcs;
  const Vector sd = cov.diagonal().cwiseSqrt();
  const Matrix corr = sd.cwiseInverse().asDiagonal() * cov * sd.cwiseInverse().asDiagonal();
  CHECK((corr - Matrix::Identity(49, 49)).cwiseAbs().maxCoeff() < 1e-10);

  const Matrix centered = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.transpose() * centered / 49.0);
  const Vector lam = eig.eigenvalues().reverse();
  const Vector expected = lam.head(49) / lam.sum();
  CHECK((full.basis.explained - expected).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index i = 1; i < 49; ++i) CHECK(full.basis.explained(i) <= full.basis.explained(i - 1));
  CHECK(full.basis.explained.sum() <= 1.0 + 1e-12);

  CHECK_THROWS_AS(fit_eof(f, 50, false), Error);
}

TEST_CASE("fit_eof: area weights and masked points") {
  std::mt19937_64 rng(7);
  GriddedField f = plain_field(random_matrix(rng, 30, 12));
  f.lat = Vector::LinSpaced(12, -75.0, 75.0);
  f.mask[3] = false;
  f.values(5, 3) = std::nan("");
  const auto fit = fit_eof(f, 4, true);
  CHECK(fit.basis.patterns.col(3).norm() == 0.0);
  CHECK(fit.basis.weights(0) == doctest::Approx(std::sqrt(std::cos(75.0 * M_PI / 180.0))));
  const auto all = fit_eof(f, 11, true);
  const auto back = reconstruct(all.basis, all.pcs, f.lat, f.lon);
  CHECK(std::isnan(back.values(0, 3)));
  for (Eigen::Index j = 0; j < 12; ++j) {
    if (j != 3) CHECK((back.values.col(j) - f.values.col(j)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("reconstruct: zero series and a single-mode pulse") {
  std::mt19937_64 rng(8);
  GriddedField f = plain_field(random_matrix(rng, 20, 8));
  f.lat = Vector::LinSpaced(8, -60.0, 60.0);
  const auto fit = fit_eof(f, 3);
  TimeSeries zero;
  zero.values = Matrix::Zero(4, 3);
  const auto means = reconstruct(fit.basis, zero, f.lat, f.lon);
  for (Eigen::Index t = 0; t < 4; ++t) CHECK((means.values.row(t).transpose() - fit.basis.mean).norm() < 1e-14);
  TimeSeries pulse = zero;
  pulse.values(2, 0) = 1.0;
  const auto out = reconstruct(fit.basis, pulse, f.lat, f.lon);
  const Vector expected =
      fit.basis.mean + fit.basis.patterns.row(0).transpose().cwiseQuotient(fit.basis.weights);
  CHECK((out.values.row(2).transpose() - expected).norm() < 1e-14);
  TimeSeries wrong;
  wrong.values = Matrix::Zero(4, 2);
  CHECK_THROWS_AS(reconstruct(fit.basis, wrong, f.lat, f.lon), Error);
}

TEST_CASE("moving_average: partial backward window") {
  const auto s = series_of({1, 2, 3, 4});
  const auto out = moving_average(s, 3);
  CHECK(out.values(0, 0) == 1.0);
  CHECK(out.values(1, 0) == 1.5);
  CHECK(out.values(2, 0) == 2.0);
  CHECK(out.values(3, 0) == 3.0);
  CHECK(moving_average(s, 1).values == s.values);
  const auto flat = series_of({2, 2, 2, 2, 2});
  CHECK(moving_average(flat, 4).values == flat.values);
  TimeSeries shifted = s;
  shifted.values.array() += 7.0;
  CHECK((moving_average(shifted, 3).values.array() - 7.0 - out.values.array()).abs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(moving_average(s, 5), Error);
  CHECK_THROWS_AS(moving_average(s, 0), Error);
}

TEST_CASE("split: contiguous segments") {
  TimeSeries s;
  s.values = Vector::LinSpaced(1800, 0.0, 1799.0);
  const auto parts = split(s, 900, 500);
  CHECK(parts.train.length() == 900);
  CHECK(parts.test.length() == 500);
  CHECK(parts.validation.length() == 400);
  Matrix joined(1800, 1);
  joined << parts.train.values, parts.test.values, parts.validation.values;
  CHECK(joined == s.values);
  CHECK(split(s, 1000, 800).validation.length() == 0);
  CHECK_THROWS_AS(split(s, 1000, 801), Error);
}

TEST_CASE("field and basis files round trip") {
  SynthSpec spec;
  spec.n_points = 30;
  spec.length = 40;
  spec.k_true = 3;
  spec.seed = 9;
  const auto f = synth_field(spec);
  const auto dir = std::filesystem::temp_directory_path() / "blim_eof_test";
  std::filesystem::create_directories(dir);
  const std::string prefix = (dir / "field").string();
  write_field(prefix, f);
  const auto back = read_field(prefix);
  CHECK(back.values == f.values);
  CHECK(back.lat == f.lat);
  CHECK(back.mask == f.mask);
  const auto fit = fit_eof(f, 3);
  const auto basis = basis_from_json(basis_to_json(fit.basis));
  CHECK(basis.patterns == fit.basis.patterns);
  CHECK(synth_spec_from_json(synth_spec_to_json(spec)).k_true == 3);
}
