#include "doctest.h"

#include <cmath>

#include "blim/priors.hpp"
#include "test_util.hpp"

using namespace blim;
using blim::testing::fd_gradient;
using blim::testing::random_matrix;
using blim::testing::random_spd;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);

Matrix corr_2x2(double r) {
  Matrix l = Matrix::Zero(2, 2);
  l(0, 0) = 1.0;
  l(1, 0) = r;
  l(1, 1) = std::sqrt(1.0 - r * r);
  return l;
}

double fd_mismatch(const ParamLayout& layout, const Vector& v, const PriorContext& ctx) {
  const Vector g = gradient_prior(layout, v, ctx);
  const Vector fd = fd_gradient(
      [&](const Vector& x) { return log_prior(layout, x, ctx).value; }, v, 1e-6);
  return (g - fd).norm() / std::max(1.0, g.norm());
}

}  // namespace

TEST_CASE("normal prior: hand values and shift invariance") {
  CHECK(logpdf_normal_prior(Matrix::Constant(2, 2, 0.3), 0.3, 1.0) ==
        doctest::Approx(-3.6757541).epsilon(1e-7));
  CHECK(logpdf_normal_prior(Matrix::Ones(1, 1), 0.0, 1.0) ==
        doctest::Approx(-1.4189385).epsilon(1e-7));
  std::mt19937_64 rng(61);
  const Matrix m = random_matrix(rng, 3, 3);
  CHECK(logpdf_normal_prior(m.array() + 2.5, 1.5, 0.7) ==
        doctest::Approx(logpdf_normal_prior(m, -1.0, 0.7)).epsilon(1e-13));
}

TEST_CASE("lkj: determinant term") {
  std::mt19937_64 rng(62);
  const Matrix l = corr_factor_from_unconstrained(random_matrix(rng, 3, 1), 3).factor;
  CHECK(lkj_determinant_term(l, 1.0) == 0.0);
  CHECK(lkj_determinant_term(corr_2x2(0.6), 2.0) == doctest::Approx(std::log(0.64)).epsilon(1e-14));
  CHECK(lkj_determinant_term(corr_2x2(0.6), 2.0) == doctest::Approx(-0.4462871).epsilon(1e-7));
  CHECK(lkj_determinant_term(corr_2x2(0.0), 2.0) == 0.0);
  // 2x2: no volume term, density of r is (1 - r^2)^(eta - 1).
  CHECK(lkj_volume_term(corr_2x2(0.3)) == 0.0);
  Matrix bad = corr_2x2(0.3);
  bad(1, 1) = -bad(1, 1);
  CHECK_THROWS_AS(logpdf_lkj(bad, 2.0), Error);
}

TEST_CASE("lkj: eta = 1 determinant term difference vanishes for equal volume terms") {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = corr_factor_from_unconstrained(random_matrix(rng, 6, 1), 4).factor;
    const Matrix b = corr_factor_from_unconstrained(random_matrix(rng, 6, 1), 4).factor;
    CHECK(lkj_determinant_term(a, 1.0) - lkj_determinant_term(b, 1.0) == 0.0);
  }
}

TEST_CASE("minnesota: hand values") {
  const Matrix eye = Matrix::Identity(2, 2);
  for (double theta : {0.2, 0.7}) {
    const double value = logpdf_minnesota(eye, {1.0, theta}, eye);
    const double expected =
        2 * -kHalfLog2Pi + 2 * -0.5 * std::log(2 * M_PI * theta) + std::log(2.0 / (M_PI * 2.0));
    CHECK(value == doctest::Approx(expected).epsilon(1e-13));
  }
  CHECK(half_cauchy_logpdf(1.0, 1.0) == doctest::Approx(-1.1447299).epsilon(1e-7));
  // Off-diagonal variance uses the ratio of reference variances.
  Matrix ref = Matrix::Identity(2, 2);
  ref(0, 0) = 4.0;
  Matrix g = eye;
  g(0, 1) = 0.5;
  const double with = logpdf_minnesota(g, {1.0, 0.5}, ref) - logpdf_minnesota(eye, {1.0, 0.5}, ref);
  CHECK(with == doctest::Approx(-0.5 * 0.25 / (0.5 * 4.0)).epsilon(1e-13));
  CHECK_THROWS_AS(logpdf_minnesota(eye, {1.0, 1.0}, eye), Error);
  CHECK_THROWS_AS(logpdf_minnesota(eye, {0.0, 0.5}, eye), Error);
}

TEST_CASE("minnesota: variance collapse pins G to the identity") {
  const Matrix eye = Matrix::Identity(2, 2);
  Matrix e = Matrix::Zero(2, 2);
  e(0, 1) = 1.0;
  e(1, 1) = -1.0;
  double previous = 0.0;
  for (double lam : {1e-2, 1e-4}) {
    const double drop = logpdf_minnesota(eye + 0.1 * e, {lam, 0.5}, eye) -
                        logpdf_minnesota(eye, {lam, 0.5}, eye);
    CHECK(drop < previous);
    previous = drop;
  }
  CHECK(previous < -100.0);
}

TEST_CASE("horseshoe: hand value and Finnish limits") {
  HorseshoeHyper h;
  h.tau = 1.0;
  h.lambda = Matrix::Ones(1, 1);
  CHECK(logpdf_horseshoe(Matrix::Zero(1, 1), h, false) == doctest::Approx(-2.0636684).epsilon(1e-7));

  std::mt19937_64 rng(64);
  const Matrix m = random_matrix(rng, 2, 2, 1e-6);  // on the prior scale tau * lambda
  HorseshoeHyper small;
  small.tau = 1e-3;
  small.lambda = Matrix::Constant(2, 2, 1e-3);
  small.c2 = 1.0;
  CHECK(std::abs(logpdf_horseshoe(m, small, true) - logpdf_horseshoe(m, small, false)) < 1e-6);

  // tau^2 lambda^2 >> c^2: effective variance -> c^2 (lambda-bar^2 -> c^2 / tau^2).
  HorseshoeHyper big;
  big.tau = 1e3;
  big.lambda = Matrix::Constant(1, 1, 1e3);
  big.c2 = 1.0;
  const Matrix x = Matrix::Constant(1, 1, 0.7);
  const double local = std::log(2.0 / M_PI) - std::log1p(1e6);
  const double expected = normal_logpdf(0.7, 0.0, 1.0) + local;
  CHECK(std::abs(logpdf_horseshoe(x, big, true) - expected) <= 1e-6 * std::abs(expected));
}

TEST_CASE("horseshoe: normal component invariant under tau -> a tau, lambda -> lambda / a") {
  std::mt19937_64 rng(65);
  const Matrix m = random_matrix(rng, 3, 3);
  HorseshoeHyper h;
  h.tau = 0.3;
  h.lambda = random_matrix(rng, 3, 3).cwiseAbs().array() + 0.1;
  HorseshoeHyper scaled = h;
  scaled.tau = 5.0 * h.tau;
  scaled.lambda = h.lambda / 5.0;
  auto normal_part = [&](const HorseshoeHyper& hh) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double l = hh.tau * hh.lambda.data()[k];
      total += normal_logpdf(m.data()[k], 0.0, l * l);
    }
    return total;
  };
  CHECK(normal_part(h) == doctest::Approx(normal_part(scaled)).epsilon(1e-13));
  auto local_part = [](const HorseshoeHyper& hh) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < hh.lambda.size(); ++k)
      total += half_cauchy_logpdf(hh.lambda.data()[k], 1.0);
    return total;
  };
  CHECK(logpdf_horseshoe(m, h, false) - local_part(h) ==
        doctest::Approx(logpdf_horseshoe(m, scaled, false) - local_part(scaled)).epsilon(1e-12));
}

TEST_CASE("scale priors") {
  CHECK(logpdf_scale_prior(Vector::Zero(1), ScaleFamily::half_normal, 1.0) ==
        doctest::Approx(-0.2257914).epsilon(1e-6));
  CHECK(logpdf_scale_prior(Vector::Ones(1), ScaleFamily::half_cauchy, 1.0) ==
        doctest::Approx(-1.1447299).epsilon(1e-7));
  CHECK_THROWS_AS(logpdf_scale_prior(-Vector::Ones(1), ScaleFamily::half_normal, 1.0), Error);
  CHECK_THROWS_AS(half_normal_logpdf(-1.0, 1.0), Error);
}

TEST_CASE("prior names") {
  CHECK(parse_drift_prior("minnesota") == DriftPrior::minnesota);
  CHECK(parse_noise_prior("lkj") == NoisePrior::lkj);
  try {
    parse_noise_prior("wishart");
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find("ml|normal|minnesota|horseshoe|finnish|lkj") !=
          std::string::npos);
  }
  CHECK_THROWS_AS(parse_drift_prior("lkj"), Error);
  CHECK(pair_label(DriftPrior::minnesota, NoisePrior::horseshoe) == "MINN_HORSE");
  PriorSpec s;
  s.drift = DriftPrior::finnish;
  s.noise = NoisePrior::lkj;
  s.lkj_eta = 3.0;
  s.sample_slab = true;
  const PriorSpec back = prior_from_json(prior_to_json(s));
  CHECK(back.drift == s.drift);
  CHECK(back.noise == s.noise);
  CHECK(back.lkj_eta == 3.0);
  CHECK(back.sample_slab);
  CHECK_THROWS_AS(prior_from_json(io::Json{{"lkj_eta", -1.0}}), Error);
}

TEST_CASE("correlation factor transform") {
  std::mt19937_64 rng(66);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector y = random_matrix(rng, 10, 1);
    const CorrFactor cf = corr_factor_from_unconstrained(y, 5);
    for (int i = 0; i < 5; ++i) {
      CHECK(cf.factor.row(i).norm() == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(cf.factor(i, i) > 0.0);
    }
    CHECK((corr_factor_to_unconstrained(cf.factor) - y).cwiseAbs().maxCoeff() < 1e-10);
  }
  // Log-Jacobian against a finite-difference determinant of the map y -> strict-lower(L).
  const Vector y = random_matrix(rng, 6, 1);
  auto free_entries = [](const Vector& yy) {
    const Matrix l = corr_factor_from_unconstrained(yy, 4).factor;
    Vector out(6);
    int k = 0;
    for (int i = 1; i < 4; ++i)
      for (int j = 0; j < i; ++j) out(k++) = l(i, j);
    return out;
  };
  Matrix jac(6, 6);
  for (int c = 0; c < 6; ++c) {
    Vector e = Vector::Zero(6);
    e(c) = 1e-6;
    jac.col(c) = (free_entries(y + e) - free_entries(y - e)) / 2e-6;
  }
  CHECK(std::log(std::abs(jac.determinant())) ==
        doctest::Approx(corr_factor_from_unconstrained(y, 4).log_jacobian).epsilon(1e-7));
}

TEST_CASE("pack and unpack") {
  std::mt19937_64 rng(67);
  PriorSpec spec;
  spec.drift = DriftPrior::minnesota;
  spec.noise = NoisePrior::lkj;
  const ParamLayout layout(3, spec);
  CHECK(layout.size() == 9 + 3 + 3 + 2);
  CHECK(layout.names().size() == static_cast<std::size_t>(layout.size()));
  const Matrix b = random_matrix(rng, 3, 3);
  const Matrix q = random_spd(rng, 3);
  const Vector v = pack(layout, b, q, {0.3, 0.2});
  const Unpacked u = unpack(layout, v);
  CHECK(u.drift == b);
  CHECK((u.noise - q).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(u.minnesota.lambda == doctest::Approx(0.3));
  CHECK(u.minnesota.theta == doctest::Approx(0.2));
  CHECK(pack(layout, u.drift, u.noise, u.minnesota) .isApprox(v, 1e-12));
}

TEST_CASE("gradient_prior: simple families") {
  std::mt19937_64 rng(68);
  PriorSpec spec;
  spec.drift = DriftPrior::normal;
  const ParamLayout layout(3, spec);
  const Vector v = random_matrix(rng, layout.size(), 1);
  const Vector g = gradient_prior(layout, v, {});
  CHECK((g.head(9) + v.head(9)).cwiseAbs().maxCoeff() < 1e-14);

  PriorSpec minn;
  minn.drift = DriftPrior::minnesota;
  minn.minnesota_jacobian = false;
  const ParamLayout ml(2, minn);
  PriorContext ctx{1.0, Matrix::Identity(2, 2)};
  const Vector at_identity = pack(ml, Matrix::Zero(2, 2), Matrix::Identity(2, 2));
  const Vector gm = gradient_prior(ml, at_identity, ctx);
  CHECK(gm.head(4).cwiseAbs().maxCoeff() < 1e-14);
  // The expm Jacobian adds m * tau on the diagonal of dB at B = 0.
  minn.minnesota_jacobian = true;
  const Vector gj = gradient_prior(ParamLayout(2, minn), at_identity, ctx);
  CHECK(gj(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(gj(3) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(gj(1)) < 1e-12);
}

TEST_CASE("gradient_prior: finite differences for every family") {
  std::mt19937_64 rng(69);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const DriftPrior drifts[] = {DriftPrior::ml, DriftPrior::normal, DriftPrior::minnesota,
                               DriftPrior::horseshoe, DriftPrior::finnish};
  const NoisePrior noises[] = {NoisePrior::ml, NoisePrior::normal, NoisePrior::lkj,
                               NoisePrior::horseshoe, NoisePrior::finnish};
  for (auto d : drifts) {
    for (auto n : noises) {
      for (bool slab : {false, true}) {
        if (slab && d != DriftPrior::finnish && n != NoisePrior::finnish) continue;
        PriorSpec spec;
        spec.drift = d;
        spec.noise = n;
        spec.lkj_eta = 2.5;
        spec.sample_slab = slab;
        spec.scale_family = (static_cast<int>(n) % 2) ? ScaleFamily::half_normal
                                                      : ScaleFamily::half_cauchy;
        const ParamLayout layout(3, spec);
        PriorContext ctx{0.7, random_spd(rng, 3)};
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
          Vector v(layout.size());
          for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = u(rng);
          worst = std::max(worst, fd_mismatch(layout, v, ctx));
        }
        INFO(pair_label(d, n), " slab=", slab);
        CHECK(worst < 1e-5);
      }
    }
  }
}
