#include "doctest.h"

#include <cmath>

#include "blim/linalg.hpp"
#include "test_util.hpp"

using namespace blim;
using blim::testing::random_matrix;
using blim::testing::random_spd;
using blim::testing::random_stable;
using blim::testing::rel_err;

namespace {

// Truncated Taylor series, sum_{k=0}^{40} (A t)^k / k!.
Matrix taylor_exp(const Matrix& a, double t) {
  const Eigen::Index n = a.rows();
  Matrix term = Matrix::Identity(n, n);
  Matrix sum = term;
  for (int k = 1; k <= 40; ++k) {
    term = term * (a * t) / static_cast<double>(k);
    sum += term;
  }
  return sum;
}

// vec(B X + X B^T) = K vec(X), assembled entry by entry from the definition.
Matrix kronecker_lyapunov_oracle(const Matrix& b, const Matrix& q) {
  const Eigen::Index m = b.rows();
  Matrix k = Matrix::Zero(m * m, m * m);
  auto idx = [m](Eigen::Index i, Eigen::Index j) { return i + j * m; };
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index l = 0; l < m; ++l) {
        k(idx(i, j), idx(l, j)) += b(i, l);  // (B X)_ij
        k(idx(i, j), idx(i, l)) += b(j, l);  // (X B^T)_ij
      }
    }
  }
  Vector rhs(m * m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) rhs(idx(i, j)) = -q(i, j);
  const Vector x = k.fullPivHouseholderQr().solve(rhs);
  Matrix out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = x(idx(i, j));
  return out;
}

}  // namespace

TEST_CASE("expm: zero and diagonal cases") {
  CHECK(expm(Matrix::Zero(3, 3), 1.0).isApprox(Matrix::Identity(3, 3), 0.0));
  Matrix a = -Matrix::Identity(2, 2);
  const Matrix e = expm(a, 1.0);
  CHECK(e(0, 0) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
  CHECK(e(1, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(e(0, 1) == 0.0);
  CHECK(expm(a, 0.0).isApprox(Matrix::Identity(2, 2)));
}

TEST_CASE("expm: matches the Taylor oracle for ||A|| <= 1") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a = random_matrix(rng, 3, 3);
    a /= a.cwiseAbs().colwise().sum().maxCoeff();
    for (double t : {0.1, 0.5, 1.0}) {
      CHECK((expm(a, t) - taylor_exp(a, t)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("expm: semigroup property and large-norm scaling") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 4, 4, 0.8);
    const double s = 0.7, t = 1.9;
    if (a.cwiseAbs().colwise().sum().maxCoeff() * (s + t) > 10.0) continue;
    CHECK(rel_err(expm(a, s) * expm(a, t), expm(a, s + t)) < 1e-10);
  }
  Matrix big = -40.0 * Matrix::Identity(2, 2);
  CHECK(expm(big, 1.0)(0, 0) == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));
}

TEST_CASE("expm: overflow is reported") {
  Matrix a = 1000.0 * Matrix::Identity(2, 2);
  try {
    expm(a, 1.0);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::overflow);
  }
}

TEST_CASE("expm_frechet: zero base, diagonal pair, finite differences") {
  std::mt19937_64 rng(13);
  const Matrix e = random_matrix(rng, 3, 3);
  // At A = 0 the derivative is L(0, E) = E + O(E A) = E.
  CHECK(rel_err(expm_frechet(Matrix::Zero(3, 3), e, 1.0), e) < 1e-14);

  Matrix ad = Matrix::Zero(2, 2), ed = Matrix::Zero(2, 2);
  ad.diagonal() << -0.5, 1.2;
  ed.diagonal() << 2.0, -0.3;
  const double t = 0.7;
  const Matrix l = expm_frechet(ad, ed, t);
  for (int i = 0; i < 2; ++i) {
    CHECK(l(i, i) == doctest::Approx(t * ed(i, i) * std::exp(ad(i, i) * t)).epsilon(1e-13));
  }
  CHECK(std::abs(l(0, 1)) < 1e-15);

  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = random_matrix(rng, 3, 3);
    const Matrix dir = random_matrix(rng, 3, 3);
    const double h = 1e-6;
    const Matrix fd = (expm(a + h * dir, 1.3) - expm(a - h * dir, 1.3)) / (2 * h);
    CHECK(rel_err(expm_frechet(a, dir, 1.3), fd) < 1e-6);
  }
}

TEST_CASE("expm_frechet: linear in the direction") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 4, 4);
    const Matrix e1 = random_matrix(rng, 4, 4), e2 = random_matrix(rng, 4, 4);
    const double ca = 0.7, cb = -2.1;
    const Matrix lhs = expm_frechet(a, ca * e1 + cb * e2);
    const Matrix rhs = ca * expm_frechet(a, e1) + cb * expm_frechet(a, e2);
    CHECK(rel_err(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("expm_log_jacobian: explicit Frechet matrix and finite differences") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index n = 2 + rep % 3;
    const Matrix a = random_matrix(rng, n, n, 0.7);
    const double t = 0.5 + 0.1 * rep;
    Matrix k(n * n, n * n);
    for (Eigen::Index c = 0; c < n * n; ++c) {
      Matrix e = Matrix::Zero(n, n);
      e.data()[c] = 1.0;
      const Matrix d = expm_frechet(a, e, t);
      k.col(c) = Eigen::Map<const Vector>(d.data(), n * n);
    }
    const Vector lu_diag = k.fullPivLu().matrixLU().diagonal();
    const double oracle = lu_diag.array().abs().log().sum();
    const auto jac = expm_log_jacobian(a, t);
    CHECK(jac.value == doctest::Approx(oracle).epsilon(1e-9));

    const Matrix dir = random_matrix(rng, n, n);
    const double h = 1e-5;
    const double fd = (expm_log_jacobian(a + h * dir, t).value - expm_log_jacobian(a - h * dir, t).value) / (2 * h);
    CHECK(jac.gradient.cwiseProduct(dir).sum() == doctest::Approx(fd).epsilon(1e-6));
  }
  // Repeated eigenvalue: diag(-1, -1) at t = 1 gives 4 * (-1).
  CHECK(expm_log_jacobian(-Matrix::Identity(2, 2)).value == doctest::Approx(-4.0).epsilon(1e-14));
}

TEST_CASE("logm_principal: identity, diagonal, round trip") {
  CHECK(logm_principal(Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
  Matrix g = Matrix::Zero(2, 2);
  g.diagonal() << 0.5, 0.25;
  const Matrix l = logm_principal(g);
  CHECK(l(0, 0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(l(1, 1) == doctest::Approx(std::log(0.25)).epsilon(1e-14));

  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix b = random_stable(rng, 3);
    CHECK(rel_err(logm_principal(expm(b, 1.0)), b) < 1e-8);
  }
}

TEST_CASE("logm_principal: branch cut errors") {
  Matrix g = Matrix::Identity(2, 2);
  g(1, 1) = -0.5;
  CHECK_THROWS_AS(logm_principal(g), Error);
  try {
    logm_principal(g);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::branch_cut);
  }
  Matrix singular = Matrix::Zero(2, 2);
  singular(0, 0) = 1.0;
  CHECK_THROWS_AS(logm_principal(singular), Error);
}

TEST_CASE("lyapunov_solve: scalar and commuting cases") {
  Matrix b(1, 1), q(1, 1);
  b << -3.0;
  q << 0.8;
  CHECK(lyapunov_solve(b, q)(0, 0) == doctest::Approx(0.8 / 6.0).epsilon(1e-14));

  std::mt19937_64 rng(16);
  const Matrix qs = random_spd(rng, 4);
  CHECK(rel_err(lyapunov_solve(-Matrix::Identity(4, 4), qs), qs / 2.0) < 1e-14);
}

TEST_CASE("lyapunov_solve: Kronecker oracle, residual, symmetry and SPD") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix b = random_stable(rng, 4);
    const Matrix q = random_spd(rng, 4);
    const Matrix lam = lyapunov_solve(b, q);
    CHECK(rel_err(lam, kronecker_lyapunov_oracle(b, q)) < 1e-10);
    CHECK((b * lam + lam * b.transpose() + q).norm() <= 1e-10 * q.norm());
    CHECK((lam - lam.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(try_cholesky(lam).has_value());
  }
}

TEST_CASE("lyapunov_solve: unstable and degenerate drifts") {
  Matrix b = Matrix::Identity(2, 2);
  try {
    lyapunov_solve(b, Matrix::Identity(2, 2));
    FAIL("expected instability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unstable);
  }
  Matrix skew(2, 2);
  skew << 0.0, 1.0, -1.0, 0.0;  // eigenvalues +-i: lambda_i + lambda_j = 0
  CHECK_THROWS_AS(LyapunovOperator{skew}, Error);
}

TEST_CASE("LyapunovOperator: adjoint identity <W, X(C)> = <S(W), C>") {
  std::mt19937_64 rng(18);
  const Matrix b = random_stable(rng, 3);
  const LyapunovOperator op(b);
  const Matrix c = random_matrix(rng, 3, 3), w = random_matrix(rng, 3, 3);
  const Matrix x = op.solve(c);
  const Matrix s = op.solve_adjoint(w);
  CHECK((w.cwiseProduct(x)).sum() == doctest::Approx((s.cwiseProduct(c)).sum()).epsilon(1e-12));
  CHECK((b.transpose() * s + s * b + w).norm() < 1e-12 * w.norm() * 10);
}

TEST_CASE("discrete_lyapunov_solve satisfies X - G X G^T = S") {
  std::mt19937_64 rng(19);
  const Matrix g = expm(random_stable(rng, 3), 1.0);
  const Matrix s = random_spd(rng, 3);
  const Matrix x = discrete_lyapunov_solve(g, s);
  CHECK((x - g * x * g.transpose() - s).norm() < 1e-12 * s.norm());
}

TEST_CASE("cholesky: identity, hand 2x2, reconstruction, not-SPD") {
  CHECK(cholesky(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3)));
  Matrix s(2, 2);
  s << 4, 2, 2, 5;
  Matrix expected(2, 2);
  expected << 2, 0, 1, 2;
  CHECK((cholesky(s) - expected).cwiseAbs().maxCoeff() < 1e-15);

  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix spd = random_spd(rng, 5);
    const Matrix l = cholesky(spd);
    CHECK(rel_err(l * l.transpose(), spd) <= 1e-12);
    CHECK((l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(l.diagonal().minCoeff() > 0.0);
  }
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  try {
    cholesky(bad);
    FAIL("expected not_spd");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::not_spd);
  }
}
