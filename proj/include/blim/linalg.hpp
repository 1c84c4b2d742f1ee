#pragma once

// Dense matrix kernels used by the LIM estimators: matrix exponential and its
// Frechet derivative, principal logarithm, continuous and discrete Lyapunov
// solvers, Cholesky factorization and spectral bounds.
//
// All functions are pure and thread-safe.

#include <Eigen/Dense>
#include <vector>

#include <optional>

#include "blim/errors.hpp"

namespace blim {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// e^{A t} by scaling and squaring with Pade approximants (degree 3..13).
/// Throws ErrorKind::overflow when the result is not finite.
Matrix expm(const Matrix& a, double t = 1.0);

/// Directional derivative d/ds expm(A + sE, t) at s = 0, taken from the
/// upper-right block of expm([[A, E], [0, A]] t).
Matrix expm_frechet(const Matrix& a, const Matrix& e, double t = 1.0);

struct ExpmLogJacobian {
  double value = 0.0;  // log |det| of E -> expm_frechet(A, E, t)
  Matrix gradient;     // d value / dA
};

/// From the eigenvalues: sum_ij log |(e^{t l_i} - e^{t l_j}) / (l_i - l_j)|,
/// e^{t l_i} t on the diagonal. -infinity where the map is singular.
ExpmLogJacobian expm_log_jacobian(const Matrix& a, double t = 1.0);

/// Principal matrix logarithm via complex eigendecomposition.
/// Throws ErrorKind::branch_cut for eigenvalues on the closed negative real
/// axis or when the recomposed logarithm keeps an imaginary part above 1e-8.
Matrix logm_principal(const Matrix& g);

/// Largest real part over the eigenvalues of a.
double max_real_eigenvalue(const Matrix& a);

/// Solves B X + X B^T = -Q by a dense Kronecker solve.
/// Throws ErrorKind::unstable when B is not Hurwitz.
Matrix lyapunov_solve(const Matrix& b, const Matrix& q);

/// Real Schur form B = U T U^T for repeated Bartels-Stewart solves of
/// B X + X B^T = -C and of the adjoint B^T S + S B = -W.
class LyapunovOperator {
 public:
  /// Does not check stability; callers that need it check first.
  explicit LyapunovOperator(const Matrix& b);

  Matrix solve(const Matrix& c) const;
  Matrix solve_adjoint(const Matrix& w) const;

  Eigen::Index dim() const { return m_; }
  /// Largest real part of the eigenvalues of B.
  double spectral_abscissa() const;

 private:
  Eigen::Index m_;
  Matrix u_, t_;
  std::vector<Eigen::Index> starts_;  // first row of each 1x1 or 2x2 diagonal block
  double abscissa_ = 0.0;
};

/// Solves X - G X G^T = S (stationary covariance of a discrete AR(1) map).
Matrix discrete_lyapunov_solve(const Matrix& g, const Matrix& s);

/// Lower Cholesky factor with positive diagonal. Throws ErrorKind::not_spd.
Matrix cholesky(const Matrix& s);

/// Cholesky factor if s is symmetric positive definite, otherwise nullopt.
std::optional<Matrix> try_cholesky(const Matrix& s);

/// Kronecker product a (x) b.
Matrix kron(const Matrix& a, const Matrix& b);

/// Column-major vec and its inverse.
Vector vec(const Matrix& a);
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

bool all_finite(const Matrix& a);

}  // namespace blim
