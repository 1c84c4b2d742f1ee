#include "blim/linalg.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

namespace blim {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::overflow: return "overflow";
    case ErrorKind::branch_cut: return "branch_cut";
    case ErrorKind::unstable: return "unstable";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::not_spd: return "not_spd";
    case ErrorKind::rank: return "rank";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

namespace {

void require_square(const Matrix& a, const char* who) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    std::ostringstream os;
    os << who << ": expected a non-empty square matrix, got " << a.rows()
       << "x" << a.cols();
    throw Error(ErrorKind::dimension, os.str());
  }
}

// Pade coefficients b_0..b_d for the [d/d] approximant of exp.
constexpr std::array<double, 4> kPade3 = {120.0, 60.0, 12.0, 1.0};
constexpr std::array<double, 6> kPade5 = {30240.0, 15120.0, 3360.0,
                                          420.0,   30.0,    1.0};
constexpr std::array<double, 8> kPade7 = {17297280.0, 8648640.0, 1995840.0,
                                          277200.0,   25200.0,   1512.0,
                                          56.0,       1.0};
constexpr std::array<double, 10> kPade9 = {
    17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
    2162160.0,     110880.0,     3960.0,       90.0,        1.0};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0,  129060195264000.0,   10559470521600.0,
    670442572800.0,      33522128640.0,       1323241920.0,
    40840800.0,          960960.0,            16380.0,
    182.0,               1.0};

// Largest 1-norm for which the [d/d] approximant is accurate to unit roundoff.
constexpr double kTheta3 = 1.495585217958292e-2;
constexpr double kTheta5 = 2.539398330063230e-1;
constexpr double kTheta7 = 9.504178996162932e-1;
constexpr double kTheta9 = 2.097847961257068e+0;
constexpr double kTheta13 = 5.371920351148152e+0;

template <std::size_t N>
Matrix pade_low(const Matrix& a, const std::array<double, N>& b) {
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  Matrix power = ident;
  Matrix u_inner = Matrix::Zero(n, n);
  Matrix v = Matrix::Zero(n, n);
  for (std::size_t k = 0; k + 1 < N; k += 2) {
    v += b[k] * power;
    u_inner += b[k + 1] * power;
    power = power * a2;
  }
  const Matrix u = a * u_inner;
  return (v - u).partialPivLu().solve(v + u);
}

Matrix pade13(const Matrix& a) {
  const auto& b = kPade13;
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) +
                        b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                   b[4] * a4 + b[2] * a2 + b[0] * ident;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace

bool all_finite(const Matrix& a) { return a.allFinite(); }

Matrix expm(const Matrix& a_in, double t) {
  require_square(a_in, "expm");
  if (!a_in.allFinite() || !std::isfinite(t)) {
    throw Error(ErrorKind::domain, "expm: non-finite input");
  }
  const Matrix a = a_in * t;
  const double norm = a.cwiseAbs().colwise().sum().maxCoeff();

  Matrix result;
  if (norm <= kTheta3) {
    result = pade_low(a, kPade3);
  } else if (norm <= kTheta5) {
    result = pade_low(a, kPade5);
  } else if (norm <= kTheta7) {
    result = pade_low(a, kPade7);
  } else if (norm <= kTheta9) {
    result = pade_low(a, kPade9);
  } else {
    const int s = std::max(0, static_cast<int>(std::ceil(std::log2(norm / kTheta13))));
    result = pade13(a / std::ldexp(1.0, s));
    for (int i = 0; i < s; ++i) result = result * result;
  }
  if (!result.allFinite()) {
    std::ostringstream os;
    os << "expm: result is not finite (||A t||_1 = " << norm << ")";
    throw Error(ErrorKind::overflow, os.str());
  }
  return result;
}

Matrix expm_frechet(const Matrix& a, const Matrix& e, double t) {
  require_square(a, "expm_frechet");
  if (e.rows() != a.rows() || e.cols() != a.cols()) {
    throw Error(ErrorKind::dimension, "expm_frechet: A and E differ in shape");
  }
  const Eigen::Index n = a.rows();
  // Rescale E so the block norm is governed by A; the map is linear in E.
  const double e_norm = e.cwiseAbs().colwise().sum().maxCoeff();
  if (e_norm == 0.0) return Matrix::Zero(n, n);
  const double a_norm = std::max(1.0, a.cwiseAbs().colwise().sum().maxCoeff());
  const double scale = e_norm / a_norm;

  Matrix block = Matrix::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.bottomRightCorner(n, n) = a;
  block.topRightCorner(n, n) = e / scale;
  const Matrix big = expm(block, t);
  return scale * big.topRightCorner(n, n);
}

namespace {

using Complex = std::complex<double>;

// log((e^x - e^y) / (x - y)) with Re(x) <= Re(y).
Complex log_divided_exp(Complex x, Complex y) {
  const Complex d = x - y;
  if (std::abs(d) < 1e-3) return y + d / 2.0 + d * d / 24.0 - d * d * d * d / 2880.0;
  return y + std::log((std::exp(d) - 1.0) / d);
}

// d/dx log((e^x - e^y) / (x - y)).
Complex d_log_divided_exp(Complex x, Complex y) {
  const Complex d = x - y;
  if (std::abs(d) < 1e-3) return 0.5 + d / 12.0 - d * d * d / 720.0;
  if (d.real() < 0.0) {
    const Complex e = std::exp(d);
    return e / (e - 1.0) - 1.0 / d;
  }
  return 1.0 / (1.0 - std::exp(-d)) - 1.0 / d;
}

}  // namespace

ExpmLogJacobian expm_log_jacobian(const Matrix& a, double t) {
  require_square(a, "expm_log_jacobian");
  if (!a.allFinite()) throw Error(ErrorKind::domain, "expm_log_jacobian: non-finite input");
  const Eigen::Index n = a.rows();
  Eigen::EigenSolver<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::degenerate, "expm_log_jacobian: eigendecomposition failed");
  }
  const Eigen::VectorXcd lam = solver.eigenvalues() * t;
  ExpmLogJacobian out;
  out.value = static_cast<double>(n * n) * std::log(t);
  Eigen::VectorXcd dlam = Eigen::VectorXcd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool swap = lam(i).real() > lam(j).real();
      out.value += log_divided_exp(swap ? lam(j) : lam(i), swap ? lam(i) : lam(j)).real();
      dlam(i) += 2.0 * d_log_divided_exp(lam(i), lam(j));
    }
  }
  if (!std::isfinite(out.value)) {
    out.value = -std::numeric_limits<double>::infinity();
    out.gradient = Matrix::Zero(n, n);
    return out;
  }
  const Eigen::MatrixXcd v = solver.eigenvectors();
  const Eigen::MatrixXcd inner = v * (dlam * t).asDiagonal() * v.partialPivLu().inverse();
  out.gradient = inner.transpose().real();
  return out;
}

Matrix logm_principal(const Matrix& g) {
  require_square(g, "logm_principal");
  if (!g.allFinite()) throw Error(ErrorKind::domain, "logm_principal: non-finite input");
  const Eigen::Index n = g.rows();
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> solver(g.cast<std::complex<double>>());
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::branch_cut, "logm_principal: eigendecomposition failed");
  }
  const Eigen::VectorXcd lambda = solver.eigenvalues();
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = lambda(i);
    if (std::abs(z) <= 1e-14 * scale) {
      throw Error(ErrorKind::branch_cut, "logm_principal: singular matrix (zero eigenvalue)");
    }
    if (z.real() < 0.0 && std::abs(z.imag()) <= 1e-12 * std::abs(z)) {
      std::ostringstream os;
      os << "logm_principal: eigenvalue " << z.real()
         << " lies on the negative real axis";
      throw Error(ErrorKind::branch_cut, os.str());
    }
  }
  const Eigen::MatrixXcd& v = solver.eigenvectors();
  Eigen::VectorXcd log_lambda(n);
  for (Eigen::Index i = 0; i < n; ++i) log_lambda(i) = std::log(lambda(i));
  const Eigen::MatrixXcd recomposed =
      v * log_lambda.asDiagonal() * v.partialPivLu().inverse();
  const Matrix real = recomposed.real();
  const double imag = recomposed.imag().cwiseAbs().maxCoeff();
  if (!real.allFinite() || imag > 1e-8 * std::max(1.0, real.cwiseAbs().maxCoeff())) {
    std::ostringstream os;
    os << "logm_principal: imaginary residue " << imag << " exceeds tolerance";
    throw Error(ErrorKind::branch_cut, os.str());
  }
  return real;
}

double max_real_eigenvalue(const Matrix& a) {
  require_square(a, "max_real_eigenvalue");
  if (a.rows() == 1) return a(0, 0);
  Eigen::EigenSolver<Matrix> solver(a, false);
  if (solver.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  return solver.eigenvalues().real().maxCoeff();
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

namespace {

using Block = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 2, 2>;
using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;

// A X + X C = R for blocks of size at most 2.
Block small_sylvester(const Block& a, const Block& c, const Block& r) {
  const Eigen::Index p = a.rows(), q = c.rows();
  Small k = Small::Zero(p * q, p * q);
  for (Eigen::Index j = 0; j < q; ++j) {
    k.block(j * p, j * p, p, p) += a;
    for (Eigen::Index l = 0; l < q; ++l) {
      k.block(l * p, j * p, p, p).diagonal().array() += c(j, l);
    }
  }
  SmallVec rhs(p * q);
  for (Eigen::Index j = 0; j < q; ++j) rhs.segment(j * p, p) = r.col(j);
  const SmallVec x = k.fullPivLu().solve(rhs);
  Block out(p, q);
  for (Eigen::Index j = 0; j < q; ++j) out.col(j) = x.segment(j * p, p);
  return out;
}

Eigen::Index block_size(const std::vector<Eigen::Index>& starts, std::size_t k, Eigen::Index m) {
  return (k + 1 < starts.size() ? starts[k + 1] : m) - starts[k];
}

}  // namespace

LyapunovOperator::LyapunovOperator(const Matrix& b) : m_(b.rows()) {
  require_square(b, "LyapunovOperator");
  if (!b.allFinite()) throw Error(ErrorKind::domain, "lyapunov: non-finite drift");
  Eigen::RealSchur<Matrix> schur(b);
  if (schur.info() != Eigen::Success) {
    throw Error(ErrorKind::degenerate, "lyapunov: Schur decomposition failed");
  }
  u_ = schur.matrixU();
  t_ = schur.matrixT();
  std::vector<std::complex<double>> eig;
  for (Eigen::Index i = 0; i < m_;) {
    starts_.push_back(i);
    if (i + 1 < m_ && t_(i + 1, i) != 0.0) {
      const double mean = 0.5 * (t_(i, i) + t_(i + 1, i + 1));
      const double half = 0.5 * (t_(i, i) - t_(i + 1, i + 1));
      const std::complex<double> root = std::sqrt(std::complex<double>(half * half + t_(i, i + 1) * t_(i + 1, i)));
      eig.push_back(mean + root);
      eig.push_back(mean - root);
      i += 2;
    } else {
      eig.emplace_back(t_(i, i));
      i += 1;
    }
  }
  abscissa_ = -std::numeric_limits<double>::infinity();
  for (const auto& z : eig) abscissa_ = std::max(abscissa_, z.real());
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  for (const auto& zi : eig) {
    for (const auto& zj : eig) {
      if (std::abs(zi + zj) < 1e-13 * scale) {
        throw Error(ErrorKind::degenerate,
                    "lyapunov: operator is singular (eigenvalue pair sums to 0)");
      }
    }
  }
}

double LyapunovOperator::spectral_abscissa() const { return abscissa_; }

// T Y + Y T^T = -C~: column blocks from the right, then row blocks upward.
Matrix LyapunovOperator::solve(const Matrix& c) const {
  const Matrix rhs = -(u_.transpose() * c * u_);
  Matrix y = Matrix::Zero(m_, m_);
  const std::size_t nb = starts_.size();
  for (std::size_t jb = nb; jb-- > 0;) {
    const Eigen::Index j0 = starts_[jb], q = block_size(starts_, jb, m_);
    Matrix r = rhs.middleCols(j0, q);
    const Eigen::Index tail = m_ - j0 - q;
    if (tail > 0) r.noalias() -= y.rightCols(tail) * t_.block(j0, j0 + q, q, tail).transpose();
    const Block s_t = t_.block(j0, j0, q, q).transpose();
    for (std::size_t ib = nb; ib-- > 0;) {
      const Eigen::Index i0 = starts_[ib], p = block_size(starts_, ib, m_);
      Block ri = r.middleRows(i0, p);
      const Eigen::Index below = m_ - i0 - p;
      if (below > 0) ri.noalias() -= t_.block(i0, i0 + p, p, below) * y.block(i0 + p, j0, below, q);
      y.block(i0, j0, p, q) = small_sylvester(t_.block(i0, i0, p, p), s_t, ri);
    }
  }
  return u_ * y * u_.transpose();
}

// T^T Y + Y T = -C~: column blocks from the left, then row blocks downward.
Matrix LyapunovOperator::solve_adjoint(const Matrix& w) const {
  const Matrix rhs = -(u_.transpose() * w * u_);
  Matrix y = Matrix::Zero(m_, m_);
  const std::size_t nb = starts_.size();
  for (std::size_t jb = 0; jb < nb; ++jb) {
    const Eigen::Index j0 = starts_[jb], q = block_size(starts_, jb, m_);
    Matrix r = rhs.middleCols(j0, q);
    if (j0 > 0) r.noalias() -= y.leftCols(j0) * t_.block(0, j0, j0, q);
    const Block s = t_.block(j0, j0, q, q);
    for (std::size_t ib = 0; ib < nb; ++ib) {
      const Eigen::Index i0 = starts_[ib], p = block_size(starts_, ib, m_);
      Block ri = r.middleRows(i0, p);
      if (i0 > 0) ri.noalias() -= t_.block(0, i0, i0, p).transpose() * y.block(0, j0, i0, q);
      y.block(i0, j0, p, q) = small_sylvester(t_.block(i0, i0, p, p).transpose(), s, ri);
    }
  }
  return u_ * y * u_.transpose();
}

Matrix lyapunov_solve(const Matrix& b, const Matrix& q) {
  require_square(b, "lyapunov_solve");
  if (q.rows() != b.rows() || q.cols() != b.cols()) {
    throw Error(ErrorKind::dimension, "lyapunov_solve: B and Q differ in shape");
  }
  const double lead = max_real_eigenvalue(b);
  if (!(lead < 0.0)) {
    std::ostringstream os;
    os << "lyapunov_solve: drift is not stable (max Re eig = " << lead << ")";
    throw Error(ErrorKind::unstable, os.str());
  }
  return symmetrize(LyapunovOperator(b).solve(q));
}

Matrix discrete_lyapunov_solve(const Matrix& g, const Matrix& s) {
  require_square(g, "discrete_lyapunov_solve");
  const Eigen::Index m = g.rows();
  const Matrix op = Matrix::Identity(m * m, m * m) - kron(g, g);
  Eigen::PartialPivLU<Matrix> lu(op);
  if (!(lu.rcond() > 1e-14)) {
    throw Error(ErrorKind::degenerate,
                "discrete_lyapunov_solve: operator singular (unit-modulus eigenvalue product)");
  }
  return symmetrize(unvec(lu.solve(vec(s)), m, m));
}

std::optional<Matrix> try_cholesky(const Matrix& s) {
  if (s.rows() != s.cols() || s.rows() == 0 || !s.allFinite()) return std::nullopt;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Matrix l = llt.matrixL();
  if ((l.diagonal().array() <= 0.0).any()) return std::nullopt;
  return l;
}

Matrix cholesky(const Matrix& s) {
  require_square(s, "cholesky");
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::not_spd, "cholesky: matrix is not symmetric");
  }
  auto l = try_cholesky(s);
  if (!l) throw Error(ErrorKind::not_spd, "cholesky: non-positive pivot");
  return *l;
}

}  // namespace blim
