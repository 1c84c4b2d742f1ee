#pragma once

// Prior families over the drift (B, or G = expm(B tau)) and over the
// decomposition Q = diag(sigma) L L^T diag(sigma), and the unconstrained
// coordinates they are sampled in.

#include <string>
#include <string_view>

#include "blim/io.hpp"
#include "blim/linalg.hpp"

namespace blim {

enum class DriftPrior { ml, normal, minnesota, horseshoe, finnish };
enum class NoisePrior { ml, normal, lkj, horseshoe, finnish };
enum class ScaleFamily { half_normal, half_cauchy };

DriftPrior parse_drift_prior(std::string_view name);
NoisePrior parse_noise_prior(std::string_view name);
ScaleFamily parse_scale_family(std::string_view name);
const char* to_string(DriftPrior p);
const char* to_string(NoisePrior p);
const char* to_string(ScaleFamily f);

/// Figure-style label of a prior pair, e.g. MINN_LKJ.
std::string pair_label(DriftPrior drift, NoisePrior noise);

struct PriorSpec {
  DriftPrior drift = DriftPrior::ml;
  NoisePrior noise = NoisePrior::ml;
  // normal on B entries
  double drift_mean = 0.0;
  double drift_var = 1.0;
  // normal on the unique entries Q_ij, i >= j
  double noise_mean = 0.0;
  double noise_var = 1.0;
  double lkj_eta = 1.0;
  // Minnesota density on G pulled back to B with log |det dG/dB|
  bool minnesota_jacobian = true;
  // prior on the marginal scales sigma (lkj and horseshoe noise families)
  ScaleFamily scale_family = ScaleFamily::half_cauchy;
  double scale = 1.0;
  // half-Cauchy(0, global_scale) on every horseshoe tau_global
  double global_scale = 1.0;
  // Finnish slab: c fixed at slab_scale unless sample_slab, in which case
  // c^2 ~ InvGamma(slab_df / 2, slab_df * slab_scale^2 / 2)
  double slab_scale = 2.0;
  bool sample_slab = false;
  double slab_df = 4.0;

  void validate() const;
};

io::Json prior_to_json(const PriorSpec& spec);
/// Missing keys keep their defaults; unknown prior names are rejected.
PriorSpec prior_from_json(const io::Json& doc);

// Scalar log densities.
double normal_logpdf(double x, double mean, double var);
double half_normal_logpdf(double x, double scale);
double half_cauchy_logpdf(double x, double scale);
double inv_gamma_logpdf(double x, double shape, double scale);

/// Sum of N(M_ij; mean, var) log densities.
double logpdf_normal_prior(const Matrix& m, double mean, double var);

/// 2(eta - 1) sum_i log L_ii = (eta - 1) log det(L L^T).
double lkj_determinant_term(const Matrix& corr_factor, double eta);
/// Density of the free Cholesky entries induced by a uniform density on
/// correlation matrices: sum_{i>=1} (m - i - 1) log L_ii.
double lkj_volume_term(const Matrix& corr_factor);
/// LKJ(eta) expressed on the Cholesky factor, up to a constant.
double logpdf_lkj(const Matrix& corr_factor, double eta);

struct MinnesotaHyper {
  double lambda = 1.0;
  double theta = 0.5;
};

/// Diagonal N(G_ii; 1, lambda), off-diagonal N(G_ij; 0, lambda theta s_i / s_j)
/// with s the diagonal of sigma_ref, plus half-Cauchy(lambda) and U(theta).
double logpdf_minnesota(const Matrix& g, const MinnesotaHyper& hyper, const Matrix& sigma_ref);

struct HorseshoeHyper {
  double tau = 1.0;
  Matrix lambda;     // same shape as the shrunk entries
  double c2 = 4.0;   // Finnish slab width squared
};

/// Plain or Finnish horseshoe over every entry of m. When c2_prior is set the
/// inverse-gamma term on c^2 is included.
double logpdf_horseshoe(const Matrix& m, const HorseshoeHyper& hyper, bool finnish,
                        bool c2_prior = false, double slab_df = 4.0, double slab_scale = 2.0);

double logpdf_scale_prior(const Vector& sigma, ScaleFamily family, double scale);

// ---------------------------------------------------------------------------
// Unconstrained coordinates

/// Row-wise tanh/stick-breaking map from m(m-1)/2 reals to the Cholesky factor
/// of a correlation matrix.
struct CorrFactor {
  Matrix factor;
  double log_jacobian = 0.0;
};
CorrFactor corr_factor_from_unconstrained(const Vector& y, Eigen::Index m);
Vector corr_factor_to_unconstrained(const Matrix& factor);
/// Pulls back d/dL (lower triangle used) and adds d log_jacobian / dy.
Vector corr_factor_backward(const Vector& y, const Matrix& factor, const Matrix& grad_factor);

/// Packing: [B row-major m^2 | log sigma m | corr m(m-1)/2 | drift hypers | noise hypers].
struct ParamLayout {
  Eigen::Index m = 1;
  PriorSpec spec;

  explicit ParamLayout(Eigen::Index dim, PriorSpec prior = {});

  Eigen::Index drift_offset() const { return 0; }
  Eigen::Index log_sigma_offset() const { return m * m; }
  Eigen::Index corr_offset() const { return m * m + m; }
  Eigen::Index corr_size() const { return m * (m - 1) / 2; }
  Eigen::Index drift_hyper_offset() const { return corr_offset() + corr_size(); }
  Eigen::Index drift_hyper_size() const;
  Eigen::Index noise_hyper_offset() const { return drift_hyper_offset() + drift_hyper_size(); }
  Eigen::Index noise_hyper_size() const;
  Eigen::Index size() const { return noise_hyper_offset() + noise_hyper_size(); }

  /// Human-readable coordinate names, e.g. B[0][1], log_sigma[2].
  std::vector<std::string> names() const;
};

struct Unpacked {
  Matrix drift;
  Vector log_sigma;
  Vector sigma;
  Matrix corr_factor;
  double corr_log_jacobian = 0.0;
  Matrix noise;
  MinnesotaHyper minnesota;
  HorseshoeHyper drift_horseshoe;
  HorseshoeHyper noise_horseshoe;  // lambda is (m(m-1)/2) x 1, row-wise strict lower L
};

Unpacked unpack(const ParamLayout& layout, const Vector& v);

/// Inverse of unpack for B and Q; hypers take the given values (defaults:
/// lambda = 1, theta = 0.5, tau = 0.1 * global_scale, local scales 1, c2 = slab^2).
Vector pack(const ParamLayout& layout, const Matrix& drift, const Matrix& noise,
            const MinnesotaHyper& minnesota = {}, double drift_tau = -1.0,
            double noise_tau = -1.0);

/// Adds the pull-back of d/dQ onto the log-sigma and correlation coordinates.
void accumulate_noise_gradient(const ParamLayout& layout, const Vector& v, const Unpacked& u,
                               const Matrix& grad_noise, Vector& grad);

/// Fixed inputs some priors need: the lag tau (Minnesota acts on
/// G = expm(B tau)) and the reference increment covariance.
struct PriorContext {
  double tau = 1.0;
  Matrix sigma_ref;
};

struct ValueAndGradient {
  double value = 0.0;
  Vector gradient;
};

/// Total log prior density in unconstrained coordinates, transform
/// Jacobians included (the ml families are flat in these coordinates).
ValueAndGradient log_prior(const ParamLayout& layout, const Vector& v, const PriorContext& ctx);
Vector gradient_prior(const ParamLayout& layout, const Vector& v, const PriorContext& ctx);

}  // namespace blim
