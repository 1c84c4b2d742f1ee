#include "blim/priors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace blim {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLogTwoOverPi = -0.45158270528945486472619522989488;

const char* const kDriftNames[] = {"ml", "normal", "minnesota", "horseshoe", "finnish"};
const char* const kNoiseNames[] = {"ml", "normal", "lkj", "horseshoe", "finnish"};
const char* const kValidNames = "ml|normal|minnesota|horseshoe|finnish|lkj";

[[noreturn]] void bad_name(std::string_view what, std::string_view name, const char* valid) {
  std::ostringstream os;
  os << "unknown " << what << " '" << name << "'; valid options: " << valid;
  throw Error(ErrorKind::config, os.str());
}

// log(1 - tanh(y)^2) without cancellation for large |y|.
double log1m_tanh_sq(double y) {
  const double a = std::abs(y);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

double logistic(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// Normal log density and d/dx, d/dlog(var).
struct NormalTerm {
  double value, d_x, d_log_var;
};
NormalTerm normal_term(double x, double mean, double var) {
  const double r = x - mean;
  return {-0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var, -r / var,
          -0.5 + 0.5 * r * r / var};
}

// Horseshoe over the entries of `values` with log-coordinates for tau, each
// lambda and c^2. Writes gradients when the output pointers are non-null.
double horseshoe_with_gradient(const Vector& values, double tau, const Vector& lambda, double c2,
                               bool finnish, Vector* d_values, double* d_log_tau,
                               Vector* d_log_lambda, double* d_log_c2) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    const double l2 = lambda(k) * lambda(k);
    const double t2l2 = tau * tau * l2;
    double var = t2l2;
    double dlv_dlog_tl = 2.0;  // d log var / d log tau (same for log lambda)
    double dlv_dlog_c2 = 0.0;
    if (finnish) {
      const double r = t2l2 / (c2 + t2l2);
      var = c2 * t2l2 / (c2 + t2l2);
      dlv_dlog_tl = 2.0 - 2.0 * r;
      dlv_dlog_c2 = r;
    }
    const NormalTerm n = normal_term(values(k), 0.0, var);
    total += n.value + kLogTwoOverPi - std::log1p(l2);
    if (d_values) (*d_values)(k) += n.d_x;
    if (d_log_tau) *d_log_tau += n.d_log_var * dlv_dlog_tl;
    if (d_log_lambda) (*d_log_lambda)(k) += n.d_log_var * dlv_dlog_tl - 2.0 * l2 / (1.0 + l2);
    if (d_log_c2) *d_log_c2 += n.d_log_var * dlv_dlog_c2;
  }
  return total;
}

Vector strict_lower(const Matrix& a) {
  const Eigen::Index m = a.rows();
  Vector out(m * (m - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 1; i < m; ++i)
    for (Eigen::Index j = 0; j < i; ++j) out(k++) = a(i, j);
  return out;
}

void check_corr_factor(const Matrix& l) {
  if (l.rows() != l.cols()) throw Error(ErrorKind::dimension, "correlation factor must be square");
  if (!(l.diagonal().minCoeff() > 0.0)) {
    throw Error(ErrorKind::domain, "correlation factor needs a positive diagonal");
  }
}

}  // namespace

DriftPrior parse_drift_prior(std::string_view name) {
  for (int i = 0; i < 5; ++i)
    if (name == kDriftNames[i]) return static_cast<DriftPrior>(i);
  bad_name("drift prior", name, kValidNames);
}

NoisePrior parse_noise_prior(std::string_view name) {
  for (int i = 0; i < 5; ++i)
    if (name == kNoiseNames[i]) return static_cast<NoisePrior>(i);
  bad_name("noise prior", name, kValidNames);
}

ScaleFamily parse_scale_family(std::string_view name) {
  if (name == "half_normal") return ScaleFamily::half_normal;
  if (name == "half_cauchy") return ScaleFamily::half_cauchy;
  bad_name("scale family", name, "half_normal|half_cauchy");
}

const char* to_string(DriftPrior p) { return kDriftNames[static_cast<int>(p)]; }
const char* to_string(NoisePrior p) { return kNoiseNames[static_cast<int>(p)]; }
const char* to_string(ScaleFamily f) {
  return f == ScaleFamily::half_normal ? "half_normal" : "half_cauchy";
}

std::string pair_label(DriftPrior drift, NoisePrior noise) {
  auto short_name = [](const char* n) -> std::string {
    const std::string s(n);
    if (s == "ml") return "ML";
    if (s == "normal") return "N";
    if (s == "minnesota") return "MINN";
    if (s == "horseshoe") return "HORSE";
    if (s == "finnish") return "FINN";
    return "LKJ";
  };
  return short_name(to_string(drift)) + "_" + short_name(to_string(noise));
}

void PriorSpec::validate() const {
  auto positive = [](double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw Error(ErrorKind::config, std::string("prior: ") + what + " must be positive");
    }
  };
  positive(drift_var, "drift_var");
  positive(noise_var, "noise_var");
  positive(lkj_eta, "lkj_eta");
  positive(scale, "scale");
  positive(global_scale, "global_scale");
  positive(slab_scale, "slab_scale");
  positive(slab_df, "slab_df");
}

io::Json prior_to_json(const PriorSpec& s) {
  return io::Json{{"drift", to_string(s.drift)},
                  {"noise", to_string(s.noise)},
                  {"drift_mean", s.drift_mean},
                  {"drift_var", s.drift_var},
                  {"noise_mean", s.noise_mean},
                  {"noise_var", s.noise_var},
                  {"lkj_eta", s.lkj_eta},
                  {"minnesota_jacobian", s.minnesota_jacobian},
                  {"scale_family", to_string(s.scale_family)},
                  {"scale", s.scale},
                  {"global_scale", s.global_scale},
                  {"slab_scale", s.slab_scale},
                  {"sample_slab", s.sample_slab},
                  {"slab_df", s.slab_df}};
}

PriorSpec prior_from_json(const io::Json& doc) {
  PriorSpec s;
  try {
    if (doc.contains("drift")) s.drift = parse_drift_prior(doc["drift"].get<std::string>());
    if (doc.contains("noise")) s.noise = parse_noise_prior(doc["noise"].get<std::string>());
    if (doc.contains("scale_family"))
      s.scale_family = parse_scale_family(doc["scale_family"].get<std::string>());
    s.drift_mean = doc.value("drift_mean", s.drift_mean);
    s.drift_var = doc.value("drift_var", s.drift_var);
    s.noise_mean = doc.value("noise_mean", s.noise_mean);
    s.noise_var = doc.value("noise_var", s.noise_var);
    s.lkj_eta = doc.value("lkj_eta", s.lkj_eta);
    s.minnesota_jacobian = doc.value("minnesota_jacobian", s.minnesota_jacobian);
    s.scale = doc.value("scale", s.scale);
    s.global_scale = doc.value("global_scale", s.global_scale);
    s.slab_scale = doc.value("slab_scale", s.slab_scale);
    s.sample_slab = doc.value("sample_slab", s.sample_slab);
    s.slab_df = doc.value("slab_df", s.slab_df);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::config, std::string("prior: ") + e.what());
  }
  s.validate();
  return s;
}

double normal_logpdf(double x, double mean, double var) {
  if (!(var > 0.0)) throw Error(ErrorKind::domain, "normal_logpdf: variance must be positive");
  return normal_term(x, mean, var).value;
}

double half_normal_logpdf(double x, double scale) {
  if (!(x >= 0.0)) throw Error(ErrorKind::domain, "half_normal_logpdf: negative argument");
  return std::log(2.0) + normal_logpdf(x, 0.0, scale * scale);
}

double half_cauchy_logpdf(double x, double scale) {
  if (!(x >= 0.0)) throw Error(ErrorKind::domain, "half_cauchy_logpdf: negative argument");
  const double r = x / scale;
  return kLogTwoOverPi - std::log(scale) - std::log1p(r * r);
}

double inv_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0.0)) throw Error(ErrorKind::domain, "inv_gamma_logpdf: argument must be positive");
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double logpdf_normal_prior(const Matrix& m, double mean, double var) {
  if (!(var > 0.0)) throw Error(ErrorKind::domain, "normal prior: variance must be positive");
  double total = 0.0;
  for (Eigen::Index k = 0; k < m.size(); ++k) total += normal_term(m.data()[k], mean, var).value;
  return total;
}

double lkj_determinant_term(const Matrix& l, double eta) {
  check_corr_factor(l);
  return 2.0 * (eta - 1.0) * l.diagonal().array().log().sum();
}

double lkj_volume_term(const Matrix& l) {
  check_corr_factor(l);
  const Eigen::Index m = l.rows();
  double total = 0.0;
  for (Eigen::Index i = 1; i < m; ++i) total += static_cast<double>(m - i - 1) * std::log(l(i, i));
  return total;
}

double logpdf_lkj(const Matrix& l, double eta) {
  if (!(eta > 0.0)) throw Error(ErrorKind::domain, "logpdf_lkj: eta must be positive");
  return lkj_determinant_term(l, eta) + lkj_volume_term(l);
}

double logpdf_minnesota(const Matrix& g, const MinnesotaHyper& h, const Matrix& sigma_ref) {
  if (!(h.lambda > 0.0)) throw Error(ErrorKind::domain, "minnesota: lambda must be positive");
  if (!(h.theta > 0.0 && h.theta < 1.0)) {
    throw Error(ErrorKind::domain, "minnesota: theta must lie in (0, 1)");
  }
  const Eigen::Index m = g.rows();
  if (sigma_ref.rows() != m || !(sigma_ref.diagonal().minCoeff() > 0.0)) {
    throw Error(ErrorKind::domain, "minnesota: reference variances must be positive");
  }
  double total = half_cauchy_logpdf(h.lambda, 1.0);  // U(0,1) on theta contributes 0
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) {
        total += normal_term(g(i, i), 1.0, h.lambda).value;
      } else {
        const double var = h.lambda * h.theta * sigma_ref(i, i) / sigma_ref(j, j);
        total += normal_term(g(i, j), 0.0, var).value;
      }
    }
  }
  return total;
}

double logpdf_horseshoe(const Matrix& m, const HorseshoeHyper& h, bool finnish, bool c2_prior,
                        double slab_df, double slab_scale) {
  if (!(h.tau > 0.0) || !(h.lambda.size() == m.size()) || !(h.lambda.minCoeff() > 0.0) ||
      (finnish && !(h.c2 > 0.0))) {
    throw Error(ErrorKind::domain, "horseshoe: scales must be positive and match the matrix");
  }
  const Vector values = Eigen::Map<const Vector>(m.data(), m.size());
  const Vector lambda = Eigen::Map<const Vector>(h.lambda.data(), h.lambda.size());
  double total = horseshoe_with_gradient(values, h.tau, lambda, h.c2, finnish, nullptr, nullptr,
                                         nullptr, nullptr);
  if (finnish && c2_prior) {
    total += inv_gamma_logpdf(h.c2, 0.5 * slab_df, 0.5 * slab_df * slab_scale * slab_scale);
  }
  return total;
}

double logpdf_scale_prior(const Vector& sigma, ScaleFamily family, double scale) {
  if (!(sigma.size() == 0 || sigma.minCoeff() >= 0.0)) {
    throw Error(ErrorKind::domain, "scale prior: entries must be non-negative");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    total += family == ScaleFamily::half_normal ? half_normal_logpdf(sigma(i), scale)
                                                : half_cauchy_logpdf(sigma(i), scale);
  }
  return total;
}

// ---------------------------------------------------------------------------

CorrFactor corr_factor_from_unconstrained(const Vector& y, Eigen::Index m) {
  if (y.size() != m * (m - 1) / 2) {
    throw Error(ErrorKind::dimension, "corr factor: expected m(m-1)/2 coordinates");
  }
  CorrFactor out;
  out.factor = Matrix::Zero(m, m);
  out.factor(0, 0) = 1.0;
  Eigen::Index k = 0;
  for (Eigen::Index i = 1; i < m; ++i) {
    double sum_sq = 0.0;
    for (Eigen::Index j = 0; j < i; ++j, ++k) {
      const double z = std::tanh(y(k));
      out.log_jacobian += log1m_tanh_sq(y(k));
      if (j == 0) {
        out.factor(i, 0) = z;
      } else {
        out.log_jacobian += 0.5 * std::log1p(-sum_sq);
        out.factor(i, j) = z * std::sqrt(1.0 - sum_sq);
      }
      sum_sq += out.factor(i, j) * out.factor(i, j);
    }
    out.factor(i, i) = std::sqrt(std::max(0.0, 1.0 - sum_sq));
  }
  return out;
}

Vector corr_factor_to_unconstrained(const Matrix& l) {
  const Eigen::Index m = l.rows();
  Vector y(m * (m - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 1; i < m; ++i) {
    double sum_sq = 0.0;
    for (Eigen::Index j = 0; j < i; ++j, ++k) {
      const double z = j == 0 ? l(i, 0) : l(i, j) / std::sqrt(1.0 - sum_sq);
      if (!(std::abs(z) < 1.0)) {
        throw Error(ErrorKind::domain, "corr factor: row is not a valid unit-norm row");
      }
      y(k) = std::atanh(z);
      sum_sq += l(i, j) * l(i, j);
    }
  }
  return y;
}

Vector corr_factor_backward(const Vector& y, const Matrix& l, const Matrix& gl) {
  const Eigen::Index m = l.rows();
  Vector gy = Vector::Zero(y.size());
  Eigen::Index row_start = 0;
  for (Eigen::Index i = 1; i < m; ++i) {
    // Prefix sums of squares s_j = sum_{k<=j} L_ik^2.
    Vector s(i);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      acc += l(i, j) * l(i, j);
      s(j) = acc;
    }
    // L_ii = sqrt(1 - s_{i-1}).
    double gs = l(i, i) > 0.0 ? -0.5 * gl(i, i) / l(i, i) : 0.0;
    for (Eigen::Index j = i - 1; j >= 1; --j) {
      const Eigen::Index k = row_start + j;
      const double z = std::tanh(y(k));
      const double w = std::sqrt(1.0 - s(j - 1));
      const double g_lij = gl(i, j) + 2.0 * l(i, j) * gs;
      const double gz = g_lij * w;
      // s_j = s_{j-1} + L_ij^2, L_ij = z w(s_{j-1}), Jacobian 0.5 log(1 - s_{j-1}).
      gs += g_lij * z * (-0.5 / w) - 0.5 / (1.0 - s(j - 1));
      gy(k) = gz * (1.0 - z * z) - 2.0 * z;
    }
    const double z0 = std::tanh(y(row_start));
    const double gz0 = gl(i, 0) + 2.0 * l(i, 0) * gs;
    gy(row_start) = gz0 * (1.0 - z0 * z0) - 2.0 * z0;
    row_start += i;
  }
  return gy;
}

ParamLayout::ParamLayout(Eigen::Index dim, PriorSpec prior) : m(dim), spec(prior) {
  if (dim < 1) throw Error(ErrorKind::dimension, "ParamLayout: m must be >= 1");
  spec.validate();
}

Eigen::Index ParamLayout::drift_hyper_size() const {
  switch (spec.drift) {
    case DriftPrior::minnesota: return 2;
    case DriftPrior::horseshoe: return 1 + m * m;
    case DriftPrior::finnish: return 1 + m * m + (spec.sample_slab ? 1 : 0);
    default: return 0;
  }
}

Eigen::Index ParamLayout::noise_hyper_size() const {
  switch (spec.noise) {
    case NoisePrior::horseshoe: return 1 + corr_size();
    case NoisePrior::finnish: return 1 + corr_size() + (spec.sample_slab ? 1 : 0);
    default: return 0;
  }
}

std::vector<std::string> ParamLayout::names() const {
  std::vector<std::string> out;
  auto idx = [](const char* base, Eigen::Index i, Eigen::Index j) {
    return std::string(base) + "[" + std::to_string(i) + "][" + std::to_string(j) + "]";
  };
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) out.push_back(idx("B", i, j));
  for (Eigen::Index i = 0; i < m; ++i) out.push_back("log_sigma[" + std::to_string(i) + "]");
  for (Eigen::Index i = 1; i < m; ++i)
    for (Eigen::Index j = 0; j < i; ++j) out.push_back(idx("corr", i, j));
  if (spec.drift == DriftPrior::minnesota) {
    out.push_back("log_lambda");
    out.push_back("logit_theta");
  } else if (spec.drift == DriftPrior::horseshoe || spec.drift == DriftPrior::finnish) {
    out.push_back("log_tau_B");
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) out.push_back(idx("log_lambda_B", i, j));
    if (spec.drift == DriftPrior::finnish && spec.sample_slab) out.push_back("log_c2_B");
  }
  if (spec.noise == NoisePrior::horseshoe || spec.noise == NoisePrior::finnish) {
    out.push_back("log_tau_L");
    for (Eigen::Index i = 1; i < m; ++i)
      for (Eigen::Index j = 0; j < i; ++j) out.push_back(idx("log_lambda_L", i, j));
    if (spec.noise == NoisePrior::finnish && spec.sample_slab) out.push_back("log_c2_L");
  }
  return out;
}

Unpacked unpack(const ParamLayout& layout, const Vector& v) {
  if (v.size() != layout.size()) {
    throw Error(ErrorKind::dimension, "unpack: parameter vector has the wrong length");
  }
  const Eigen::Index m = layout.m;
  Unpacked u;
  u.drift = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), m, m);
  u.log_sigma = v.segment(layout.log_sigma_offset(), m);
  u.sigma = u.log_sigma.array().exp();
  const Vector y = v.segment(layout.corr_offset(), layout.corr_size());
  CorrFactor cf = corr_factor_from_unconstrained(y, m);
  u.corr_factor = std::move(cf.factor);
  u.corr_log_jacobian = cf.log_jacobian;
  const Matrix dl = u.sigma.asDiagonal() * u.corr_factor;
  u.noise = dl * dl.transpose();

  const double default_c2 = layout.spec.slab_scale * layout.spec.slab_scale;
  Eigen::Index h = layout.drift_hyper_offset();
  switch (layout.spec.drift) {
    case DriftPrior::minnesota:
      u.minnesota.lambda = std::exp(v(h));
      u.minnesota.theta = logistic(v(h + 1));
      break;
    case DriftPrior::horseshoe:
    case DriftPrior::finnish:
      u.drift_horseshoe.tau = std::exp(v(h));
      u.drift_horseshoe.lambda =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
              v.data() + h + 1, m, m)
              .array()
              .exp();
      u.drift_horseshoe.c2 = layout.spec.sample_slab && layout.spec.drift == DriftPrior::finnish
                                 ? std::exp(v(h + 1 + m * m))
                                 : default_c2;
      break;
    default: break;
  }
  h = layout.noise_hyper_offset();
  if (layout.spec.noise == NoisePrior::horseshoe || layout.spec.noise == NoisePrior::finnish) {
    const Eigen::Index n = layout.corr_size();
    u.noise_horseshoe.tau = std::exp(v(h));
    u.noise_horseshoe.lambda = v.segment(h + 1, n).array().exp().matrix();
    u.noise_horseshoe.c2 = layout.spec.sample_slab && layout.spec.noise == NoisePrior::finnish
                               ? std::exp(v(h + 1 + n))
                               : default_c2;
  }
  return u;
}

Vector pack(const ParamLayout& layout, const Matrix& drift, const Matrix& noise,
            const MinnesotaHyper& minnesota, double drift_tau, double noise_tau) {
  const Eigen::Index m = layout.m;
  if (drift.rows() != m || drift.cols() != m || noise.rows() != m || noise.cols() != m) {
    throw Error(ErrorKind::dimension, "pack: matrix sizes do not match the layout");
  }
  Vector v = Vector::Zero(layout.size());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) v(i * m + j) = drift(i, j);
  const Matrix l = cholesky(noise);
  const Vector sigma = noise.diagonal().array().sqrt();
  v.segment(layout.log_sigma_offset(), m) = sigma.array().log();
  const Matrix corr_l = sigma.cwiseInverse().asDiagonal() * l;
  if (m > 1) v.segment(layout.corr_offset(), layout.corr_size()) = corr_factor_to_unconstrained(corr_l);

  const double c2 = layout.spec.slab_scale * layout.spec.slab_scale;
  const double default_tau = 0.1 * layout.spec.global_scale;
  Eigen::Index h = layout.drift_hyper_offset();
  switch (layout.spec.drift) {
    case DriftPrior::minnesota:
      v(h) = std::log(minnesota.lambda);
      v(h + 1) = std::log(minnesota.theta / (1.0 - minnesota.theta));
      break;
    case DriftPrior::horseshoe:
    case DriftPrior::finnish:
      v(h) = std::log(drift_tau > 0 ? drift_tau : default_tau);
      if (layout.spec.drift == DriftPrior::finnish && layout.spec.sample_slab)
        v(h + 1 + m * m) = std::log(c2);
      break;
    default: break;
  }
  h = layout.noise_hyper_offset();
  if (layout.spec.noise == NoisePrior::horseshoe || layout.spec.noise == NoisePrior::finnish) {
    v(h) = std::log(noise_tau > 0 ? noise_tau : default_tau);
    if (layout.spec.noise == NoisePrior::finnish && layout.spec.sample_slab)
      v(h + 1 + layout.corr_size()) = std::log(c2);
  }
  return v;
}

void accumulate_noise_gradient(const ParamLayout& layout, const Vector& v, const Unpacked& u,
                               const Matrix& gq, Vector& grad) {
  const Eigen::Index m = layout.m;
  // Q = D C D with C = L L^T, D = diag(sigma).
  const Matrix c = u.corr_factor * u.corr_factor.transpose();
  Vector g_sigma = Vector::Zero(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) acc += gq(k, j) * c(k, j) * u.sigma(j);
    for (Eigen::Index i = 0; i < m; ++i) acc += gq(i, k) * u.sigma(i) * c(i, k);
    g_sigma(k) = acc;
  }
  grad.segment(layout.log_sigma_offset(), m).array() += g_sigma.array() * u.sigma.array();
  if (m > 1) {
    const Matrix gc = u.sigma.asDiagonal() * gq * u.sigma.asDiagonal();
    const Matrix gl = (gc + gc.transpose()) * u.corr_factor;
    const Vector y = v.segment(layout.corr_offset(), layout.corr_size());
    // corr_factor_backward also adds the transform's log-Jacobian gradient; remove it here.
    const Vector with_jac = corr_factor_backward(y, u.corr_factor, gl);
    const Vector jac_only = corr_factor_backward(y, u.corr_factor, Matrix::Zero(m, m));
    grad.segment(layout.corr_offset(), layout.corr_size()) += with_jac - jac_only;
  }
}

ValueAndGradient log_prior(const ParamLayout& layout, const Vector& v, const PriorContext& ctx) {
  const Eigen::Index m = layout.m;
  const PriorSpec& spec = layout.spec;
  const Unpacked u = unpack(layout, v);
  ValueAndGradient out;
  out.gradient = Vector::Zero(layout.size());
  // Saturated tanh coordinates sit on the boundary of the correlation set.
  if (m > 1 && (!(u.corr_factor.diagonal().minCoeff() > 0.0) || !std::isfinite(u.corr_log_jacobian))) {
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  Vector& grad = out.gradient;
  double total = 0.0;

  // Drift.
  switch (spec.drift) {
    case DriftPrior::ml: break;
    case DriftPrior::normal:
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
          const NormalTerm n = normal_term(u.drift(i, j), spec.drift_mean, spec.drift_var);
          total += n.value;
          grad(i * m + j) += n.d_x;
        }
      }
      break;
    case DriftPrior::minnesota: {
      if (ctx.sigma_ref.rows() != m) {
        throw Error(ErrorKind::config, "minnesota prior needs a reference covariance");
      }
      const Matrix g = expm(u.drift, ctx.tau);
      const double lam = u.minnesota.lambda, theta = u.minnesota.theta;
      Matrix gg = Matrix::Zero(m, m);
      double d_log_lambda = 0.0, d_log_theta = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
          if (i == j) {
            const NormalTerm n = normal_term(g(i, i), 1.0, lam);
            total += n.value;
            gg(i, i) = n.d_x;
            d_log_lambda += n.d_log_var;
          } else {
            const double var = lam * theta * ctx.sigma_ref(i, i) / ctx.sigma_ref(j, j);
            const NormalTerm n = normal_term(g(i, j), 0.0, var);
            total += n.value;
            gg(i, j) = n.d_x;
            d_log_lambda += n.d_log_var;
            d_log_theta += n.d_log_var;
          }
        }
      }
      Matrix gb = expm_frechet(u.drift.transpose(), gg, ctx.tau);
      if (spec.minnesota_jacobian) {
        const ExpmLogJacobian jac = expm_log_jacobian(u.drift, ctx.tau);
        if (!std::isfinite(jac.value)) {
          out.value = -std::numeric_limits<double>::infinity();
          out.gradient.setZero();
          return out;
        }
        total += jac.value;
        gb += jac.gradient;
      }
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) grad(i * m + j) += gb(i, j);
      // half-Cauchy(lambda) + log-Jacobian log(lambda); U(theta) + log theta(1 - theta).
      const Eigen::Index h = layout.drift_hyper_offset();
      total += half_cauchy_logpdf(lam, 1.0) + std::log(lam);
      d_log_lambda += -2.0 * lam * lam / (1.0 + lam * lam) + 1.0;
      total += std::log(theta) + std::log1p(-theta);
      grad(h) += d_log_lambda;
      grad(h + 1) += d_log_theta * (1.0 - theta) + (1.0 - 2.0 * theta);
      break;
    }
    case DriftPrior::horseshoe:
    case DriftPrior::finnish: {
      const bool finnish = spec.drift == DriftPrior::finnish;
      const Eigen::Index h = layout.drift_hyper_offset();
      const auto& hs = u.drift_horseshoe;
      const Vector values = v.segment(0, m * m);  // row-major B
      const Vector lambda = v.segment(h + 1, m * m).array().exp();
      Vector d_values = Vector::Zero(m * m), d_log_lambda = Vector::Zero(m * m);
      double d_log_tau = 0.0, d_log_c2 = 0.0;
      total += horseshoe_with_gradient(values, hs.tau, lambda, hs.c2, finnish, &d_values,
                                       &d_log_tau, &d_log_lambda, &d_log_c2);
      grad.segment(0, m * m) += d_values;
      // tau: half-Cauchy(0, global_scale) plus log-Jacobians of every log transform.
      const double r = hs.tau / spec.global_scale;
      total += half_cauchy_logpdf(hs.tau, spec.global_scale) + std::log(hs.tau);
      d_log_tau += -2.0 * r * r / (1.0 + r * r) + 1.0;
      total += v.segment(h + 1, m * m).sum();
      d_log_lambda.array() += 1.0;
      grad(h) += d_log_tau;
      grad.segment(h + 1, m * m) += d_log_lambda;
      if (finnish && spec.sample_slab) {
        const double a = 0.5 * spec.slab_df;
        const double b = a * spec.slab_scale * spec.slab_scale;
        total += inv_gamma_logpdf(hs.c2, a, b) + std::log(hs.c2);
        grad(h + 1 + m * m) += d_log_c2 - (a + 1.0) + b / hs.c2 + 1.0;
      }
      break;
    }
  }

  // Noise.
  const Eigen::Index ls = layout.log_sigma_offset();
  const Eigen::Index nc = layout.corr_size();
  auto add_corr_jacobian = [&]() {
    if (m < 2) return;
    total += u.corr_log_jacobian;
    const Vector y = v.segment(layout.corr_offset(), nc);
    grad.segment(layout.corr_offset(), nc) +=
        corr_factor_backward(y, u.corr_factor, Matrix::Zero(m, m));
  };
  auto add_factor_gradient = [&](const Matrix& gl) {
    if (m < 2) return;
    const Vector y = v.segment(layout.corr_offset(), nc);
    grad.segment(layout.corr_offset(), nc) +=
        corr_factor_backward(y, u.corr_factor, gl) -
        corr_factor_backward(y, u.corr_factor, Matrix::Zero(m, m));
  };
  auto add_scale_prior = [&]() {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = u.sigma(i);
      const double r = s / spec.scale;
      double d_s;
      if (spec.scale_family == ScaleFamily::half_normal) {
        total += half_normal_logpdf(s, spec.scale);
        d_s = -s / (spec.scale * spec.scale);
      } else {
        total += half_cauchy_logpdf(s, spec.scale);
        d_s = -2.0 * r / (spec.scale * (1.0 + r * r));
      }
      // sigma = exp(u): Jacobian log sigma.
      total += u.log_sigma(i);
      grad(ls + i) += d_s * s + 1.0;
    }
  };
  auto volume_gradient = [&](double coeff_shift) {
    Matrix gl = Matrix::Zero(m, m);
    for (Eigen::Index i = 1; i < m; ++i) {
      gl(i, i) = (static_cast<double>(m - i - 1) + coeff_shift) / u.corr_factor(i, i);
    }
    return gl;
  };

  switch (spec.noise) {
    case NoisePrior::ml: break;
    case NoisePrior::normal: {
      Matrix gq = Matrix::Zero(m, m);
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
          const NormalTerm n = normal_term(u.noise(i, j), spec.noise_mean, spec.noise_var);
          total += n.value;
          gq(i, j) = n.d_x;
        }
      }
      accumulate_noise_gradient(layout, v, u, gq, grad);
      // Jacobian of (log sigma, corr coordinates) -> unique entries of Q.
      total += static_cast<double>(m + 1) * u.log_sigma.sum() + static_cast<double>(m) * std::log(2.0);
      grad.segment(ls, m).array() += static_cast<double>(m + 1);
      if (m > 1) {
        total += lkj_volume_term(u.corr_factor);
        add_factor_gradient(volume_gradient(0.0));
      }
      add_corr_jacobian();
      break;
    }
    case NoisePrior::lkj: {
      add_scale_prior();
      if (m > 1) {
        total += logpdf_lkj(u.corr_factor, spec.lkj_eta);
        add_factor_gradient(volume_gradient(2.0 * (spec.lkj_eta - 1.0)));
      }
      add_corr_jacobian();
      break;
    }
    case NoisePrior::horseshoe:
    case NoisePrior::finnish: {
      add_scale_prior();
      add_corr_jacobian();
      const bool finnish = spec.noise == NoisePrior::finnish;
      const Eigen::Index h = layout.noise_hyper_offset();
      const auto& hs = u.noise_horseshoe;
      const Vector values = strict_lower(u.corr_factor);
      const Vector lambda = v.segment(h + 1, nc).array().exp();
      Vector d_values = Vector::Zero(nc), d_log_lambda = Vector::Zero(nc);
      double d_log_tau = 0.0, d_log_c2 = 0.0;
      total += horseshoe_with_gradient(values, hs.tau, lambda, hs.c2, finnish, &d_values,
                                       &d_log_tau, &d_log_lambda, &d_log_c2);
      if (m > 1) {
        Matrix gl = Matrix::Zero(m, m);
        Eigen::Index k = 0;
        for (Eigen::Index i = 1; i < m; ++i)
          for (Eigen::Index j = 0; j < i; ++j) gl(i, j) = d_values(k++);
        add_factor_gradient(gl);
      }
      const double r = hs.tau / spec.global_scale;
      total += half_cauchy_logpdf(hs.tau, spec.global_scale) + std::log(hs.tau);
      d_log_tau += -2.0 * r * r / (1.0 + r * r) + 1.0;
      total += v.segment(h + 1, nc).sum();
      d_log_lambda.array() += 1.0;
      grad(h) += d_log_tau;
      grad.segment(h + 1, nc) += d_log_lambda;
      if (finnish && spec.sample_slab) {
        const double a = 0.5 * spec.slab_df;
        const double b = a * spec.slab_scale * spec.slab_scale;
        total += inv_gamma_logpdf(hs.c2, a, b) + std::log(hs.c2);
        grad(h + 1 + nc) += d_log_c2 - (a + 1.0) + b / hs.c2 + 1.0;
      }
      break;
    }
  }
  out.value = total;
  return out;
}

Vector gradient_prior(const ParamLayout& layout, const Vector& v, const PriorContext& ctx) {
  return log_prior(layout, v, ctx).gradient;
}

}  // namespace blim
