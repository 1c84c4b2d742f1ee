#pragma once

// Approximate marginal posterior over (B, Q, hypers) in unconstrained
// coordinates: the lag-tau conditional likelihood at G = expm(B tau),
// Sigma = Lambda - G Lambda G^T, plus the log prior, plus MAP search.

#include <vector>

#include "blim/likelihood.hpp"
#include "blim/priors.hpp"

namespace blim {

class LogPosterior {
 public:
  /// sigma_ref for the Minnesota prior is the diagonal of the ML Sigma-hat.
  LogPosterior(const TimeSeries& series, Eigen::Index tau_steps, const PriorSpec& prior);
  LogPosterior(LagStatistics stats, double dt, const PriorSpec& prior, Matrix sigma_ref);

  const ParamLayout& layout() const { return layout_; }
  const LagStatistics& stats() const { return stats_; }
  const PriorContext& context() const { return ctx_; }
  double tau() const { return ctx_.tau; }
  Eigen::Index dim() const { return layout_.size(); }

  /// -infinity when B is not stable or Sigma is not SPD; never NaN.
  double log_post(const Vector& v) const;
  /// Value and gradient; the gradient is zero when the value is -infinity.
  ValueAndGradient evaluate(const Vector& v) const;
  Vector grad_log_post(const Vector& v) const { return evaluate(v).gradient; }

  /// B from logm of G-hat shrunk toward 0.5 I (5% per attempt until the
  /// logarithm exists and is stable), Q from the FDR at that B (falling back
  /// to Sigma-hat / tau), default hypers.
  Vector initial_point() const;

  LimParams params(const Vector& v) const;

 private:
  LagStatistics stats_;
  ParamLayout layout_;
  PriorContext ctx_;
  Matrix ml_propagator_;
  Matrix ml_increment_;
};

struct MapOptions {
  int max_iters = 2000;
  double tol = 1e-6;
};

struct MapResult {
  Vector point;
  double log_post = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // log_post after each accepted step
};

/// BFGS ascent with backtracking; stops when |grad| <= tol (1 + |log_post|).
MapResult find_map(const LogPosterior& lp, const Vector& init, const MapOptions& options = {});

/// MleResult-shaped JSON for an estimate at v, plus prior and convergence.
io::Json estimate_to_json(const LogPosterior& lp, const Vector& v, const std::string& kind);
io::Json map_to_json(const LogPosterior& lp, const MapResult& result);

}  // namespace blim
