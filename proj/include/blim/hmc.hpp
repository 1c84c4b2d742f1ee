#pragma once

// Fixed-length leapfrog HMC with jittered trajectory length, dual-averaging
// step size, diagonal mass matrix, and multi-chain diagnostics.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blim/io.hpp"
#include "blim/linalg.hpp"
#include "blim/priors.hpp"

namespace blim {

/// Log density and gradient; value -inf marks points outside the support.
using LogDensity = std::function<ValueAndGradient(const Vector&)>;

struct HmcConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_samples = 1000;
  int max_leapfrog = 32;  // L ~ U{1..max_leapfrog} when jitter is on
  bool jitter = true;
  double step_size = 0.0;  // <= 0: found by the doubling heuristic
  Vector inv_mass;         // empty: ones
  bool adapt_mass = true;
  double target_accept = 0.8;
  double divergence_threshold = 1000.0;
  double init_jitter = 0.0;  // uniform perturbation applied to chain inits
  std::uint64_t seed = 0;
  int threads = 0;  // 0: one per chain up to the hardware count

  void validate() const;
};

io::Json hmc_config_to_json(const HmcConfig& c);
HmcConfig hmc_config_from_json(const io::Json& j);

struct LeapfrogResult {
  Vector theta;
  Vector rho;
  double delta_h = 0.0;  // H(end) - H(start)
  bool divergent = false;
  ValueAndGradient end;
};

/// L steps of half-kick / drift / half-kick with K(rho) = rho^T M^-1 rho / 2.
/// `start` is the target evaluated at theta.
LeapfrogResult leapfrog(const LogDensity& target, const Vector& theta, const Vector& rho,
                        double dt, int steps, const Vector& inv_mass,
                        const ValueAndGradient& start, double divergence_threshold = 1000.0);

/// Nesterov dual averaging of log step size (Hoffman and Gelman).
class DualAveraging {
 public:
  explicit DualAveraging(double step_size, double target = 0.8);
  void restart(double step_size);
  /// Feeds one acceptance statistic; returns the next step size.
  double update(double accept_stat);
  double step_size() const { return std::exp(log_step_); }
  double final_step_size() const { return std::exp(log_step_bar_); }

 private:
  double target_;
  double mu_ = 0.0;
  double h_bar_ = 0.0;
  double log_step_ = 0.0;
  double log_step_bar_ = 0.0;
  int t_ = 0;
};

struct ParameterChain {
  Matrix draws;        // n_samples x dim
  Vector log_density;  // per draw
  double accept_rate = 0.0;
  int divergence_count = 0;
  int warmup_divergences = 0;
  double step_size = 0.0;
  Vector inv_mass;
};

struct Diagnostics {
  Vector rhat;       // NaN where degenerate
  Vector ess_bulk;   // rank-normalized
  Vector ess_mean;   // raw draws
  Vector mean;
  Vector variance;
  Vector mcse_mean;
  Vector mcse_variance;
  std::vector<bool> degenerate;
  bool any_degenerate() const;
  double max_rhat() const;  // over non-degenerate dimensions
  double min_ess() const;
};

/// Split-Rhat (max of rank-normalized and folded), bulk ESS, MCSE.
/// Needs >= 2 chains of >= 4 draws.
Diagnostics diagnostics(const std::vector<Matrix>& chains);
Diagnostics diagnostics(const std::vector<ParameterChain>& chains);

/// Geyer initial-monotone-sequence ESS for one dimension across chains.
double effective_sample_size(const std::vector<Vector>& chains);

struct SampleResult {
  std::vector<ParameterChain> chains;
  Diagnostics diag;
  Matrix pooled() const;  // all draws stacked chain by chain
};

/// One init per chain, or a single init reused (with init_jitter) by all.
SampleResult sample(const LogDensity& target, const std::vector<Vector>& inits,
                    const HmcConfig& config);

void write_chain_csv(const std::string& path, const ParameterChain& chain,
                     const std::vector<std::string>& names);
Matrix read_chain_csv(const std::string& path);
io::Json diagnostics_to_json(const SampleResult& result, const std::vector<std::string>& names);

}  // namespace blim
