#pragma once

// The two end-to-end experiments (perfect-model recovery and forecast
// evaluation) and the fit pipeline they share with the command-line tool.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blim/eof.hpp"
#include "blim/hmc.hpp"
#include "blim/metrics.hpp"
#include "blim/posterior.hpp"

namespace blim {

/// "MINN_LKJ" style label onto a copy of base.
PriorSpec prior_from_label(const std::string& label, PriorSpec base = {});

io::Json lim_to_json(const LimParams& p);
LimParams lim_from_json(const io::Json& j);

struct FitConfig {
  std::string series;  // CSV path
  Eigen::Index tau_steps = 1;
  PriorSpec prior;
  HmcConfig hmc;
  bool sample = true;  // HMC for non-flat priors
  bool map = true;  // skipped for priors with hyperparameters
  MapOptions map_options;
  double rhat_threshold = 1.1;
};

io::Json fit_config_to_json(const FitConfig& c);
FitConfig fit_config_from_json(const io::Json& j);

struct ModelFit {
  PriorSpec prior;
  Eigen::Index tau_steps = 1;
  double dt = 1.0;
  MleResult mle;
  std::optional<MapResult> map;
  std::optional<SampleResult> posterior;
  std::vector<std::string> names;
  io::Json map_doc;
  io::Json diagnostics_doc;
  io::Json posterior_mean_doc;

  bool flat() const { return prior.drift == DriftPrior::ml && prior.noise == NoisePrior::ml; }
  /// MAP did not converge or some R-hat is above the threshold.
  bool converged(double rhat_threshold) const;
};

ModelFit fit_model(const TimeSeries& series, Eigen::Index tau_steps, const PriorSpec& prior,
                   const HmcConfig& hmc, bool sample, bool map, const MapOptions& map_options = {});

/// mle.json, and for non-flat priors map.json, chain_<c>.csv, diagnostics.json;
/// fit.json records prior, tau and chain count.
void write_fit(const std::string& dir, const ModelFit& fit);
/// Posterior draws of a fit directory written by write_fit.
struct StoredPosterior {
  PriorSpec prior;
  Eigen::Index dim = 0;
  double dt = 1.0;
  Matrix draws;
};
StoredPosterior read_posterior(const std::string& dir);

/// Posterior mean of B (directly) and of Q (through the transform).
LimParams posterior_mean(const ParamLayout& layout, const Matrix& draws);

// ---------------------------------------------------------------------------

struct PerfectModelConfig {
  SynthSpec field;
  Eigen::Index k = 10;
  std::string truth;               // LimParams JSON path; empty: MAP fit on the field
  std::string truth_pair = "N_LKJ";
  double dt_em = 1e-3;
  double obs_dt = 1.0;
  std::vector<Eigen::Index> lengths{50, 100, 1000};
  std::vector<std::string> pairs{"ML_ML", "N_N", "MINN_LKJ", "MINN_HORSE", "HORSE_N"};
  int replicates = 1;
  PriorSpec prior;  // hyperparameters shared by every pair
  HmcConfig hmc;
  bool self_check = false;  // estimate := truth
  std::uint64_t seed = 0;
};

io::Json perfect_model_config_to_json(const PerfectModelConfig& c);
PerfectModelConfig perfect_model_config_from_json(const io::Json& j);

struct PerfectModelRow {
  std::string pair;
  Eigen::Index length = 0;
  int replicate = 0;
  double err_drift = 0.0;  // percent; infinity when undefined
  double err_noise = 0.0;
  double max_rhat = 0.0;   // NaN for ML
  std::string note;
};

struct PerfectModelReport {
  LimParams truth;
  std::vector<PerfectModelRow> rows;
  /// Median over replicates.
  double median_drift(const std::string& pair, Eigen::Index length) const;
  double median_noise(const std::string& pair, Eigen::Index length) const;
};

/// Truth from a MAP fit on unit-variance PCs of a synthetic field.
LimParams perfect_model_truth(const PerfectModelConfig& config);
PerfectModelReport run_perfect_model(const PerfectModelConfig& config);
void write_perfect_model(const std::string& dir, const PerfectModelConfig& config,
                         const PerfectModelReport& report);

// ---------------------------------------------------------------------------

struct EnsembleScore {
  Eigen::Index lead = 0;
  double corr_pc = 0.0;      // flattened median path against the observations
  double calibration = 0.0;  // pooled over dimensions
  double spread = 0.0;       // mean trace of the member covariance
  std::vector<std::pair<double, double>> residuals;
};

/// Observed lagged differences are taken at the ensemble's init indices.
EnsembleScore score_ensemble(const ForecastEnsemble& ens, const TimeSeries& observed, Eigen::Index lead);

struct ForecastEvalConfig {
  SynthSpec field;
  std::string field_path;  // write_field prefix; empty: synthesize
  Eigen::Index k = 10;
  Eigen::Index smooth = 3;
  Eigen::Index n_train = 900;
  Eigen::Index n_test = 500;
  std::vector<std::string> methods{"ML", "MINN+LKJ", "MINN+HORSE", "VAR(2)", "VAR(3)"};
  std::vector<Eigen::Index> leads{1, 2, 3, 4, 5};
  std::vector<Eigen::Index> map_leads{1, 2};
  Eigen::Index n_members = 100;
  bool per_member_draw = false;
  PriorSpec prior;
  HmcConfig hmc;
  std::map<std::string, std::string> fits;  // method -> fit directory
  bool fit_missing = true;
  double skill_threshold = kSkillThreshold;
  bool write_ensembles = false;
  std::uint64_t seed = 0;
  int threads = 1;
};

io::Json forecast_eval_config_to_json(const ForecastEvalConfig& c);
ForecastEvalConfig forecast_eval_config_from_json(const io::Json& j);

struct LeadScore {
  Eigen::Index lead = 0;
  double corr_weighted = 0.0;  // cos-lat weighted mean of gridpoint correlations
  double corr_mean = 0.0;
  double corr_max = 0.0;
  double corr_pc = 0.0;        // flattened PC-space correlation
  double calibration = 0.0;    // pooled PC-space calibration error
  double spread = 0.0;         // mean trace of the member covariance
  double fixed_spread = 0.0;   // same draws, posterior-mean parameters; NaN for ML and VAR
  std::vector<std::pair<double, double>> residuals;
  Vector corr_map;
  Vector calibration_map;      // empty unless lead is in map_leads
};

struct MethodScores {
  std::string method;
  std::vector<LeadScore> leads;
  const LeadScore& at(Eigen::Index lead) const;
};

struct ForecastEvalReport {
  Vector explained;
  Vector lat, lon;
  std::vector<MethodScores> methods;
  std::vector<ForecastEnsemble> ensembles;  // kept when write_ensembles
  TimeSeries pcs;
  const MethodScores& at(const std::string& method) const;
};

ForecastEvalReport run_forecast_eval(const ForecastEvalConfig& config);
void write_forecast_eval(const std::string& dir, const ForecastEvalConfig& config,
                         const ForecastEvalReport& report);

/// File-system-safe method name: MINN+LKJ -> MINN_LKJ, VAR(2) -> VAR2.
std::string method_slug(const std::string& method);

}  // namespace blim
