#pragma once

// Ensemble forecasts from ML estimates, posterior draws, and VAR(p) baselines.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blim/likelihood.hpp"
#include "blim/priors.hpp"

namespace blim {

/// One-step transition x' = G x + F z with F F^T = Sigma.
struct StepModel {
  Matrix propagator;
  Matrix noise_factor;
};

StepModel step_model(const Matrix& propagator, const Matrix& increment);
/// Uses G-hat and Sigma-hat directly; needs tau_steps = 1.
StepModel step_model_from_mle(const MleResult& mle);
/// One entry per draw; nullopt where B is unstable or Sigma is not SPD.
std::vector<std::optional<StepModel>> step_models_from_chain(const ParamLayout& layout,
                                                             const Matrix& draws, double dt);
/// Mean of G and of Sigma over the valid draws.
StepModel mean_step_model(const std::vector<std::optional<StepModel>>& models);

struct ForecastOptions {
  Eigen::Index lead_steps = 1;
  Eigen::Index n_members = 100;
  std::uint64_t seed = 0;
  bool suppress_noise = false;
  bool per_member_draw = false;  // one parameter draw per member instead of per step
  int threads = 1;
};

struct ForecastEnsemble {
  Eigen::Index lead_steps = 0;
  Eigen::Index n_members = 0;
  std::vector<Eigen::Index> init_index;       // rows of the data the forecasts start from
  std::vector<std::vector<Matrix>> states;    // [init][lead - 1]: n_members x m
  std::string provenance;
  std::uint64_t seed = 0;
  std::int64_t redraws = 0;  // rejected parameter draws

  Eigen::Index n_init() const { return static_cast<Eigen::Index>(init_index.size()); }
  Eigen::Index dim() const;
  const Matrix& at(Eigen::Index init, Eigen::Index lead) const;
};

ForecastEnsemble forecast_fixed(const StepModel& model, const TimeSeries& data,
                                const std::vector<Eigen::Index>& inits,
                                const ForecastOptions& options, const std::string& provenance);
ForecastEnsemble forecast_ml(const MleResult& mle, const TimeSeries& data,
                             const std::vector<Eigen::Index>& inits, const ForecastOptions& options);
/// A fresh uniformly chosen draw per member per step (or per member).
ForecastEnsemble forecast_posterior(const std::vector<std::optional<StepModel>>& draws,
                                    const TimeSeries& data, const std::vector<Eigen::Index>& inits,
                                    const ForecastOptions& options, const std::string& provenance);

/// Member median per init and dimension at one lead; even counts interpolate.
Matrix median_path(const ForecastEnsemble& ens, Eigen::Index lead);
double median(std::vector<double> values);

struct VarModel {
  int p = 1;
  std::vector<Matrix> coefficients;  // A_1..A_p
  Matrix innovation;
  Eigen::Index dim() const { return innovation.rows(); }
};

/// Least squares of y_t on [y_{t-1}, ..., y_{t-p}], no intercept; innovation
/// covariance with divisor count - m p - 1.
VarModel fit_var(const TimeSeries& series, int p);
ForecastEnsemble forecast_var(const VarModel& model, const TimeSeries& data,
                              const std::vector<Eigen::Index>& inits, const ForecastOptions& options);

io::Json var_to_json(const VarModel& v);
VarModel var_from_json(const io::Json& j);

/// One CSV per init (lead, member, x0..) plus manifest.json.
void write_ensemble(const std::string& dir, const ForecastEnsemble& ens);
ForecastEnsemble read_ensemble(const std::string& dir);

}  // namespace blim
