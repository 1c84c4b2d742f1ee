// blim: fit linear inverse models and score their ensemble forecasts.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "blim/errors.hpp"
#include "blim/experiments.hpp"
#include "blim/random.hpp"

using namespace blim;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<int> threads;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration");
  sub->add_option("--seed", c.seed, "overrides the configured seed");
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
  sub->add_option("--threads", c.threads, "worker threads");
}

io::Json load_config(const Common& c) {
  if (c.config.empty()) return io::Json::object();
  return io::read_json(c.config);
}

std::string out_path(const Common& c, const std::string& name) {
  return (std::filesystem::path(c.out) / name).string();
}

void echo_config(const Common& c, const io::Json& resolved) {
  io::ensure_directory(c.out);
  io::write_json(out_path(c, "config.json"), resolved);
}

std::string fixed(double x, int digits = 2) {
  if (!std::isfinite(x)) return std::isnan(x) ? "nan" : "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

// ---------------------------------------------------------------------------

int run_synth_field(const Common& c) {
  io::Json doc = load_config(c);
  SynthSpec spec = synth_spec_from_json(doc);
  if (c.seed) spec.seed = *c.seed;
  echo_config(c, synth_spec_to_json(spec));
  const SynthOutput s = synth_field_full(spec);
  write_field(out_path(c, "field"), s.field);
  io::write_json(out_path(c, "modes.json"), lim_to_json(s.modes));
  std::cout << "field " << s.field.length() << " x " << s.field.n_points() << " written to "
            << out_path(c, "field.csv") << "\n";
  return 0;
}

int run_eof(const Common& c) {
  const io::Json doc = load_config(c);
  const std::string field_path = doc.value("field", std::string());
  if (field_path.empty()) throw Error(ErrorKind::config, "eof: config needs 'field' (a synth-field prefix)");
  const auto k = doc.value("k", Eigen::Index{10});
  const bool area_weight = doc.value("area_weight", true);
  const auto smooth = doc.value("smooth", Eigen::Index{1});
  auto n_train = doc.value("n_train", Eigen::Index{0});
  echo_config(c, {{"field", field_path}, {"k", k}, {"area_weight", area_weight}, {"smooth", smooth},
                  {"n_train", n_train}});
  GriddedField field = read_field(field_path);
  if (smooth > 1) {
    TimeSeries raw;
    raw.dt = field.dt;
    raw.values = field.values;
    field.values = moving_average(raw, smooth).values;
  }
  if (n_train <= 0) n_train = field.length();
  const EofFit fit = fit_eof(slice_field(field, 0, n_train), k, area_weight);
  io::write_json(out_path(c, "basis.json"), basis_to_json(fit.basis));
  write_series_csv(project(fit.basis, field), out_path(c, "pcs.csv"));
  std::cout << "leading " << k << " modes explain " << fixed(100.0 * fit.basis.explained.sum(), 1)
            << "% of the variance\n";
  return 0;
}

int run_simulate(const Common& c) {
  const io::Json doc = load_config(c);
  LimParams params;
  if (doc.contains("params_path")) {
    params = lim_from_json(io::read_json(doc["params_path"].get<std::string>()));
  } else if (doc.contains("params")) {
    params = lim_from_json(doc["params"]);
  } else {
    throw Error(ErrorKind::config, "simulate: config needs 'params' with fields B, Q (or 'params_path')");
  }
  const double dt = doc.value("dt", 1e-3);
  const auto n_obs = doc.value("n_obs", std::int64_t{1000});
  const auto stride = doc.value("stride", std::int64_t{1});
  const std::string method = doc.value("method", std::string("em"));
  std::uint64_t seed = doc.value("seed", std::uint64_t{0});
  if (c.seed) seed = *c.seed;
  if (!(dt > 0.0) || n_obs < 1 || stride < 1) {
    throw Error(ErrorKind::config, "simulate: need dt > 0, n_obs >= 1, stride >= 1");
  }
  if (method != "em" && method != "exact") throw Error(ErrorKind::config, "simulate: method must be em|exact");
  Vector x0;
  if (doc.contains("x0")) {
    x0 = io::vector_from_json(doc["x0"]);
  } else {
    x0 = draw_stationary(params, stream_key(seed, {0x30}));
  }
  io::Json resolved = {{"params", lim_to_json(params)}, {"dt", dt},         {"n_obs", n_obs},
                       {"stride", stride},              {"method", method}, {"seed", seed},
                       {"x0", io::vector_to_json(x0)}};
  echo_config(c, resolved);
  TimeSeries series;
  if (method == "em") {
    EmOptions em;
    em.quiet = true;
    series = subsample(simulate_em(params, x0, dt, (n_obs - 1) * stride, seed, em), stride);
  } else {
    series = simulate_exact(params, x0, dt * static_cast<double>(stride), n_obs, seed);
  }
  write_series_csv(series, out_path(c, "series.csv"));
  std::cout << series.length() << " observations at spacing " << series.dt << " written to "
            << out_path(c, "series.csv") << "\n";
  return 0;
}

int run_fit(const Common& c) {
  FitConfig cfg = fit_config_from_json(load_config(c));
  if (c.seed) cfg.hmc.seed = *c.seed;
  if (c.threads) cfg.hmc.threads = *c.threads;
  if (cfg.series.empty()) throw Error(ErrorKind::config, "fit: config needs 'series' (a CSV path)");
  echo_config(c, fit_config_to_json(cfg));
  const TimeSeries series = read_series_csv(cfg.series);
  const ModelFit fit = fit_model(series, cfg.tau_steps, cfg.prior, cfg.hmc, cfg.sample, cfg.map, cfg.map_options);
  write_fit(c.out, fit);
  std::cout << "prior " << pair_label(cfg.prior.drift, cfg.prior.noise) << ", tau_steps " << cfg.tau_steps << "\n";
  std::cout << "ML: B-hat " << (fit.mle.drift ? "defined" : "undefined (" + fit.mle.drift_undefined_reason + ")")
            << "\n";
  if (fit.map) {
    std::cout << "MAP: log posterior " << fit.map->log_post << ", " << fit.map->iterations << " iterations, "
              << (fit.map->converged ? "converged" : "not converged") << "\n";
  }
  if (fit.posterior) {
    const auto& d = fit.posterior->diag;
    std::cout << "HMC: " << fit.posterior->chains.size() << " chains, max R-hat " << fixed(d.max_rhat(), 3)
              << ", min bulk ESS " << fixed(d.min_ess(), 0) << "\n";
    for (std::size_t k = 0; k < fit.posterior->chains.size(); ++k) {
      const auto& ch = fit.posterior->chains[k];
      std::cout << "  chain " << k << ": accept " << fixed(ch.accept_rate, 3) << ", step " << ch.step_size
                << ", divergences " << ch.divergence_count << "\n";
    }
  }
  if (!fit.converged(cfg.rhat_threshold)) {
    std::cerr << "fit did not converge (MAP stationarity or R-hat above " << cfg.rhat_threshold << ")\n";
    return 2;
  }
  return 0;
}

int run_perfect_model_cmd(const Common& c) {
  PerfectModelConfig cfg = perfect_model_config_from_json(load_config(c));
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.hmc.threads = *c.threads;
  echo_config(c, perfect_model_config_to_json(cfg));
  const PerfectModelReport report = run_perfect_model(cfg);
  write_perfect_model(c.out, cfg, report);
  std::cout << "pair          N   err B %   err Q %\n";
  for (const auto& pair : cfg.pairs) {
    for (Eigen::Index n : cfg.lengths) {
      char line[128];
      std::snprintf(line, sizeof(line), "%-11s %4ld %9s %9s\n", pair.c_str(), static_cast<long>(n),
                    fixed(report.median_drift(pair, n), 1).c_str(), fixed(report.median_noise(pair, n), 1).c_str());
      std::cout << line;
    }
  }
  return 0;
}

int run_forecast_eval_cmd(const Common& c) {
  ForecastEvalConfig cfg = forecast_eval_config_from_json(load_config(c));
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  echo_config(c, forecast_eval_config_to_json(cfg));
  const ForecastEvalReport report = run_forecast_eval(cfg);
  write_forecast_eval(c.out, cfg, report);
  std::cout << "method        ";
  for (auto l : cfg.leads) std::cout << " lead " << l << " ";
  std::cout << "\n";
  for (const auto& m : report.methods) {
    char name[32];
    std::snprintf(name, sizeof(name), "%-13s", m.method.c_str());
    std::cout << name;
    for (const auto& l : m.leads) std::cout << "  " << fixed(l.corr_weighted, 3) << " ";
    std::cout << "\n";
  }
  return 0;
}

int run_score(const Common& c) {
  const io::Json doc = load_config(c);
  const std::string series_path = doc.value("series", std::string());
  const std::string ens_path = doc.value("ensemble", std::string());
  if (series_path.empty() || ens_path.empty()) {
    throw Error(ErrorKind::config, "score: config needs 'series' (CSV) and 'ensemble' (directory)");
  }
  const TimeSeries observed = read_series_csv(series_path);
  const ForecastEnsemble ens = read_ensemble(ens_path);
  std::vector<Eigen::Index> leads;
  for (Eigen::Index l = 1; l <= ens.lead_steps; ++l) leads.push_back(l);
  leads = doc.value("leads", leads);
  echo_config(c, {{"series", series_path}, {"ensemble", ens_path}, {"leads", leads}});
  io::Json scores = io::Json::array();
  std::string residuals = "lead,observed_freq,residual\n";
  for (Eigen::Index lead : leads) {
    const EnsembleScore s = score_ensemble(ens, observed, lead);
    scores.push_back({{"lead", lead},
                      {"correlation", s.corr_pc},
                      {"skillful", s.corr_pc > kSkillThreshold},
                      {"calibration_error", s.calibration},
                      {"spread", s.spread}});
    for (const auto& [fo, r] : s.residuals) {
      residuals += std::to_string(lead) + "," + io::format_double(fo) + "," + io::format_double(r) + "\n";
    }
    std::cout << "lead " << lead << ": correlation " << fixed(s.corr_pc, 3) << ", calibration error "
              << fixed(s.calibration, 4) << "\n";
  }
  io::write_json(out_path(c, "scores.json"), {{"provenance", ens.provenance}, {"scores", scores}});
  io::write_text(out_path(c, "residuals.csv"), residuals);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear inverse models: ML and Bayesian fits, perfect-model and forecast experiments"};
  app.require_subcommand(1);
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Common&);
  };
  const Entry entries[] = {
      {"synth-field", "synthesize a gridded field driven by a random LIM", run_synth_field},
      {"eof", "EOF truncation of a field", run_eof},
      {"simulate", "simulate an OU path (Euler-Maruyama or exact)", run_simulate},
      {"fit", "ML, MAP and HMC fits of a series", run_fit},
      {"perfect-model", "parameter recovery from simulated series", run_perfect_model_cmd},
      {"forecast-eval", "ensemble forecasts and skill on a field", run_forecast_eval_cmd},
      {"score", "score a stored ensemble against observations", run_score},
  };
  std::vector<Common> commons(std::size(entries));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(entries); ++i) {
    subs.push_back(app.add_subcommand(entries[i].name, entries[i].help));
    add_common(subs.back(), commons[i]);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const int code = entries[i].run(commons[i]);
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << entries[i].name << " finished in " << fixed(sec, 1) << " s\n";
      return code;
    } catch (const Error& e) {
      std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
      return e.kind() == ErrorKind::divergence ? 2 : 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 1;
}
