#include "blim/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "blim/errors.hpp"
#include "blim/random.hpp"

namespace blim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* const kLabelHelp = "drift ML|N|MINN|HORSE|FINN, noise ML|N|LKJ|HORSE|FINN, e.g. MINN_LKJ";

io::Json finite_or_null(double x) { return std::isfinite(x) ? io::Json(x) : io::Json(nullptr); }

std::string path_join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

double trace_cov(const Matrix& x) {
  if (x.rows() < 2) return 0.0;
  const Matrix c = x.rowwise() - x.colwise().mean();
  return c.squaredNorm() / static_cast<double>(x.rows() - 1);
}

double rel_err_pct(const Matrix& est, const Matrix& truth) {
  return 100.0 * (est - truth).norm() / truth.norm();
}

void write_lines(const std::string& path, const std::string& header,
                 const std::vector<std::string>& lines) {
  std::string out = header + "\n";
  for (const auto& l : lines) out += l + "\n";
  io::write_text(path, out);
}

std::string join(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string fmt(double x) { return io::format_double(x); }

int var_order(const std::string& method) {
  if (method.rfind("VAR(", 0) != 0 || method.back() != ')') return 0;
  const int p = std::stoi(method.substr(4, method.size() - 5));
  if (p < 1) throw Error(ErrorKind::config, "forecast-eval: bad VAR order in " + method);
  return p;
}

}  // namespace

PriorSpec prior_from_label(const std::string& label, PriorSpec base) {
  const auto cut = label.find('_');
  if (cut == std::string::npos) {
    throw Error(ErrorKind::config, "unknown prior pair '" + label + "' (" + kLabelHelp + ")");
  }
  const std::string d = label.substr(0, cut), n = label.substr(cut + 1);
  if (d == "ML") base.drift = DriftPrior::ml;
  else if (d == "N") base.drift = DriftPrior::normal;
  else if (d == "MINN") base.drift = DriftPrior::minnesota;
  else if (d == "HORSE") base.drift = DriftPrior::horseshoe;
  else if (d == "FINN") base.drift = DriftPrior::finnish;
  else throw Error(ErrorKind::config, "unknown prior pair '" + label + "' (" + kLabelHelp + ")");
  if (n == "ML") base.noise = NoisePrior::ml;
  else if (n == "N") base.noise = NoisePrior::normal;
  else if (n == "LKJ") base.noise = NoisePrior::lkj;
  else if (n == "HORSE") base.noise = NoisePrior::horseshoe;
  else if (n == "FINN") base.noise = NoisePrior::finnish;
  else throw Error(ErrorKind::config, "unknown prior pair '" + label + "' (" + kLabelHelp + ")");
  return base;
}

io::Json lim_to_json(const LimParams& p) {
  return {{"B", io::matrix_to_json(p.drift)}, {"Q", io::matrix_to_json(p.noise)}};
}

LimParams lim_from_json(const io::Json& j) {
  std::string missing;
  for (const char* key : {"B", "Q"}) {
    if (!j.contains(key)) missing += missing.empty() ? key : std::string(", ") + key;
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::config, "LIM parameters: missing " + missing + " (required fields: B, Q)");
  }
  LimParams p{io::matrix_from_json(j.at("B")), io::matrix_from_json(j.at("Q"))};
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// fit

io::Json fit_config_to_json(const FitConfig& c) {
  return {{"series", c.series},
          {"tau_steps", c.tau_steps},
          {"prior", prior_to_json(c.prior)},
          {"hmc", hmc_config_to_json(c.hmc)},
          {"sample", c.sample},
          {"map", c.map},
          {"map_max_iters", c.map_options.max_iters},
          {"map_tol", c.map_options.tol},
          {"rhat_threshold", c.rhat_threshold}};
}

FitConfig fit_config_from_json(const io::Json& j) {
  FitConfig c;
  c.series = j.value("series", c.series);
  c.tau_steps = j.value("tau_steps", c.tau_steps);
  if (j.contains("prior")) c.prior = prior_from_json(j["prior"]);
  if (j.contains("hmc")) c.hmc = hmc_config_from_json(j["hmc"]);
  c.sample = j.value("sample", c.sample);
  c.map = j.value("map", c.map);
  c.map_options.max_iters = j.value("map_max_iters", c.map_options.max_iters);
  c.map_options.tol = j.value("map_tol", c.map_options.tol);
  c.rhat_threshold = j.value("rhat_threshold", c.rhat_threshold);
  if (c.tau_steps < 1) throw Error(ErrorKind::config, "fit: tau_steps must be at least 1");
  return c;
}

bool ModelFit::converged(double rhat_threshold) const {
  if (map && !map->converged) return false;
  if (posterior) {
    const double r = posterior->diag.max_rhat();
    if (!(r <= rhat_threshold)) return false;
  }
  return true;
}

ModelFit fit_model(const TimeSeries& series, Eigen::Index tau_steps, const PriorSpec& prior,
                   const HmcConfig& hmc, bool sample_posterior, bool map, const MapOptions& map_options) {
  ModelFit fit;
  fit.prior = prior;
  fit.tau_steps = tau_steps;
  fit.dt = series.dt;
  fit.mle = fit_mle(series, tau_steps);
  if (fit.flat()) return fit;
  LogPosterior lp(series, tau_steps, prior);
  fit.names = lp.layout().names();
  const Vector init = lp.initial_point();
  // Hierarchical joint modes sit on the boundary (scales -> 0).
  const bool hierarchical = lp.layout().drift_hyper_size() + lp.layout().noise_hyper_size() > 0;
  if (map && !hierarchical) {
    fit.map = find_map(lp, init, map_options);
    fit.map_doc = map_to_json(lp, *fit.map);
  }
  if (sample_posterior) {
    const LogDensity target = [&lp](const Vector& v) { return lp.evaluate(v); };
    fit.posterior = sample(target, {init}, hmc);
    fit.diagnostics_doc = diagnostics_to_json(*fit.posterior, fit.names);
    const LimParams pm = posterior_mean(lp.layout(), fit.posterior->pooled());
    fit.posterior_mean_doc = lim_to_json(pm);
  }
  return fit;
}

void write_fit(const std::string& dir, const ModelFit& fit) {
  io::ensure_directory(dir);
  io::write_json(path_join(dir, "mle.json"), mle_to_json(fit.mle));
  io::Json meta = {{"prior", prior_to_json(fit.prior)},
                   {"label", pair_label(fit.prior.drift, fit.prior.noise)},
                   {"tau_steps", fit.tau_steps},
                   {"dt", fit.dt},
                   {"dim", fit.mle.propagator.rows()},
                   {"n_chains", fit.posterior ? fit.posterior->chains.size() : 0},
                   {"map", fit.map ? "map.json" : "none (hierarchical prior or map = false)"}};
  io::write_json(path_join(dir, "fit.json"), meta);
  if (fit.map) io::write_json(path_join(dir, "map.json"), fit.map_doc);
  if (fit.posterior) {
    for (std::size_t c = 0; c < fit.posterior->chains.size(); ++c) {
      write_chain_csv(path_join(dir, "chain_" + std::to_string(c) + ".csv"), fit.posterior->chains[c],
                      fit.names);
    }
    io::write_json(path_join(dir, "diagnostics.json"), fit.diagnostics_doc);
    io::write_json(path_join(dir, "posterior_mean.json"), fit.posterior_mean_doc);
  }
}

StoredPosterior read_posterior(const std::string& dir) {
  const std::string meta_path = path_join(dir, "fit.json");
  if (!std::filesystem::exists(meta_path)) {
    throw Error(ErrorKind::io, "no fit in " + dir + " (run `blim fit` first)");
  }
  const io::Json meta = io::read_json(meta_path);
  StoredPosterior out;
  out.prior = prior_from_json(meta.at("prior"));
  out.dim = meta.at("dim").get<Eigen::Index>();
  out.dt = meta.at("dt").get<double>() * meta.at("tau_steps").get<double>();
  const auto n_chains = meta.at("n_chains").get<std::size_t>();
  if (n_chains == 0) {
    throw Error(ErrorKind::io, "fit in " + dir + " has no posterior chains (run `blim fit` with sample = true)");
  }
  std::vector<Matrix> chains;
  Eigen::Index rows = 0;
  for (std::size_t c = 0; c < n_chains; ++c) {
    chains.push_back(read_chain_csv(path_join(dir, "chain_" + std::to_string(c) + ".csv")));
    rows += chains.back().rows();
  }
  out.draws.resize(rows, chains.front().cols());
  Eigen::Index r = 0;
  for (const auto& ch : chains) {
    if (ch.cols() != out.draws.cols()) throw Error(ErrorKind::io, "chains in " + dir + " differ in width");
    out.draws.middleRows(r, ch.rows()) = ch;
    r += ch.rows();
  }
  return out;
}

LimParams posterior_mean(const ParamLayout& layout, const Matrix& draws) {
  if (draws.rows() == 0) throw Error(ErrorKind::domain, "posterior_mean: no draws");
  const Eigen::Index m = layout.m;
  const Vector mean = draws.colwise().mean().transpose();
  LimParams p;
  p.drift = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      mean.data() + layout.drift_offset(), m, m);
  p.noise = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < draws.rows(); ++i) p.noise += unpack(layout, draws.row(i).transpose()).noise;
  p.noise /= static_cast<double>(draws.rows());
  return p;
}

// ---------------------------------------------------------------------------
// perfect model

io::Json perfect_model_config_to_json(const PerfectModelConfig& c) {
  return {{"field", synth_spec_to_json(c.field)},
          {"k", c.k},
          {"truth", c.truth},
          {"truth_pair", c.truth_pair},
          {"dt_em", c.dt_em},
          {"obs_dt", c.obs_dt},
          {"lengths", c.lengths},
          {"pairs", c.pairs},
          {"replicates", c.replicates},
          {"prior", prior_to_json(c.prior)},
          {"hmc", hmc_config_to_json(c.hmc)},
          {"self_check", c.self_check},
          {"seed", c.seed}};
}

PerfectModelConfig perfect_model_config_from_json(const io::Json& j) {
  PerfectModelConfig c;
  if (j.contains("field")) c.field = synth_spec_from_json(j["field"]);
  c.k = j.value("k", c.k);
  c.truth = j.value("truth", c.truth);
  c.truth_pair = j.value("truth_pair", c.truth_pair);
  c.dt_em = j.value("dt_em", c.dt_em);
  c.obs_dt = j.value("obs_dt", c.obs_dt);
  c.lengths = j.value("lengths", c.lengths);
  c.pairs = j.value("pairs", c.pairs);
  c.replicates = j.value("replicates", c.replicates);
  if (j.contains("prior")) c.prior = prior_from_json(j["prior"]);
  if (j.contains("hmc")) c.hmc = hmc_config_from_json(j["hmc"]);
  c.self_check = j.value("self_check", c.self_check);
  c.seed = j.value("seed", c.seed);
  if (!(c.dt_em > 0.0) || !(c.obs_dt >= c.dt_em)) {
    throw Error(ErrorKind::config, "perfect-model: need 0 < dt_em <= obs_dt");
  }
  if (c.replicates < 1) throw Error(ErrorKind::config, "perfect-model: replicates must be at least 1");
  if (c.lengths.empty() || c.pairs.empty()) throw Error(ErrorKind::config, "perfect-model: empty lengths or pairs");
  for (const auto& p : c.pairs) prior_from_label(p);
  prior_from_label(c.truth_pair);
  return c;
}

namespace {

double median_of(const std::vector<PerfectModelRow>& rows, const std::string& pair, Eigen::Index length,
                 double PerfectModelRow::*field) {
  std::vector<double> xs;
  for (const auto& r : rows) {
    if (r.pair == pair && r.length == length) xs.push_back(r.*field);
  }
  if (xs.empty()) throw Error(ErrorKind::domain, "perfect-model: no rows for " + pair);
  return median(xs);
}

}  // namespace

double PerfectModelReport::median_drift(const std::string& pair, Eigen::Index length) const {
  return median_of(rows, pair, length, &PerfectModelRow::err_drift);
}

double PerfectModelReport::median_noise(const std::string& pair, Eigen::Index length) const {
  return median_of(rows, pair, length, &PerfectModelRow::err_noise);
}

LimParams perfect_model_truth(const PerfectModelConfig& config) {
  if (!config.truth.empty()) return lim_from_json(io::read_json(config.truth));
  const GriddedField field = synth_field(config.field);
  TimeSeries pcs = fit_eof(field, config.k).pcs;
  const Vector sd = (pcs.values.rowwise() - pcs.values.colwise().mean()).colwise().norm() /
                    std::sqrt(static_cast<double>(pcs.length() - 1));
  pcs.values = pcs.values * sd.cwiseInverse().asDiagonal();
  const LogPosterior lp(pcs, 1, prior_from_label(config.truth_pair, config.prior));
  const MapResult map = find_map(lp, lp.initial_point());
  LimParams truth = lp.params(map.point);
  truth.validate();
  return truth;
}

PerfectModelReport run_perfect_model(const PerfectModelConfig& config) {
  PerfectModelReport report;
  report.truth = perfect_model_truth(config);
  const LimParams& truth = report.truth;
  const auto stride = static_cast<std::int64_t>(std::llround(config.obs_dt / config.dt_em));
  for (int rep = 0; rep < config.replicates; ++rep) {
    for (Eigen::Index n : config.lengths) {
      if (n < 2) throw Error(ErrorKind::config, "perfect-model: lengths must be at least 2");
      const auto ids = {std::uint64_t{0x9e}, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(n)};
      TimeSeries series;
      if (!config.self_check) {
        const Vector x0 = draw_stationary(truth, stream_key(config.seed, ids));
        EmOptions em;
        em.quiet = true;
        const TimeSeries path = simulate_em(truth, x0, config.dt_em, (n - 1) * stride,
                                            stream_key(config.seed ^ 0x5eed, ids), em);
        series = subsample(path, stride);
      }
      for (std::size_t pi = 0; pi < config.pairs.size(); ++pi) {
        PerfectModelRow row;
        row.pair = config.pairs[pi];
        row.length = n;
        row.replicate = rep;
        row.max_rhat = kNaN;
        const PriorSpec prior = prior_from_label(row.pair, config.prior);
        if (config.self_check) {
          row.err_drift = rel_err_pct(truth.drift, truth.drift);
          row.err_noise = rel_err_pct(truth.noise, truth.noise);
          report.rows.push_back(row);
          continue;
        }
        try {
          if (prior.drift == DriftPrior::ml && prior.noise == NoisePrior::ml) {
            const MleResult mle = fit_mle(series, 1);
            row.err_drift = mle.drift ? rel_err_pct(*mle.drift, truth.drift) : kInf;
            row.err_noise = mle.noise ? rel_err_pct(*mle.noise, truth.noise) : kInf;
            if (!mle.drift) row.note = mle.drift_undefined_reason;
            else if (!mle.noise) row.note = mle.noise_undefined_reason;
          } else {
            const LogPosterior lp(series, 1, prior);
            HmcConfig hmc = config.hmc;
            hmc.seed = stream_key(config.seed, {0x4d, static_cast<std::uint64_t>(rep),
                                                static_cast<std::uint64_t>(n), pi, config.hmc.seed});
            const LogDensity target = [&lp](const Vector& v) { return lp.evaluate(v); };
            const SampleResult res = sample(target, {lp.initial_point()}, hmc);
            const LimParams est = posterior_mean(lp.layout(), res.pooled());
            row.err_drift = rel_err_pct(est.drift, truth.drift);
            row.err_noise = rel_err_pct(est.noise, truth.noise);
            row.max_rhat = res.diag.max_rhat();
          }
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::config || e.kind() == ErrorKind::io) throw;
          row.err_drift = kInf;
          row.err_noise = kInf;
          row.note = e.what();
        }
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

void write_perfect_model(const std::string& dir, const PerfectModelConfig& config,
                         const PerfectModelReport& report) {
  io::ensure_directory(dir);
  io::Json rows = io::Json::array();
  std::vector<std::string> lines;
  for (const auto& r : report.rows) {
    rows.push_back({{"pair", r.pair},
                    {"N", r.length},
                    {"replicate", r.replicate},
                    {"err_B_pct", finite_or_null(r.err_drift)},
                    {"err_Q_pct", finite_or_null(r.err_noise)},
                    {"max_rhat", finite_or_null(r.max_rhat)},
                    {"note", r.note}});
    lines.push_back(join({r.pair, std::to_string(r.length), std::to_string(r.replicate), fmt(r.err_drift),
                          fmt(r.err_noise), fmt(r.max_rhat)}));
  }
  write_lines(path_join(dir, "rows.csv"), "pair,N,replicate,err_B_pct,err_Q_pct,max_rhat", lines);

  io::Json summary = io::Json::array();
  lines.clear();
  for (const auto& pair : config.pairs) {
    for (Eigen::Index n : config.lengths) {
      const double b = report.median_drift(pair, n), q = report.median_noise(pair, n);
      summary.push_back({{"pair", pair}, {"N", n}, {"err_B_pct", finite_or_null(b)}, {"err_Q_pct", finite_or_null(q)}});
      lines.push_back(join({pair, std::to_string(n), fmt(b), fmt(q)}));
    }
  }
  write_lines(path_join(dir, "summary.csv"), "pair,N,median_err_B_pct,median_err_Q_pct", lines);
  io::write_json(path_join(dir, "truth.json"), lim_to_json(report.truth));
  io::write_json(path_join(dir, "report.json"),
                 {{"config", perfect_model_config_to_json(config)},
                  {"truth", lim_to_json(report.truth)},
                  {"rows", rows},
                  {"summary", summary},
                  {"files", {"rows.csv", "summary.csv", "truth.json"}}});
}

// ---------------------------------------------------------------------------
// forecast evaluation

namespace {

Edf observed_differences(const TimeSeries& observed, const std::vector<Eigen::Index>& inits, Eigen::Index lead) {
  std::vector<double> diffs;
  diffs.reserve(inits.size() * static_cast<std::size_t>(observed.dim()));
  for (Eigen::Index t : inits) {
    if (t < 0 || t + lead >= observed.length()) {
      throw Error(ErrorKind::domain, "score: init plus lead runs past the observations");
    }
    for (Eigen::Index d = 0; d < observed.dim(); ++d) {
      diffs.push_back(observed.values(t + lead, d) - observed.values(t, d));
    }
  }
  return Edf(std::move(diffs));
}

}  // namespace

EnsembleScore score_ensemble(const ForecastEnsemble& ens, const TimeSeries& observed, Eigen::Index lead) {
  EnsembleScore s;
  s.lead = lead;
  const Matrix med = median_path(ens, lead);
  Matrix obs(ens.n_init(), ens.dim());
  for (Eigen::Index i = 0; i < ens.n_init(); ++i) {
    const Eigen::Index t = ens.init_index[static_cast<std::size_t>(i)];
    if (t + lead >= observed.length()) {
      throw Error(ErrorKind::domain, "score: init plus lead runs past the observations");
    }
    obs.row(i) = observed.values.row(t + lead);
  }
  s.corr_pc = correlation(Eigen::Map<const Vector>(med.data(), med.size()),
                          Eigen::Map<const Vector>(obs.data(), obs.size()));
  const Edf fc = forecast_cdf(ens, observed, lead);
  const Edf ob = observed_differences(observed, ens.init_index, lead);
  s.calibration = calibration_error(fc, ob);
  s.residuals = cdf_residual(fc, ob, common_grid(fc, ob));
  for (Eigen::Index i = 0; i < ens.n_init(); ++i) s.spread += trace_cov(ens.at(i, lead));
  s.spread /= static_cast<double>(ens.n_init());
  return s;
}

std::string method_slug(const std::string& method) {
  std::string out;
  for (char c : method) {
    if (c == '+') out += '_';
    else if (c != '(' && c != ')') out += c;
  }
  return out;
}

io::Json forecast_eval_config_to_json(const ForecastEvalConfig& c) {
  return {{"field", synth_spec_to_json(c.field)},
          {"field_path", c.field_path},
          {"k", c.k},
          {"smooth", c.smooth},
          {"n_train", c.n_train},
          {"n_test", c.n_test},
          {"methods", c.methods},
          {"leads", c.leads},
          {"map_leads", c.map_leads},
          {"n_members", c.n_members},
          {"per_member_draw", c.per_member_draw},
          {"prior", prior_to_json(c.prior)},
          {"hmc", hmc_config_to_json(c.hmc)},
          {"fits", c.fits},
          {"fit_missing", c.fit_missing},
          {"skill_threshold", c.skill_threshold},
          {"write_ensembles", c.write_ensembles},
          {"seed", c.seed},
          {"threads", c.threads}};
}

ForecastEvalConfig forecast_eval_config_from_json(const io::Json& j) {
  ForecastEvalConfig c;
  if (j.contains("field")) c.field = synth_spec_from_json(j["field"]);
  c.field_path = j.value("field_path", c.field_path);
  c.k = j.value("k", c.k);
  c.smooth = j.value("smooth", c.smooth);
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.methods = j.value("methods", c.methods);
  c.leads = j.value("leads", c.leads);
  c.map_leads = j.value("map_leads", c.map_leads);
  c.n_members = j.value("n_members", c.n_members);
  c.per_member_draw = j.value("per_member_draw", c.per_member_draw);
  if (j.contains("prior")) c.prior = prior_from_json(j["prior"]);
  if (j.contains("hmc")) c.hmc = hmc_config_from_json(j["hmc"]);
  c.fits = j.value("fits", c.fits);
  c.fit_missing = j.value("fit_missing", c.fit_missing);
  c.skill_threshold = j.value("skill_threshold", c.skill_threshold);
  c.write_ensembles = j.value("write_ensembles", c.write_ensembles);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (c.leads.empty()) throw Error(ErrorKind::config, "forecast-eval: no leads");
  for (auto l : c.leads) {
    if (l < 1) throw Error(ErrorKind::config, "forecast-eval: leads must be at least 1");
  }
  if (c.n_members < 1) throw Error(ErrorKind::config, "forecast-eval: n_members must be at least 1");
  for (const auto& m : c.methods) {
    if (m != "ML" && var_order(m) == 0) {
      std::string label = m;
      std::replace(label.begin(), label.end(), '+', '_');
      prior_from_label(label);
    }
  }
  return c;
}

const LeadScore& MethodScores::at(Eigen::Index lead) const {
  for (const auto& l : leads) {
    if (l.lead == lead) return l;
  }
  throw Error(ErrorKind::domain, "no score at lead " + std::to_string(lead) + " for " + method);
}

const MethodScores& ForecastEvalReport::at(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m;
  }
  throw Error(ErrorKind::domain, "no scores for method " + method);
}

ForecastEvalReport run_forecast_eval(const ForecastEvalConfig& config) {
  GriddedField field = config.field_path.empty() ? synth_field(config.field) : read_field(config.field_path);
  field.validate();
  if (field.length() < config.n_train + config.n_test) {
    throw Error(ErrorKind::config, "forecast-eval: field shorter than n_train + n_test");
  }
  TimeSeries raw;
  raw.dt = field.dt;
  raw.values = field.values;
  field.values = moving_average(raw, config.smooth).values;

  const EofFit eof = fit_eof(slice_field(field, 0, config.n_train), config.k);
  const EofBasis& basis = eof.basis;
  const TimeSeries pcs = project(basis, field);
  const TimeSeries train = slice(pcs, 0, config.n_train);
  const Eigen::Index max_lead = *std::max_element(config.leads.begin(), config.leads.end());
  if (config.n_test <= max_lead) throw Error(ErrorKind::config, "forecast-eval: test segment shorter than the lead");
  std::vector<Eigen::Index> inits;
  for (Eigen::Index t = config.n_train; t < config.n_train + config.n_test - max_lead; ++t) inits.push_back(t);

  // Unweighted pattern per gridpoint, zero at masked points.
  Matrix grid_patterns = Matrix::Zero(basis.k(), field.n_points());
  Vector cos_lat = Vector::Zero(field.n_points());
  for (Eigen::Index j = 0; j < field.n_points(); ++j) {
    if (!basis.mask[static_cast<std::size_t>(j)]) continue;
    grid_patterns.col(j) = basis.patterns.col(j) / basis.weights(j);
    cos_lat(j) = std::cos(field.lat(j) * M_PI / 180.0);
  }

  ForecastEvalReport report;
  report.explained = basis.explained;
  report.lat = field.lat;
  report.lon = field.lon;
  report.pcs = pcs;

  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    const std::string& method = config.methods[mi];
    ForecastOptions opt;
    opt.lead_steps = max_lead;
    opt.n_members = config.n_members;
    opt.seed = stream_key(config.seed, {0xfe, mi});
    opt.per_member_draw = config.per_member_draw;
    opt.threads = config.threads;

    ForecastEnsemble ens;
    std::optional<ForecastEnsemble> fixed;
    if (method == "ML") {
      ens = forecast_ml(fit_mle(train, 1), pcs, inits, opt);
    } else if (const int p = var_order(method); p > 0) {
      ens = forecast_var(fit_var(train, p), pcs, inits, opt);
    } else {
      std::string label = method;
      std::replace(label.begin(), label.end(), '+', '_');
      const PriorSpec prior = prior_from_label(label, config.prior);
      Matrix draws;
      double dt = pcs.dt;
      if (auto it = config.fits.find(method); it != config.fits.end()) {
        StoredPosterior stored = read_posterior(it->second);
        if (stored.prior.drift != prior.drift || stored.prior.noise != prior.noise || stored.dim != config.k) {
          throw Error(ErrorKind::config, "forecast-eval: fit in " + it->second + " does not match " + method);
        }
        draws = std::move(stored.draws);
        dt = stored.dt;
      } else if (config.fit_missing) {
        HmcConfig hmc = config.hmc;
        hmc.threads = config.threads;
        hmc.seed = stream_key(config.seed, {0xb1, mi, config.hmc.seed});
        const ModelFit fit = fit_model(train, 1, prior, hmc, true, false);
        draws = fit.posterior->pooled();
      } else {
        throw Error(ErrorKind::config, "forecast-eval: no posterior chains for " + method +
                                           "; run `blim fit` on the training PCs and list the directory under fits");
      }
      const ParamLayout layout(config.k, prior);
      const auto models = step_models_from_chain(layout, draws, dt);
      ens = forecast_posterior(models, pcs, inits, opt, method);
      fixed = forecast_fixed(mean_step_model(models), pcs, inits, opt, method + " mean");
    }

    MethodScores scores;
    scores.method = method;
    for (Eigen::Index lead : config.leads) {
      const EnsembleScore es = score_ensemble(ens, pcs, lead);
      LeadScore ls;
      ls.lead = lead;
      ls.corr_pc = es.corr_pc;
      ls.calibration = es.calibration;
      ls.spread = es.spread;
      ls.residuals = es.residuals;
      ls.fixed_spread = fixed ? score_ensemble(*fixed, pcs, lead).spread : kNaN;

      const Matrix pred = median_path(ens, lead) * grid_patterns;
      Matrix obs(ens.n_init(), field.n_points());
      for (Eigen::Index i = 0; i < ens.n_init(); ++i) {
        obs.row(i) = field.values.row(inits[static_cast<std::size_t>(i)] + lead) - basis.mean.transpose();
      }
      ls.corr_map = Vector::Constant(field.n_points(), kNaN);
      double wsum = 0.0, wcorr = 0.0, sum = 0.0, mx = -kInf;
      Eigen::Index count = 0;
      for (Eigen::Index j = 0; j < field.n_points(); ++j) {
        if (!basis.mask[static_cast<std::size_t>(j)]) continue;
        double r = kNaN;
        try {
          r = correlation(pred.col(j), obs.col(j));
        } catch (const Error&) {
          continue;
        }
        ls.corr_map(j) = r;
        wsum += cos_lat(j);
        wcorr += cos_lat(j) * r;
        sum += r;
        mx = std::max(mx, r);
        ++count;
      }
      ls.corr_weighted = wsum > 0.0 ? wcorr / wsum : kNaN;
      ls.corr_mean = count > 0 ? sum / static_cast<double>(count) : kNaN;
      ls.corr_max = count > 0 ? mx : kNaN;

      if (std::find(config.map_leads.begin(), config.map_leads.end(), lead) != config.map_leads.end()) {
        const Matrix diffs = forecast_differences(ens, pcs, lead);
        ls.calibration_map = Vector::Constant(field.n_points(), kNaN);
        for (Eigen::Index j = 0; j < field.n_points(); ++j) {
          if (!basis.mask[static_cast<std::size_t>(j)]) continue;
          const Vector fd = diffs * grid_patterns.col(j);
          std::vector<double> od;
          od.reserve(inits.size());
          for (Eigen::Index t : inits) od.push_back(field.values(t + lead, j) - field.values(t, j));
          try {
            ls.calibration_map(j) =
                calibration_error(Edf(std::vector<double>(fd.data(), fd.data() + fd.size())), Edf(std::move(od)));
          } catch (const Error&) {
          }
        }
      }
      scores.leads.push_back(std::move(ls));
    }
    report.methods.push_back(std::move(scores));
    if (config.write_ensembles) report.ensembles.push_back(std::move(ens));
  }
  return report;
}

void write_forecast_eval(const std::string& dir, const ForecastEvalConfig& config,
                         const ForecastEvalReport& report) {
  io::ensure_directory(dir);
  io::ensure_directory(path_join(dir, "maps"));
  io::Json methods = io::Json::object();
  std::vector<std::string> table, curves, residuals, calib;
  std::vector<std::string> files{"correlation_table.csv", "lead_curves.csv", "residuals.csv", "calibration.csv",
                                 "pcs.csv"};
  auto write_map = [&](const std::string& name, const Vector& values) {
    Matrix rows(values.size(), 3);
    rows << report.lat, report.lon, values;
    io::write_csv(path_join(dir, "maps/" + name), {"lat", "lon", "value"}, rows);
    files.push_back("maps/" + name);
  };
  for (const auto& m : report.methods) {
    io::Json leads = io::Json::array();
    std::string row = m.method;
    for (const auto& l : m.leads) {
      leads.push_back({{"lead", l.lead},
                       {"corr_weighted", finite_or_null(l.corr_weighted)},
                       {"corr_mean", finite_or_null(l.corr_mean)},
                       {"corr_max", finite_or_null(l.corr_max)},
                       {"corr_pc", finite_or_null(l.corr_pc)},
                       {"skillful", l.corr_weighted > config.skill_threshold},
                       {"calibration_error", finite_or_null(l.calibration)},
                       {"spread", finite_or_null(l.spread)},
                       {"fixed_spread", finite_or_null(l.fixed_spread)}});
      row += "," + fmt(l.corr_weighted);
      const std::string lead = std::to_string(l.lead);
      curves.push_back(join({m.method, lead, fmt(l.corr_weighted), fmt(l.corr_mean), fmt(l.corr_max), fmt(l.corr_pc)}));
      calib.push_back(join({m.method, lead, fmt(l.calibration), fmt(l.spread), fmt(l.fixed_spread)}));
      for (const auto& [fo, r] : l.residuals) residuals.push_back(join({m.method, lead, fmt(fo), fmt(r)}));
      const std::string slug = method_slug(m.method) + "_lead" + lead + ".csv";
      if (std::find(config.map_leads.begin(), config.map_leads.end(), l.lead) != config.map_leads.end()) {
        write_map("corr_" + slug, l.corr_map);
        write_map("calibration_" + slug, l.calibration_map);
      }
    }
    table.push_back(row);
    methods[m.method] = leads;
  }
  std::string header = "method";
  for (auto l : config.leads) header += ",lead_" + std::to_string(l);
  write_lines(path_join(dir, "correlation_table.csv"), header, table);
  write_lines(path_join(dir, "lead_curves.csv"), "method,lead,corr_weighted,corr_mean,corr_max,corr_pc", curves);
  write_lines(path_join(dir, "residuals.csv"), "method,lead,observed_freq,residual", residuals);
  write_lines(path_join(dir, "calibration.csv"), "method,lead,calibration_error,spread,fixed_spread", calib);
  write_series_csv(report.pcs, path_join(dir, "pcs.csv"));
  for (const auto& ens : report.ensembles) {
    const std::string sub = "ensembles/" + method_slug(ens.provenance);
    write_ensemble(path_join(dir, sub), ens);
    files.push_back(sub);
  }
  io::write_json(path_join(dir, "report.json"),
                 {{"config", forecast_eval_config_to_json(config)},
                  {"explained", io::vector_to_json(report.explained)},
                  {"methods", methods},
                  {"files", files}});
}

}  // namespace blim
