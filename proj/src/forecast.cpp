#include "blim/forecast.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <functional>
#include <thread>

#include "blim/errors.hpp"
#include "blim/random.hpp"

namespace blim {

namespace {

// Advances one member by one step; returns the number of rejected draws.
// Noise and parameter choice use separate streams so that fixed and
// posterior ensembles with one seed share their Gaussian draws.
using Stepper = std::function<std::int64_t(Rng& noise, Rng& pick, Vector&, Eigen::Index step, std::size_t& draw)>;

void check_inits(const TimeSeries& data, const std::vector<Eigen::Index>& inits, Eigen::Index history) {
  if (inits.empty()) throw Error(ErrorKind::config, "forecast: no initial times");
  for (Eigen::Index i : inits) {
    if (i < history - 1 || i >= data.length()) {
      throw Error(ErrorKind::domain, "forecast: initial index outside the data");
    }
  }
}

ForecastEnsemble run_ensemble(const TimeSeries& data, const std::vector<Eigen::Index>& inits,
                              const ForecastOptions& opt, const std::string& provenance,
                              Eigen::Index history,
                              const std::function<Vector(Eigen::Index init)>& initial_state,
                              const Stepper& step,
                              const std::function<void(Rng& pick, std::size_t&)>& start_member) {
  if (opt.lead_steps < 1) throw Error(ErrorKind::config, "forecast: lead_steps must be at least 1");
  if (opt.n_members < 1) throw Error(ErrorKind::config, "forecast: n_members must be at least 1");
  check_inits(data, inits, history);
  ForecastEnsemble ens;
  ens.lead_steps = opt.lead_steps;
  ens.n_members = opt.n_members;
  ens.init_index = inits;
  ens.provenance = provenance;
  ens.seed = opt.seed;
  ens.states.assign(inits.size(), std::vector<Matrix>(static_cast<std::size_t>(opt.lead_steps),
                                                      Matrix(opt.n_members, data.dim())));
  std::vector<std::int64_t> redraws(inits.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < inits.size(); k = next++) {
      for (Eigen::Index member = 0; member < opt.n_members; ++member) {
        Rng rng = make_rng(opt.seed, {0xf0ca, static_cast<std::uint64_t>(inits[k]),
                                      static_cast<std::uint64_t>(member)});
        Rng pick = make_rng(opt.seed, {0xd4a, static_cast<std::uint64_t>(inits[k]),
                                       static_cast<std::uint64_t>(member)});
        std::size_t draw = 0;
        start_member(pick, draw);
        Vector x = initial_state(inits[k]);
        for (Eigen::Index s = 0; s < opt.lead_steps; ++s) {
          redraws[k] += step(rng, pick, x, s, draw);
          ens.states[k][static_cast<std::size_t>(s)].row(member) = x.transpose();
        }
      }
    }
  };
  const std::size_t workers =
      std::min<std::size_t>(inits.size(), static_cast<std::size_t>(std::max(1, opt.threads)));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto r : redraws) ens.redraws += r;
  return ens;
}

Vector gaussian(Rng& rng, Eigen::Index m) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector z(m);
  for (Eigen::Index i = 0; i < m; ++i) z(i) = n(rng);
  return z;
}

}  // namespace

StepModel step_model(const Matrix& propagator, const Matrix& increment) {
  return StepModel{propagator, cholesky(symmetrize(increment))};
}

StepModel step_model_from_mle(const MleResult& mle) {
  if (mle.tau_steps != 1) {
    throw Error(ErrorKind::config, "forecast: ML source must be fitted at tau_steps = 1");
  }
  return step_model(mle.propagator, mle.increment);
}

std::vector<std::optional<StepModel>> step_models_from_chain(const ParamLayout& layout,
                                                             const Matrix& draws, double dt) {
  std::vector<std::optional<StepModel>> out;
  out.reserve(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    try {
      const Unpacked u = unpack(layout, draws.row(i).transpose());
      const DerivedLim d = derive(LimParams{u.drift, u.noise}, dt);
      auto f = try_cholesky(d.increment);
      if (f) {
        out.push_back(StepModel{d.propagator, *f});
        continue;
      }
    } catch (const Error&) {
    }
    out.push_back(std::nullopt);
  }
  return out;
}

StepModel mean_step_model(const std::vector<std::optional<StepModel>>& models) {
  Matrix g, sigma;
  int n = 0;
  for (const auto& m : models) {
    if (!m) continue;
    const Matrix s = m->noise_factor * m->noise_factor.transpose();
    if (n == 0) {
      g = m->propagator;
      sigma = s;
    } else {
      g += m->propagator;
      sigma += s;
    }
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::degenerate, "forecast: no valid parameter draws");
  return step_model(g / n, sigma / n);
}

Eigen::Index ForecastEnsemble::dim() const {
  return states.empty() || states.front().empty() ? 0 : states.front().front().cols();
}

const Matrix& ForecastEnsemble::at(Eigen::Index init, Eigen::Index lead) const {
  if (init < 0 || init >= n_init() || lead < 1 || lead > lead_steps) {
    throw Error(ErrorKind::domain, "ensemble: init or lead out of range");
  }
  return states[static_cast<std::size_t>(init)][static_cast<std::size_t>(lead - 1)];
}

ForecastEnsemble forecast_fixed(const StepModel& model, const TimeSeries& data,
                                const std::vector<Eigen::Index>& inits,
                                const ForecastOptions& options, const std::string& provenance) {
  const Eigen::Index m = data.dim();
  if (model.propagator.rows() != m) throw Error(ErrorKind::dimension, "forecast: model and data differ in dimension");
  return run_ensemble(
      data, inits, options, provenance, 1, [&](Eigen::Index i) { return data.row(i); },
      [&](Rng& rng, Rng&, Vector& x, Eigen::Index, std::size_t&) -> std::int64_t {
        x = model.propagator * x;
        if (!options.suppress_noise) x += model.noise_factor * gaussian(rng, m);
        return 0;
      },
      [](Rng&, std::size_t&) {});
}

ForecastEnsemble forecast_ml(const MleResult& mle, const TimeSeries& data,
                             const std::vector<Eigen::Index>& inits, const ForecastOptions& options) {
  return forecast_fixed(step_model_from_mle(mle), data, inits, options, "ML");
}

ForecastEnsemble forecast_posterior(const std::vector<std::optional<StepModel>>& draws,
                                    const TimeSeries& data, const std::vector<Eigen::Index>& inits,
                                    const ForecastOptions& options, const std::string& provenance) {
  if (static_cast<Eigen::Index>(draws.size()) < options.n_members) {
    throw Error(ErrorKind::config, "forecast: chain is shorter than the member count");
  }
  if (std::none_of(draws.begin(), draws.end(), [](const auto& d) { return d.has_value(); })) {
    throw Error(ErrorKind::degenerate, "forecast: no valid parameter draws");
  }
  const Eigen::Index m = data.dim();
  std::uniform_int_distribution<std::size_t> pick(0, draws.size() - 1);
  auto choose = [&](Rng& rng, std::int64_t& rejected) {
    while (true) {
      const std::size_t k = pick(rng);
      if (draws[k]) return k;
      ++rejected;
    }
  };
  return run_ensemble(
      data, inits, options, provenance, 1, [&](Eigen::Index i) { return data.row(i); },
      [&](Rng& rng, Rng& pick_rng, Vector& x, Eigen::Index, std::size_t& draw) -> std::int64_t {
        std::int64_t rejected = 0;
        if (!options.per_member_draw) draw = choose(pick_rng, rejected);
        const StepModel& sm = *draws[draw];
        x = sm.propagator * x;
        if (!options.suppress_noise) x += sm.noise_factor * gaussian(rng, m);
        return rejected;
      },
      [&](Rng& rng, std::size_t& draw) {
        std::int64_t ignored = 0;
        if (options.per_member_draw) draw = choose(rng, ignored);
      });
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::domain, "median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Matrix median_path(const ForecastEnsemble& ens, Eigen::Index lead) {
  Matrix out(ens.n_init(), ens.dim());
  for (Eigen::Index i = 0; i < ens.n_init(); ++i) {
    const Matrix& mem = ens.at(i, lead);
    for (Eigen::Index d = 0; d < mem.cols(); ++d) {
      out(i, d) = median(std::vector<double>(mem.col(d).data(), mem.col(d).data() + mem.rows()));
    }
  }
  return out;
}

VarModel fit_var(const TimeSeries& series, int p) {
  const Eigen::Index m = series.dim(), t_len = series.length();
  if (p < 1) throw Error(ErrorKind::config, "fit_var: order must be at least 1");
  if (t_len < m * p + p + 1) throw Error(ErrorKind::rank, "fit_var: series too short for this order");
  const Eigen::Index count = t_len - p;
  Matrix x(count, m * p), y(count, m);
  for (Eigen::Index t = p; t < t_len; ++t) {
    y.row(t - p) = series.values.row(t);
    for (int l = 1; l <= p; ++l) x.block(t - p, (l - 1) * m, 1, m) = series.values.row(t - l);
  }
  const Matrix gram = x.transpose() * x;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * ldlt.vectorD().maxCoeff())) {
    throw Error(ErrorKind::rank, "fit_var: regressor Gram matrix is singular");
  }
  const Matrix coef = ldlt.solve(x.transpose() * y);  // (m p) x m
  VarModel v;
  v.p = p;
  for (int l = 0; l < p; ++l) v.coefficients.push_back(coef.middleRows(l * m, m).transpose());
  const Matrix resid = y - x * coef;
  const double divisor = static_cast<double>(count - m * p - 1);
  if (!(divisor > 0.0)) throw Error(ErrorKind::rank, "fit_var: too few residual degrees of freedom");
  v.innovation = symmetrize(resid.transpose() * resid / divisor);
  return v;
}

ForecastEnsemble forecast_var(const VarModel& model, const TimeSeries& data,
                              const std::vector<Eigen::Index>& inits, const ForecastOptions& options) {
  const Eigen::Index m = data.dim();
  const int p = model.p;
  if (model.dim() != m) throw Error(ErrorKind::dimension, "forecast_var: model and data differ in dimension");
  Matrix factor = Matrix::Zero(m, m);
  if (!options.suppress_noise) factor = cholesky(model.innovation);
  // State is the stacked window [y_t, y_{t-1}, ..., y_{t-p+1}].
  return run_ensemble(
      data, inits, options, "VAR(" + std::to_string(p) + ")", p,
      [&](Eigen::Index i) {
        Vector w(m * p);
        for (int l = 0; l < p; ++l) w.segment(l * m, m) = data.row(i - l);
        return w;
      },
      [&](Rng& rng, Rng&, Vector& w, Eigen::Index, std::size_t&) -> std::int64_t {
        Vector next = Vector::Zero(m);
        for (int l = 0; l < p; ++l) next += model.coefficients[static_cast<std::size_t>(l)] * w.segment(l * m, m);
        if (!options.suppress_noise) next += factor * gaussian(rng, m);
        for (int l = p - 1; l > 0; --l) w.segment(l * m, m) = w.segment((l - 1) * m, m);
        w.head(m) = next;
        return 0;
      },
      [](Rng&, std::size_t&) {});
}

io::Json var_to_json(const VarModel& v) {
  io::Json j;
  j["p"] = v.p;
  io::Json coefs = io::Json::array();
  for (const auto& a : v.coefficients) coefs.push_back(io::matrix_to_json(a));
  j["coefficients"] = coefs;
  j["innovation"] = io::matrix_to_json(v.innovation);
  return j;
}

VarModel var_from_json(const io::Json& j) {
  VarModel v;
  v.p = j.at("p").get<int>();
  for (const auto& a : j.at("coefficients")) v.coefficients.push_back(io::matrix_from_json(a));
  v.innovation = io::matrix_from_json(j.at("innovation"));
  return v;
}

void write_ensemble(const std::string& dir, const ForecastEnsemble& ens) {
  io::ensure_directory(dir);
  const Eigen::Index m = ens.dim();
  std::vector<std::string> header{"lead", "member"};
  for (Eigen::Index d = 0; d < m; ++d) header.push_back("x" + std::to_string(d));
  std::vector<std::string> files;
  for (Eigen::Index i = 0; i < ens.n_init(); ++i) {
    Matrix rows(ens.lead_steps * ens.n_members, m + 2);
    for (Eigen::Index l = 1; l <= ens.lead_steps; ++l) {
      for (Eigen::Index k = 0; k < ens.n_members; ++k) {
        const Eigen::Index r = (l - 1) * ens.n_members + k;
        rows(r, 0) = static_cast<double>(l);
        rows(r, 1) = static_cast<double>(k);
        rows.row(r).tail(m) = ens.at(i, l).row(k);
      }
    }
    const std::string name = "init_" + std::to_string(ens.init_index[static_cast<std::size_t>(i)]) + ".csv";
    io::write_csv((std::filesystem::path(dir) / name).string(), header, rows);
    files.push_back(name);
  }
  io::Json manifest;
  manifest["lead_steps"] = ens.lead_steps;
  manifest["n_members"] = ens.n_members;
  manifest["provenance"] = ens.provenance;
  manifest["seed"] = ens.seed;
  manifest["redraws"] = ens.redraws;
  manifest["init_index"] = ens.init_index;
  manifest["files"] = files;
  io::write_json((std::filesystem::path(dir) / "manifest.json").string(), manifest);
}

ForecastEnsemble read_ensemble(const std::string& dir) {
  const io::Json manifest = io::read_json((std::filesystem::path(dir) / "manifest.json").string());
  ForecastEnsemble ens;
  ens.lead_steps = manifest.at("lead_steps").get<Eigen::Index>();
  ens.n_members = manifest.at("n_members").get<Eigen::Index>();
  ens.provenance = manifest.at("provenance").get<std::string>();
  ens.seed = manifest.at("seed").get<std::uint64_t>();
  ens.redraws = manifest.at("redraws").get<std::int64_t>();
  ens.init_index = manifest.at("init_index").get<std::vector<Eigen::Index>>();
  for (const auto& name : manifest.at("files")) {
    const io::CsvTable t = io::read_csv((std::filesystem::path(dir) / name.get<std::string>()).string());
    const Eigen::Index m = static_cast<Eigen::Index>(t.header.size()) - 2;
    std::vector<Matrix> per_lead(static_cast<std::size_t>(ens.lead_steps), Matrix(ens.n_members, m));
    for (const auto& row : t.rows) {
      const auto l = static_cast<std::size_t>(row[0]) - 1;
      const auto k = static_cast<Eigen::Index>(row[1]);
      for (Eigen::Index d = 0; d < m; ++d) per_lead[l](k, d) = row[static_cast<std::size_t>(d + 2)];
    }
    ens.states.push_back(std::move(per_lead));
  }
  return ens;
}

}  // namespace blim
