#include "blim/hmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "blim/errors.hpp"
#include "blim/random.hpp"

namespace blim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double hamiltonian(double log_density, const Vector& rho, const Vector& inv_mass) {
  return -log_density + 0.5 * rho.cwiseProduct(rho).dot(inv_mass);
}

Vector draw_momentum(Rng& rng, const Vector& inv_mass) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector rho(inv_mass.size());
  for (Eigen::Index i = 0; i < rho.size(); ++i) rho(i) = n(rng) / std::sqrt(inv_mass(i));
  return rho;
}

// Doubles or halves from the current step until one-step acceptance crosses 0.8.
double find_step_size(const LogDensity& target, const Vector& theta, const ValueAndGradient& here,
                      const Vector& inv_mass, double step, Rng& rng) {
  auto accept_prob = [&](double eps) {
    const Vector rho = draw_momentum(rng, inv_mass);
    const LeapfrogResult lf = leapfrog(target, theta, rho, eps, 1, inv_mass, here, 1e300);
    if (lf.divergent || !std::isfinite(lf.delta_h)) return 0.0;
    return std::exp(std::min(0.0, -lf.delta_h));
  };
  double a = accept_prob(step);
  const int direction = a > 0.8 ? 1 : -1;
  for (int k = 0; k < 100; ++k) {
    const double next = direction > 0 ? 2.0 * step : 0.5 * step;
    a = accept_prob(next);
    if (direction > 0 && !(a > 0.8)) break;
    step = next;
    if (direction < 0 && a > 0.8) break;
  }
  return step;
}

struct Welford {
  Eigen::Index count = 0;
  Vector mean, m2;
  explicit Welford(Eigen::Index dim) : mean(Vector::Zero(dim)), m2(Vector::Zero(dim)) {}
  void add(const Vector& x) {
    ++count;
    const Vector delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta.cwiseProduct(x - mean);
  }
  // Shrunk toward 1e-3 as in Stan's windowed adaptation.
  Vector regularized_variance() const {
    const double n = static_cast<double>(count);
    const Vector var = m2 / (n - 1.0);
    return (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
  }
};

ParameterChain run_chain(const LogDensity& target, const Vector& init, const HmcConfig& cfg,
                         int chain_id) {
  Rng rng = make_rng(cfg.seed, {0x4a3c, static_cast<std::uint64_t>(chain_id)});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> steps_dist(1, cfg.max_leapfrog);
  const Eigen::Index dim = init.size();

  Vector theta = init;
  if (cfg.init_jitter > 0.0) {
    std::uniform_real_distribution<double> jit(-cfg.init_jitter, cfg.init_jitter);
    for (int attempt = 0; attempt < 100; ++attempt) {
      Vector trial = init;
      for (Eigen::Index i = 0; i < dim; ++i) trial(i) += jit(rng);
      if (std::isfinite(target(trial).value)) {
        theta = trial;
        break;
      }
    }
  }
  ValueAndGradient here = target(theta);
  if (!std::isfinite(here.value)) {
    throw Error(ErrorKind::domain, "hmc: target is not finite at the chain's initial point");
  }

  Vector inv_mass = cfg.inv_mass.size() == dim ? cfg.inv_mass : Vector::Ones(dim);
  double step = cfg.step_size > 0.0 ? cfg.step_size
                                    : find_step_size(target, theta, here, inv_mass, 1.0, rng);
  DualAveraging da(step, cfg.target_accept);

  const int warm = cfg.n_warmup;
  const int window_start = warm / 2;
  const int window_end = static_cast<int>(0.85 * warm);
  const bool do_mass = cfg.adapt_mass && window_end - window_start >= 10;
  Welford welford(dim);

  ParameterChain out;
  out.draws.resize(cfg.n_samples, dim);
  out.log_density.resize(cfg.n_samples);
  int accepted = 0;
  int warm_divergent = 0;

  for (int it = 0; it < warm + cfg.n_samples; ++it) {
    const bool warming = it < warm;
    const int steps = cfg.jitter ? steps_dist(rng) : cfg.max_leapfrog;
    const Vector rho = draw_momentum(rng, inv_mass);
    const LeapfrogResult lf =
        leapfrog(target, theta, rho, step, steps, inv_mass, here, cfg.divergence_threshold);
    double accept_stat = 0.0;
    if (lf.divergent) {
      if (warming) ++warm_divergent;
      else ++out.divergence_count;
      unif(rng);  // keep the stream aligned with the non-divergent path
    } else {
      accept_stat = std::exp(std::min(0.0, -lf.delta_h));
      if (unif(rng) < accept_stat) {
        theta = lf.theta;
        here = lf.end;
        if (!warming) ++accepted;
      }
    }

    if (warming) {
      step = da.update(accept_stat);
      if (do_mass && it >= window_start && it < window_end) welford.add(theta);
      if (do_mass && it + 1 == window_end) {
        inv_mass = welford.regularized_variance();
        step = find_step_size(target, theta, here, inv_mass, step, rng);
        da.restart(step);
      }
      if (it + 1 == warm) {
        if (warm_divergent == warm) {
          std::ostringstream os;
          os << "hmc: all " << warm << " warmup transitions of chain " << chain_id
             << " diverged (last step size " << step << ")";
          throw Error(ErrorKind::divergence, os.str());
        }
        step = da.final_step_size();
      }
    } else {
      const int k = it - warm;
      out.draws.row(k) = theta.transpose();
      out.log_density(k) = here.value;
    }
  }
  out.accept_rate = cfg.n_samples > 0 ? static_cast<double>(accepted) / cfg.n_samples : 0.0;
  out.warmup_divergences = warm_divergent;
  out.step_size = step;
  out.inv_mass = inv_mass;
  return out;
}

// Average ranks (1-based) of the pooled values.
Vector average_ranks(const Vector& x) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x(a) < x(b); });
  Vector r(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && x(order[j + 1]) == x(order[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) r(order[k]) = avg;
    i = j + 1;
  }
  return r;
}

std::vector<Vector> rank_normalize(const std::vector<Vector>& chains) {
  Eigen::Index total = 0;
  for (const auto& c : chains) total += c.size();
  Vector pooled(total);
  Eigen::Index off = 0;
  for (const auto& c : chains) {
    pooled.segment(off, c.size()) = c;
    off += c.size();
  }
  const Vector r = average_ranks(pooled);
  const boost::math::normal_distribution<double> unit;
  std::vector<Vector> out;
  off = 0;
  for (const auto& c : chains) {
    Vector z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      z(i) = boost::math::quantile(unit, (r(off + i) - 0.375) / (static_cast<double>(total) + 0.25));
    }
    out.push_back(std::move(z));
    off += c.size();
  }
  return out;
}

double split_rhat(const std::vector<Vector>& chains) {
  const double n = static_cast<double>(chains.front().size());
  const double m = static_cast<double>(chains.size());
  Vector means(chains.size()), vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(c) = chains[c].mean();
    vars(c) = (chains[c].array() - means(c)).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b = n * (means.array() - means.mean()).square().sum() / (m - 1.0);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

std::vector<Vector> split_chains(const std::vector<Vector>& chains) {
  std::vector<Vector> out;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    out.push_back(c.head(half));
    out.push_back(c.tail(half));
  }
  return out;
}

bool constant_within(const std::vector<Vector>& chains) {
  for (const auto& c : chains) {
    if (c.maxCoeff() == c.minCoeff()) return true;
  }
  return false;
}

double sample_variance(const Vector& x) {
  return (x.array() - x.mean()).square().sum() / static_cast<double>(x.size() - 1);
}

Vector pool(const std::vector<Vector>& chains) {
  Eigen::Index total = 0;
  for (const auto& c : chains) total += c.size();
  Vector out(total);
  Eigen::Index off = 0;
  for (const auto& c : chains) {
    out.segment(off, c.size()) = c;
    off += c.size();
  }
  return out;
}

}  // namespace

void HmcConfig::validate() const {
  auto fail = [](const char* msg) { throw Error(ErrorKind::config, msg); };
  if (n_chains < 1) fail("hmc: n_chains must be positive");
  if (n_warmup < 0) fail("hmc: n_warmup must be non-negative");
  if (n_samples < 1) fail("hmc: n_samples must be positive");
  if (max_leapfrog < 1) fail("hmc: leapfrog steps must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) fail("hmc: target_accept must lie in (0, 1)");
  if (inv_mass.size() > 0 && !(inv_mass.array() > 0.0).all()) fail("hmc: mass must be positive");
  if (!(divergence_threshold > 0.0)) fail("hmc: divergence threshold must be positive");
  if (threads < 0) fail("hmc: threads must be non-negative");
}

io::Json hmc_config_to_json(const HmcConfig& c) {
  io::Json j;
  j["n_chains"] = c.n_chains;
  j["n_warmup"] = c.n_warmup;
  j["n_samples"] = c.n_samples;
  j["max_leapfrog"] = c.max_leapfrog;
  j["jitter"] = c.jitter;
  j["step_size"] = c.step_size;
  j["adapt_mass"] = c.adapt_mass;
  j["target_accept"] = c.target_accept;
  j["divergence_threshold"] = c.divergence_threshold;
  j["init_jitter"] = c.init_jitter;
  j["seed"] = c.seed;
  return j;
}

HmcConfig hmc_config_from_json(const io::Json& j) {
  HmcConfig c;
  c.n_chains = j.value("n_chains", c.n_chains);
  c.n_warmup = j.value("n_warmup", c.n_warmup);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.max_leapfrog = j.value("max_leapfrog", c.max_leapfrog);
  c.jitter = j.value("jitter", c.jitter);
  c.step_size = j.value("step_size", c.step_size);
  c.adapt_mass = j.value("adapt_mass", c.adapt_mass);
  c.target_accept = j.value("target_accept", c.target_accept);
  c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
  c.init_jitter = j.value("init_jitter", c.init_jitter);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

LeapfrogResult leapfrog(const LogDensity& target, const Vector& theta, const Vector& rho,
                        double dt, int steps, const Vector& inv_mass,
                        const ValueAndGradient& start, double divergence_threshold) {
  LeapfrogResult r;
  r.theta = theta;
  r.rho = rho;
  const double h0 = hamiltonian(start.value, rho, inv_mass);
  Vector grad = start.gradient;
  for (int s = 0; s < steps; ++s) {
    r.rho += 0.5 * dt * grad;
    r.theta += dt * inv_mass.cwiseProduct(r.rho);
    r.end = target(r.theta);
    if (!std::isfinite(r.end.value)) {
      r.divergent = true;
      r.delta_h = std::numeric_limits<double>::infinity();
      return r;
    }
    grad = r.end.gradient;
    r.rho += 0.5 * dt * grad;
    r.delta_h = hamiltonian(r.end.value, r.rho, inv_mass) - h0;
    if (!std::isfinite(r.delta_h) || std::abs(r.delta_h) > divergence_threshold) {
      r.divergent = true;
      return r;
    }
  }
  if (steps == 0) r.end = start;
  return r;
}

DualAveraging::DualAveraging(double step_size, double target) : target_(target) {
  restart(step_size);
}

void DualAveraging::restart(double step_size) {
  mu_ = std::log(10.0 * step_size);
  h_bar_ = 0.0;
  log_step_ = std::log(step_size);
  log_step_bar_ = 0.0;
  t_ = 0;
}

double DualAveraging::update(double accept_stat) {
  constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  ++t_;
  const double t = static_cast<double>(t_);
  const double eta = 1.0 / (t + t0);
  h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
  log_step_ = mu_ - std::sqrt(t) / gamma * h_bar_;
  const double w = std::pow(t, -kappa);
  log_step_bar_ = w * log_step_ + (1.0 - w) * log_step_bar_;
  return std::exp(log_step_);
}

double effective_sample_size(const std::vector<Vector>& chains) {
  const std::size_t m = chains.size();
  const Eigen::Index n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw Error(ErrorKind::dimension, "ess: chains differ in length");
  }
  if (n < 4) return kNaN;
  const double nd = static_cast<double>(n);
  std::vector<Vector> centered;
  Vector means(static_cast<Eigen::Index>(m));
  for (std::size_t c = 0; c < m; ++c) {
    means(c) = chains[c].mean();
    centered.push_back(chains[c].array() - means(c));
  }
  auto mean_acov = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (const auto& x : centered) acc += x.head(n - lag).dot(x.tail(n - lag)) / nd;
    return acc / static_cast<double>(m);
  };
  const double mean_var = mean_acov(0) * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  if (!(var_plus > 0.0)) return kNaN;

  Vector rho = Vector::Zero(n);
  rho(0) = 1.0;
  double even = 1.0;
  double odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho(1) = odd;
  Eigen::Index t = 1;
  while (t < n - 5 && std::isfinite(even + odd) && even + odd > 0.0) {
    even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
    odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
    if (even + odd >= 0.0) {
      rho(t + 1) = even;
      rho(t + 2) = odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (even > 0.0 && max_t + 1 < n) rho(max_t + 1) = even;
  for (Eigen::Index k = 1; k + 2 <= max_t; k += 2) {
    if (rho(k + 1) + rho(k + 2) > rho(k - 1) + rho(k)) {
      rho(k + 1) = 0.5 * (rho(k - 1) + rho(k));
      rho(k + 2) = rho(k + 1);
    }
  }
  const double total = static_cast<double>(m) * nd;
  double tau = -1.0 + 2.0 * rho.head(max_t).sum() + (max_t < n ? rho(max_t) : 0.0);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

Diagnostics diagnostics(const std::vector<Matrix>& chains) {
  if (chains.size() < 2) throw Error(ErrorKind::config, "diagnostics: need at least 2 chains");
  const Eigen::Index n = chains.front().rows(), dim = chains.front().cols();
  if (n < 4) throw Error(ErrorKind::config, "diagnostics: need at least 4 draws per chain");
  for (const auto& c : chains) {
    if (c.rows() != n || c.cols() != dim) {
      throw Error(ErrorKind::dimension, "diagnostics: chains differ in shape");
    }
  }
  Diagnostics d;
  d.rhat.resize(dim);
  d.ess_bulk.resize(dim);
  d.ess_mean.resize(dim);
  d.mean.resize(dim);
  d.variance.resize(dim);
  d.mcse_mean.resize(dim);
  d.mcse_variance.resize(dim);
  d.degenerate.assign(static_cast<std::size_t>(dim), false);
  for (Eigen::Index j = 0; j < dim; ++j) {
    std::vector<Vector> cols;
    for (const auto& c : chains) cols.push_back(c.col(j));
    const Vector all = pool(cols);
    d.mean(j) = all.mean();
    d.variance(j) = sample_variance(all);
    const auto split = split_chains(cols);
    if (constant_within(split)) {
      d.degenerate[static_cast<std::size_t>(j)] = true;
      d.rhat(j) = d.ess_bulk(j) = d.ess_mean(j) = d.mcse_mean(j) = d.mcse_variance(j) = kNaN;
      continue;
    }
    const auto z = rank_normalize(split);
    Vector all_split = pool(split);
    std::vector<double> sorted(all_split.data(), all_split.data() + all_split.size());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<Vector> folded;
    for (const auto& s : split) folded.push_back((s.array() - median).abs());
    const double rhat_bulk = split_rhat(z);
    const double rhat_tail = constant_within(folded) ? rhat_bulk : split_rhat(rank_normalize(folded));
    d.rhat(j) = std::max(rhat_bulk, rhat_tail);
    d.ess_bulk(j) = effective_sample_size(z);
    d.ess_mean(j) = effective_sample_size(split);
    d.mcse_mean(j) = std::sqrt(d.variance(j) / d.ess_mean(j));
    std::vector<Vector> sq;
    for (const auto& s : split) sq.push_back((s.array() - d.mean(j)).square());
    const Vector sq_all = pool(sq);
    d.mcse_variance(j) = std::sqrt(sample_variance(sq_all) / effective_sample_size(sq));
  }
  return d;
}

Diagnostics diagnostics(const std::vector<ParameterChain>& chains) {
  std::vector<Matrix> draws;
  for (const auto& c : chains) draws.push_back(c.draws);
  return diagnostics(draws);
}

bool Diagnostics::any_degenerate() const {
  return std::any_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
}

double Diagnostics::max_rhat() const {
  double out = kNaN;
  for (Eigen::Index j = 0; j < rhat.size(); ++j) {
    if (!degenerate[static_cast<std::size_t>(j)]) out = std::isnan(out) ? rhat(j) : std::max(out, rhat(j));
  }
  return out;
}

double Diagnostics::min_ess() const {
  double out = kNaN;
  for (Eigen::Index j = 0; j < ess_bulk.size(); ++j) {
    if (!degenerate[static_cast<std::size_t>(j)]) out = std::isnan(out) ? ess_bulk(j) : std::min(out, ess_bulk(j));
  }
  return out;
}

Matrix SampleResult::pooled() const {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.draws.rows();
  Matrix out(rows, chains.empty() ? 0 : chains.front().draws.cols());
  Eigen::Index off = 0;
  for (const auto& c : chains) {
    out.middleRows(off, c.draws.rows()) = c.draws;
    off += c.draws.rows();
  }
  return out;
}

SampleResult sample(const LogDensity& target, const std::vector<Vector>& inits,
                    const HmcConfig& config) {
  config.validate();
  if (inits.empty()) throw Error(ErrorKind::config, "hmc: no initial point");
  if (inits.size() != 1 && inits.size() != static_cast<std::size_t>(config.n_chains)) {
    throw Error(ErrorKind::config, "hmc: need one init or one per chain");
  }
  const std::size_t n = static_cast<std::size_t>(config.n_chains);
  SampleResult result;
  result.chains.resize(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      try {
        const Vector& init = inits.size() == 1 ? inits.front() : inits[c];
        result.chains[c] = run_chain(target, init, config, static_cast<int>(c));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::size_t workers = config.threads > 0 ? static_cast<std::size_t>(config.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (n >= 2 && config.n_samples >= 4) result.diag = diagnostics(result.chains);
  return result;
}

void write_chain_csv(const std::string& path, const ParameterChain& chain,
                     const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != chain.draws.cols()) {
    throw Error(ErrorKind::dimension, "write_chain_csv: name count differs from dimension");
  }
  io::write_csv(path, names, chain.draws);
}

Matrix read_chain_csv(const std::string& path) {
  const io::CsvTable t = io::read_csv(path);
  Matrix out(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.rows[i][j];
    }
  }
  return out;
}

io::Json diagnostics_to_json(const SampleResult& result, const std::vector<std::string>& names) {
  io::Json doc;
  io::Json chains = io::Json::array();
  for (const auto& c : result.chains) {
    chains.push_back({{"accept_rate", c.accept_rate},
                      {"divergences", c.divergence_count},
                      {"warmup_divergences", c.warmup_divergences},
                      {"step_size", c.step_size}});
  }
  doc["chains"] = chains;
  const Diagnostics& d = result.diag;
  io::Json params = io::Json::object();
  for (Eigen::Index j = 0; j < d.rhat.size(); ++j) {
    const std::string key = j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                                        : std::to_string(j);
    io::Json p;
    auto num = [](double x) { return std::isfinite(x) ? io::Json(x) : io::Json(nullptr); };
    p["mean"] = num(d.mean(j));
    p["sd"] = num(std::sqrt(d.variance(j)));
    p["rhat"] = num(d.rhat(j));
    p["ess_bulk"] = num(d.ess_bulk(j));
    p["mcse_mean"] = num(d.mcse_mean(j));
    p["degenerate"] = static_cast<bool>(d.degenerate[static_cast<std::size_t>(j)]);
    params[key] = p;
  }
  doc["parameters"] = params;
  doc["max_rhat"] = std::isfinite(d.max_rhat()) ? io::Json(d.max_rhat()) : io::Json(nullptr);
  doc["min_ess_bulk"] = std::isfinite(d.min_ess()) ? io::Json(d.min_ess()) : io::Json(nullptr);
  return doc;
}

}  // namespace blim
