#include "blim/eof.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "blim/errors.hpp"
#include "blim/random.hpp"

namespace blim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<Eigen::Index> valid_indices(const std::vector<bool>& mask, Eigen::Index n) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (mask.empty() || mask[static_cast<std::size_t>(j)]) out.push_back(j);
  }
  return out;
}

double great_circle(double lat1, double lon1, double lat2, double lon2) {
  const double c = std::sin(lat1) * std::sin(lat2) + std::cos(lat1) * std::cos(lat2) * std::cos(lon1 - lon2);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Vector area_weights(const Vector& lat, bool on) {
  if (!on || lat.size() == 0) return Vector::Ones(lat.size());
  return lat.unaryExpr([](double d) { return std::sqrt(std::max(0.0, std::cos(d * kDeg))); });
}

}  // namespace

Eigen::Index GriddedField::n_valid() const {
  return static_cast<Eigen::Index>(valid_indices(mask, n_points()).size());
}

void GriddedField::validate() const {
  const Eigen::Index n = n_points();
  if (lat.size() != n || lon.size() != n) {
    throw Error(ErrorKind::dimension, "field: coordinate count differs from point count");
  }
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n) {
    throw Error(ErrorKind::dimension, "field: mask length differs from point count");
  }
  if (!(dt > 0.0)) throw Error(ErrorKind::domain, "field: dt must be positive");
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(std::abs(lat(j)) <= 90.0)) throw Error(ErrorKind::domain, "field: |lat| exceeds 90");
  }
  for (Eigen::Index j : valid_indices(mask, n)) {
    if (!values.col(j).allFinite()) {
      throw Error(ErrorKind::domain, "field: non-finite value at a valid point");
    }
  }
}

io::Json synth_spec_to_json(const SynthSpec& s) {
  io::Json j;
  j["n_points"] = s.n_points;
  j["length"] = s.length;
  j["k_true"] = s.k_true;
  j["dt"] = s.dt;
  j["snr"] = std::isfinite(s.snr) ? io::Json(s.snr) : io::Json("inf");
  j["seed"] = s.seed;
  return j;
}

SynthSpec synth_spec_from_json(const io::Json& j) {
  SynthSpec s;
  s.n_points = j.value("n_points", s.n_points);
  s.length = j.value("length", s.length);
  s.k_true = j.value("k_true", s.k_true);
  s.dt = j.value("dt", s.dt);
  if (j.contains("snr")) {
    s.snr = j["snr"].is_string() ? io::parse_double(j["snr"].get<std::string>()) : j["snr"].get<double>();
  }
  s.seed = j.value("seed", s.seed);
  return s;
}

SynthOutput synth_field_full(const SynthSpec& spec) {
  const Eigen::Index n = spec.n_points, t_len = spec.length, k = spec.k_true;
  if (n < 1 || t_len < 2 || k < 1) throw Error(ErrorKind::config, "synth_field: sizes must be positive");
  if (k > std::min(n, t_len)) throw Error(ErrorKind::config, "synth_field: k_true exceeds min(n_points, T)");
  if (!(spec.snr > 0.0)) throw Error(ErrorKind::config, "synth_field: snr must be positive");

  SynthOutput out;
  GriddedField& f = out.field;
  f.dt = spec.dt;
  f.lat.resize(n);
  f.lon.resize(n);
  f.mask.assign(static_cast<std::size_t>(n), true);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (Eigen::Index i = 0; i < n; ++i) {
    f.lat(i) = std::asin(1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n)) / kDeg;
    f.lon(i) = std::fmod(static_cast<double>(i) * golden / kDeg, 360.0);
  }

  Rng prng = make_rng(spec.seed, {0xf1e1d, 1});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.patterns = Matrix::Zero(k, n);
  for (Eigen::Index m = 0; m < k; ++m) {
    for (int bump = 0; bump < 3; ++bump) {
      const double clat = std::asin(2.0 * unit(prng) - 1.0);
      const double clon = 2.0 * std::numbers::pi * unit(prng);
      const double width = (20.0 + 30.0 * unit(prng)) * kDeg;
      const double amp = normal(prng);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = great_circle(f.lat(i) * kDeg, f.lon(i) * kDeg, clat, clon);
        out.patterns(m, i) += amp * std::exp(-0.5 * d * d / (width * width));
      }
    }
    const double rms = std::sqrt(out.patterns.row(m).squaredNorm() / static_cast<double>(n));
    if (rms > 0.0) out.patterns.row(m) /= rms;
  }

  Rng lrng = make_rng(spec.seed, {0xf1e1d, 2});
  Matrix b, q;
  for (int attempt = 0;; ++attempt) {
    b = Matrix::Zero(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j) b(i, j) = i == j ? -(0.3 + 1.2 * unit(lrng)) : 0.05 * normal(lrng);
    if (max_real_eigenvalue(b) < -0.05 || attempt > 100) break;
  }
  Matrix a(k, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(lrng);
  q = 0.2 * a * a.transpose() / static_cast<double>(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    q(i, i) += 2.0 * -b(i, i) / (1.0 + 0.3 * static_cast<double>(i));
  }
  out.modes = LimParams{b, symmetrize(q)};

  const std::int64_t sub = 100;
  EmOptions quiet;
  quiet.quiet = true;
  const Vector x0 = draw_stationary(out.modes, stream_key(spec.seed, {0xf1e1d, 3}));
  const TimeSeries path = simulate_em(out.modes, x0, spec.dt / static_cast<double>(sub),
                                      static_cast<std::int64_t>(t_len) * sub,
                                      stream_key(spec.seed, {0xf1e1d, 4}), quiet);
  const TimeSeries modes = slice(subsample(path, sub), 1, t_len);

  f.values = modes.values * out.patterns;
  double noise_sd = 0.0;
  if (std::isfinite(spec.snr)) {
    const Matrix centered = f.values.rowwise() - f.values.colwise().mean();
    const double signal_var = centered.squaredNorm() / static_cast<double>((t_len - 1) * n);
    noise_sd = std::sqrt(signal_var / spec.snr);
  }
  if (noise_sd > 0.0) {
    Rng nrng = make_rng(spec.seed, {0xf1e1d, 5});
    for (Eigen::Index c = 0; c < n; ++c)
      for (Eigen::Index r = 0; r < t_len; ++r) f.values(r, c) += noise_sd * normal(nrng);
  }
  return out;
}

GriddedField synth_field(const SynthSpec& spec) { return synth_field_full(spec).field; }

EofFit fit_eof(const GriddedField& field, Eigen::Index k, bool area_weight) {
  field.validate();
  const Eigen::Index n = field.n_points(), t_len = field.length();
  const auto valid = valid_indices(field.mask, n);
  const Eigen::Index nv = static_cast<Eigen::Index>(valid.size());
  if (k < 1 || k > std::min(t_len, nv)) {
    throw Error(ErrorKind::rank, "fit_eof: k must lie in [1, min(T, valid points)]");
  }
  EofFit out;
  EofBasis& basis = out.basis;
  basis.mask = field.mask.empty() ? std::vector<bool>(static_cast<std::size_t>(n), true) : field.mask;
  basis.weights = area_weights(field.lat, area_weight);
  basis.mean = Vector::Zero(n);
  Matrix x(t_len, nv);
  for (Eigen::Index c = 0; c < nv; ++c) {
    const Eigen::Index j = valid[static_cast<std::size_t>(c)];
    basis.mean(j) = field.values.col(j).mean();
    x.col(c) = (field.values.col(j).array() - basis.mean(j)) * basis.weights(j);
  }
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  const double tol = s.size() > 0 ? s(0) * 1e-12 * static_cast<double>(std::max(t_len, nv)) : 0.0;
  const Eigen::Index rank = (s.array() > tol).count();
  if (k > rank) {
    throw Error(ErrorKind::rank, "fit_eof: k = " + std::to_string(k) + " exceeds the field rank " +
                                     std::to_string(rank));
  }
  const double total = s.squaredNorm();
  basis.explained = s.head(k).array().square() / total;
  basis.patterns = Matrix::Zero(k, n);
  Matrix v = svd.matrixV().leftCols(k);
  Matrix u = svd.matrixU().leftCols(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index big = 0;
    v.col(i).cwiseAbs().maxCoeff(&big);
    if (v(big, i) < 0.0) {
      v.col(i) *= -1.0;
      u.col(i) *= -1.0;
    }
  }
  for (Eigen::Index c = 0; c < nv; ++c) basis.patterns.col(valid[static_cast<std::size_t>(c)]) = v.row(c).transpose();
  out.pcs.dt = field.dt;
  out.pcs.values = u * s.head(k).asDiagonal();
  return out;
}

TimeSeries project(const EofBasis& basis, const GriddedField& field) {
  if (field.n_points() != basis.patterns.cols()) {
    throw Error(ErrorKind::dimension, "project: field and basis differ in point count");
  }
  const auto valid = valid_indices(basis.mask, field.n_points());
  TimeSeries out;
  out.dt = field.dt;
  out.values = Matrix::Zero(field.length(), basis.k());
  for (Eigen::Index j : valid) {
    const Vector anomaly = (field.values.col(j).array() - basis.mean(j)) * basis.weights(j);
    out.values += anomaly * basis.patterns.col(j).transpose();
  }
  return out;
}

GriddedField reconstruct(const EofBasis& basis, const TimeSeries& series, const Vector& lat,
                         const Vector& lon) {
  if (series.dim() != basis.k()) throw Error(ErrorKind::dimension, "reconstruct: series dim differs from k");
  const Eigen::Index n = basis.patterns.cols();
  GriddedField f;
  f.dt = series.dt;
  f.lat = lat;
  f.lon = lon;
  f.mask = basis.mask;
  f.values = series.values * basis.patterns;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (basis.mask[static_cast<std::size_t>(j)]) {
      f.values.col(j) = f.values.col(j).array() / basis.weights(j) + basis.mean(j);
    } else {
      f.values.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return f;
}

TimeSeries moving_average(const TimeSeries& series, Eigen::Index window) {
  if (window < 1) throw Error(ErrorKind::domain, "moving_average: window must be at least 1");
  if (window > series.length()) throw Error(ErrorKind::domain, "moving_average: window exceeds series length");
  TimeSeries out;
  out.dt = series.dt;
  out.values.resize(series.length(), series.dim());
  for (Eigen::Index t = 0; t < series.length(); ++t) {
    const Eigen::Index first = std::max<Eigen::Index>(0, t - window + 1);
    out.values.row(t) = series.values.middleRows(first, t - first + 1).colwise().mean();
  }
  return out;
}

SeriesSplit split(const TimeSeries& series, Eigen::Index train, Eigen::Index test) {
  if (train < 0 || test < 0 || train + test > series.length()) {
    throw Error(ErrorKind::domain, "split: train + test exceeds the series length");
  }
  SeriesSplit s;
  s.train = slice(series, 0, train);
  s.test = slice(series, train, test);
  s.validation = slice(series, train + test, series.length() - train - test);
  return s;
}

GriddedField slice_field(const GriddedField& field, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > field.length()) {
    throw Error(ErrorKind::domain, "slice_field: range outside the record");
  }
  GriddedField out = field;
  out.values = field.values.middleRows(begin, count);
  return out;
}

void write_field(const std::string& prefix, const GriddedField& field) {
  field.validate();
  const Eigen::Index n = field.n_points(), t_len = field.length();
  std::vector<std::string> header{"lat", "lon"};
  for (Eigen::Index t = 0; t < t_len; ++t) header.push_back(std::to_string(t));
  Matrix rows(n, t_len + 2);
  rows.col(0) = field.lat;
  rows.col(1) = field.lon;
  rows.rightCols(t_len) = field.values.transpose();
  io::write_csv(prefix + ".csv", header, rows);
  io::Json meta;
  meta["dt"] = field.dt;
  meta["n_points"] = n;
  meta["length"] = t_len;
  meta["mask"] = field.mask.empty() ? std::vector<bool>(static_cast<std::size_t>(n), true) : field.mask;
  io::write_json(prefix + ".json", meta);
}

GriddedField read_field(const std::string& prefix) {
  const io::CsvTable t = io::read_csv(prefix + ".csv");
  const io::Json meta = io::read_json(prefix + ".json");
  if (t.header.size() < 3 || t.header[0] != "lat" || t.header[1] != "lon") {
    throw Error(ErrorKind::io, prefix + ".csv: expected header lat,lon,<time steps>");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(t.rows.size());
  const Eigen::Index t_len = static_cast<Eigen::Index>(t.header.size()) - 2;
  GriddedField f;
  f.dt = meta.at("dt").get<double>();
  f.lat.resize(n);
  f.lon.resize(n);
  f.values.resize(t_len, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    f.lat(i) = row[0];
    f.lon(i) = row[1];
    for (Eigen::Index s = 0; s < t_len; ++s) f.values(s, i) = row[static_cast<std::size_t>(s + 2)];
  }
  f.mask = meta.at("mask").get<std::vector<bool>>();
  f.validate();
  return f;
}

io::Json basis_to_json(const EofBasis& b) {
  io::Json j;
  j["k"] = b.k();
  j["patterns"] = io::matrix_to_json(b.patterns);
  j["explained_fraction"] = io::vector_to_json(b.explained);
  j["mean"] = io::vector_to_json(b.mean);
  j["weights"] = io::vector_to_json(b.weights);
  j["mask"] = b.mask;
  return j;
}

EofBasis basis_from_json(const io::Json& j) {
  EofBasis b;
  b.patterns = io::matrix_from_json(j.at("patterns"));
  b.explained = io::vector_from_json(j.at("explained_fraction"));
  b.mean = io::vector_from_json(j.at("mean"));
  b.weights = io::vector_from_json(j.at("weights"));
  b.mask = j.at("mask").get<std::vector<bool>>();
  return b;
}

}  // namespace blim
