#pragma once

// Gridded fields, EOF truncation, smoothing, and train/test splits.

#include <cstdint>
#include <string>
#include <vector>

#include "blim/io.hpp"
#include "blim/sde.hpp"

namespace blim {

struct GriddedField {
  double dt = 1.0;
  Matrix values;  // T x n_points
  Vector lat;     // degrees
  Vector lon;
  std::vector<bool> mask;  // true = valid

  Eigen::Index n_points() const { return values.cols(); }
  Eigen::Index length() const { return values.rows(); }
  Eigen::Index n_valid() const;
  void validate() const;
};

struct SynthSpec {
  Eigen::Index n_points = 500;
  Eigen::Index length = 1800;
  Eigen::Index k_true = 10;
  double dt = 1.0;
  double snr = 1.0;  // signal variance / noise variance; infinity for no noise
  std::uint64_t seed = 0;
};

io::Json synth_spec_to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const io::Json& j);

struct SynthOutput {
  GriddedField field;
  LimParams modes;  // LIM driving the temporal modes
  Matrix patterns;  // k_true x n_points
};

/// Smooth Gaussian-bump patterns on a Fibonacci sphere grid, times the modes
/// of a stable random LIM (Euler-Maruyama at dt / 100), plus white noise.
SynthOutput synth_field_full(const SynthSpec& spec);
GriddedField synth_field(const SynthSpec& spec);

struct EofBasis {
  Matrix patterns;     // k x n_points, orthonormal rows in weighted space, 0 at masked points
  Vector explained;    // s_i^2 / sum s_j^2
  Vector mean;         // n_points
  Vector weights;      // sqrt(cos lat) or ones
  std::vector<bool> mask;

  Eigen::Index k() const { return patterns.rows(); }
};

struct EofFit {
  EofBasis basis;
  TimeSeries pcs;
};

/// Centers in time, applies sqrt(cos lat) weights when area_weight, and keeps
/// the leading k right singular vectors. Throws ErrorKind::rank when k
/// exceeds the numerical rank.
EofFit fit_eof(const GriddedField& field, Eigen::Index k, bool area_weight = true);

/// Principal components of a field on an existing basis.
TimeSeries project(const EofBasis& basis, const GriddedField& field);

/// mean + series x patterns, unweighted; masked points are NaN.
GriddedField reconstruct(const EofBasis& basis, const TimeSeries& series, const Vector& lat,
                         const Vector& lon);

/// Backward moving average; the first window - 1 points average what exists.
TimeSeries moving_average(const TimeSeries& series, Eigen::Index window);

struct SeriesSplit {
  TimeSeries train;
  TimeSeries test;
  TimeSeries validation;
};

SeriesSplit split(const TimeSeries& series, Eigen::Index train, Eigen::Index test);
GriddedField slice_field(const GriddedField& field, Eigen::Index begin, Eigen::Index count);

/// <prefix>.csv: lat,lon then one column per time step; <prefix>.json: dt, mask.
void write_field(const std::string& prefix, const GriddedField& field);
GriddedField read_field(const std::string& prefix);

io::Json basis_to_json(const EofBasis& b);
EofBasis basis_from_json(const io::Json& j);

}  // namespace blim
