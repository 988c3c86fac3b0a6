#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvgpt/schema.hpp"

namespace mvgpt {

/// x(t) = A exp(-gamma t) cos(omega t + phi), sampled at t = k dt.
struct OscillatorSpec {
  double amplitude = 1.0;
  double damping = 0.0;
  double omega = 1.0;
  double phase = 0.0;
  double dt = 0.25;
  std::size_t n_points = 100;
  double noise_std = 0.0;

  void validate() const;
  double value(double t) const;
  bool operator==(const OscillatorSpec&) const = default;
};

/// Default training family: every combination of A in {0.6, 0.8, 1.0},
/// gamma in {0.05, 0.1} and phi in {0, pi/3, 2pi/3}.
std::vector<OscillatorSpec> default_oscillator_family();
OscillatorSpec default_oscillator_holdout();

struct OscillatorDataset {
  std::vector<EventRecord> train;
  std::vector<EventRecord> holdout;
};

/// One sequence per spec with the single numeric class "x"; training ids are
/// "osc000", "osc001", ... and the holdout id is "holdout". Throws
/// ValidationError when the holdout equals a training spec.
OscillatorDataset gen_oscillator_dataset(const std::vector<OscillatorSpec>& specs,
                                         const OscillatorSpec& holdout, std::uint64_t seed);

struct CalibrationSpec {
  std::size_t n_sequences = 64;
  std::size_t length = 100;
  double noise_std = 0.5;
  double rho = 0.9;
  double dt = 1.0;
};

/// AR(1) series y_t = rho y_{t-1} + e_t with e_t ~ Normal(0, noise_std^2) and
/// y_0 drawn from the stationary law; class "y". The one-step conditional law
/// is exactly Normal(rho y_{t-1}, noise_std^2).
std::vector<EventRecord> gen_calibration_dataset(const CalibrationSpec& spec, std::uint64_t seed);

}  // namespace mvgpt
