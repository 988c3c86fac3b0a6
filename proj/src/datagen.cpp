#include "mvgpt/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mvgpt/error.hpp"

namespace mvgpt {

void OscillatorSpec::validate() const {
  if (!(damping >= 0.0)) throw ValidationError("oscillator damping must be non-negative");
  if (!(omega > 0.0)) throw ValidationError("oscillator omega must be positive");
  if (!(dt > 0.0)) throw ValidationError("oscillator dt must be positive");
  if (!(noise_std >= 0.0)) throw ValidationError("oscillator noise must be non-negative");
  if (n_points == 0) throw ValidationError("oscillator needs at least one point");
  if (!std::isfinite(amplitude) || !std::isfinite(phase)) {
    throw ValidationError("oscillator parameters must be finite");
  }
}

double OscillatorSpec::value(double t) const {
  return amplitude * std::exp(-damping * t) * std::cos(omega * t + phase);
}

std::vector<OscillatorSpec> default_oscillator_family() {
  std::vector<OscillatorSpec> out;
  for (double a : {0.6, 0.8, 1.0}) {
    for (double g : {0.05, 0.1}) {
      for (double p : {0.0, std::numbers::pi / 3, 2 * std::numbers::pi / 3}) {
        OscillatorSpec s;
        s.amplitude = a;
        s.damping = g;
        s.phase = p;
        out.push_back(s);
      }
    }
  }
  return out;
}

OscillatorSpec default_oscillator_holdout() {
  OscillatorSpec s;
  s.amplitude = 0.9;
  s.damping = 0.075;
  s.phase = std::numbers::pi / 6;
  return s;
}

namespace {

void emit(const OscillatorSpec& spec, const std::string& id, std::mt19937_64& rng,
          std::vector<EventRecord>& out) {
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t k = 0; k < spec.n_points; ++k) {
    const double t = static_cast<double>(k) * spec.dt;
    double v = spec.value(t);
    if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
    out.push_back({id, t, "x", v});
  }
}

}  // namespace

OscillatorDataset gen_oscillator_dataset(const std::vector<OscillatorSpec>& specs,
                                         const OscillatorSpec& holdout, std::uint64_t seed) {
  if (specs.empty()) throw ValidationError("oscillator dataset needs at least one spec");
  holdout.validate();
  for (const auto& s : specs) {
    s.validate();
    if (s == holdout) throw ValidationError("holdout oscillator duplicates a training spec");
  }
  std::mt19937_64 rng(seed);
  OscillatorDataset out;
  char id[32];
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::snprintf(id, sizeof(id), "osc%03zu", i);
    emit(specs[i], id, rng, out.train);
  }
  emit(holdout, "holdout", rng, out.holdout);
  return out;
}

std::vector<EventRecord> gen_calibration_dataset(const CalibrationSpec& spec, std::uint64_t seed) {
  if (!(spec.noise_std > 0.0)) throw ValidationError("calibration noise_std must be positive");
  if (!(std::abs(spec.rho) < 1.0)) throw ValidationError("calibration rho must lie in (-1, 1)");
  if (!(spec.dt > 0.0)) throw ValidationError("calibration dt must be positive");
  if (spec.n_sequences == 0 || spec.length == 0) {
    throw ValidationError("calibration dataset must be non-empty");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, spec.noise_std);
  const double stationary = spec.noise_std / std::sqrt(1.0 - spec.rho * spec.rho);
  std::vector<EventRecord> out;
  out.reserve(spec.n_sequences * spec.length);
  char id[32];
  for (std::size_t s = 0; s < spec.n_sequences; ++s) {
    std::snprintf(id, sizeof(id), "ar%04zu", s);
    double y = stationary * (eps(rng) / spec.noise_std);
    for (std::size_t k = 0; k < spec.length; ++k) {
      if (k > 0) y = spec.rho * y + eps(rng);
      out.push_back({id, static_cast<double>(k) * spec.dt, "y", y});
    }
  }
  return out;
}

}  // namespace mvgpt
