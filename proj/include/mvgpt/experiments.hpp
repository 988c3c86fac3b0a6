#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvgpt/checkpoint.hpp"
#include "mvgpt/config.hpp"
#include "mvgpt/eval.hpp"
#include "mvgpt/sampler.hpp"
#include "mvgpt/training.hpp"

namespace mvgpt {

struct TrainedModel {
  Checkpoint checkpoint;
  TrainResult result;
};

/// Trains a Gaussian-head model over `vocab`. An empty `val` validates on the
/// training set.
TrainedModel train_continuous_model(const Vocabulary& vocab, std::span<const EventRecord> train,
                                    std::span<const EventRecord> val, ModelConfig model,
                                    const TrainConfig& cfg);

/// Fits n_bins quantile bins per numeric class on `train`, then trains the
/// same transformer on bin tokens with the value loss switched off.
TrainedModel train_discrete_model(const Vocabulary& vocab, std::span<const EventRecord> train,
                                  std::span<const EventRecord> val, std::size_t n_bins,
                                  ModelConfig model, TrainConfig cfg);

/// Writes checkpoint, `<stem>_loss.csv` and, for binned models, `<stem>_bins.csv`.
void write_trained_model(const std::string& out_dir, const std::string& stem,
                         const TrainedModel& trained);

struct Rollout {
  std::string model;
  std::string seq_id;
  std::string split;
  std::vector<double> times;       // raw timestamps of the predicted points
  std::vector<double> truth;       // raw values
  std::vector<double> prediction;  // raw values
  std::size_t missing = 0;         // points the model never produced (padded)
  double mse = 0.0;                // mse_scaled over the predicted points
};

/// Seeds generation with the first `seed_points` observations of a
/// single-class trajectory and rolls out until every remaining observation has
/// a prediction. A missing tail (token budget exhausted) repeats the last
/// prediction and is counted in `missing`.
Rollout rollout_trajectory(const TokenSequence& truth, const Checkpoint& ckpt,
                           const Transformer<float>& model, std::size_t seed_points,
                           const SampleOptions& opts);

struct ModelSummary {
  std::string name;
  double train_mse_mean = 0.0;
  double train_mse_max = 0.0;
  double holdout_mse = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
};

struct OscillatorSummary {
  std::vector<ModelSummary> models;  // "multivariate", "discrete_n10", ..., "fixed_sigma"
  const ModelSummary* find(const std::string& name) const;
};

/// Full oscillator pipeline: data, multivariate model, binned baselines and
/// the optional fixed-variance ablation, max-likelihood rollouts, reports.
OscillatorSummary run_oscillator_experiment(const RunConfig& cfg, const std::string& out_dir);

struct CalibrationModelSummary {
  std::string name;
  double coverage = 0.0;
  std::optional<double> qq_max_deviation;  // central |theoretical| <= 1.96; Gaussian heads only
};

struct CalibrationSummary {
  std::vector<CalibrationModelSummary> models;  // "multivariate", "discrete_n10", ...
  const CalibrationModelSummary* find(const std::string& name) const;
};

/// Largest |sample - theoretical| over points with |theoretical| <= 1.96.
double qq_central_deviation(std::span<const QQPoint> points);

/// Known-noise AR(1) data, multivariate model plus binned baselines, then
/// teacher-forced 95% coverage and QQ points for class "y" on a test split.
CalibrationSummary run_calibration_experiment(const RunConfig& cfg, const std::string& out_dir);

/// Writes the resolved config as `config.json` under out_dir (created if needed).
void write_resolved_config(const RunConfig& cfg, const std::string& out_dir);

}  // namespace mvgpt
