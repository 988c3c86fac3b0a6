#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvgpt/datagen.hpp"
#include "mvgpt/model.hpp"
#include "mvgpt/sampler.hpp"
#include "mvgpt/schema.hpp"
#include "mvgpt/training.hpp"

namespace mvgpt {

struct PathsConfig {
  std::string data;
  std::string vocab;
  std::string checkpoint;
  std::string out_dir = "out";
};

struct PrepConfig {
  std::string time_normalization = "zscore";  // or log_zscore
  std::vector<std::string> sequence_ordered_classes;
};

struct OscillatorExperimentConfig {
  std::uint64_t data_seed = 7;
  std::size_t seed_points = 5;
  std::vector<std::size_t> discrete_bins{10};
  bool fixed_sigma_ablation = false;
  double ablation_sigma = 1.0;
};

struct CalibrationExperimentConfig {
  std::uint64_t data_seed = 11;
  CalibrationSpec data;
  std::size_t test_sequences = 32;
  std::vector<std::size_t> discrete_bins{10, 100};
};

/// Everything a CLI command can be configured with. Model d_c is derived from
/// the data, so it is not part of the file format.
struct RunConfig {
  std::string preset = "default";
  PathsConfig paths;
  PrepConfig prep;
  ModelConfig model;
  TrainConfig train;
  SampleOptions sample;
  std::size_t bins = 10;
  OscillatorExperimentConfig oscillator;
  CalibrationExperimentConfig calibration;

  nlohmann::ordered_json to_json() const;
  /// Parses a complete document (as produced by to_json()).
  static RunConfig from_json(const nlohmann::ordered_json& j);
};

/// Named starting points: "default", "quick" (smoke-sized) and "large"
/// (d_e 128, 4 layers). Throws ValidationError for unknown names.
RunConfig preset_config(const std::string& name);

/// Overlays `patch` onto `base` key by key. Objects merge recursively; any key
/// absent from `base` is rejected with ValidationError naming its path.
nlohmann::ordered_json merge_config(const nlohmann::ordered_json& base,
                                    const nlohmann::ordered_json& patch,
                                    const std::string& where = "");

/// Resolves preset, then `default_out_dir` (when nonempty), then the JSON
/// config file at `path` (when nonempty). A preset named inside the file is
/// used unless `preset_override` is given.
RunConfig resolve_config(const std::string& path, const std::string& preset_override = "",
                         const std::string& default_out_dir = "");

VocabularyOptions vocabulary_options(const PrepConfig& prep);

}  // namespace mvgpt
