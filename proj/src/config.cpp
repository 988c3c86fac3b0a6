#include "mvgpt/config.hpp"

#include <fstream>

#include "mvgpt/error.hpp"

namespace mvgpt {

namespace {

using json = nlohmann::ordered_json;

const char* stop_name(StopCondition s) {
  return s == StopCondition::token_budget ? "token_budget" : "elapsed_time_budget";
}

StopCondition parse_stop(const std::string& s) {
  if (s == "token_budget") return StopCondition::token_budget;
  if (s == "elapsed_time_budget") return StopCondition::elapsed_time_budget;
  throw ValidationError("unknown stop condition '" + s + "'");
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["paths"] = {{"data", paths.data},
                {"vocab", paths.vocab},
                {"checkpoint", paths.checkpoint},
                {"out_dir", paths.out_dir}};
  j["prep"] = {{"time_normalization", prep.time_normalization},
               {"sequence_ordered_classes", prep.sequence_ordered_classes}};
  auto m = model.to_json();
  m.erase("d_c");
  j["model"] = m;
  j["train"] = train.to_json();
  j["sample"] = {{"mode", sample.mode == SampleMode::sample ? "sample" : "max_likelihood"},
                 {"fixed_sigma", optional_json(sample.fixed_sigma)},
                 {"max_new_tokens", sample.max_new_tokens},
                 {"stop", stop_name(sample.stop)},
                 {"time_budget", sample.time_budget},
                 {"temperature", sample.temperature},
                 {"seed", sample.rng_seed},
                 {"forbid_consecutive_time", sample.forbid_consecutive_time}};
  j["bins"] = bins;
  j["oscillator"] = {{"data_seed", oscillator.data_seed},
                     {"seed_points", oscillator.seed_points},
                     {"discrete_bins", oscillator.discrete_bins},
                     {"fixed_sigma_ablation", oscillator.fixed_sigma_ablation},
                     {"ablation_sigma", oscillator.ablation_sigma}};
  j["calibration"] = {{"data_seed", calibration.data_seed},
                      {"n_sequences", calibration.data.n_sequences},
                      {"length", calibration.data.length},
                      {"noise_std", calibration.data.noise_std},
                      {"rho", calibration.data.rho},
                      {"dt", calibration.data.dt},
                      {"test_sequences", calibration.test_sequences},
                      {"discrete_bins", calibration.discrete_bins}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.preset = j.at("preset").get<std::string>();
    const auto& p = j.at("paths");
    c.paths = {p.at("data").get<std::string>(), p.at("vocab").get<std::string>(),
               p.at("checkpoint").get<std::string>(), p.at("out_dir").get<std::string>()};
    const auto& pr = j.at("prep");
    c.prep.time_normalization = pr.at("time_normalization").get<std::string>();
    c.prep.sequence_ordered_classes =
        pr.at("sequence_ordered_classes").get<std::vector<std::string>>();
    auto m = j.at("model");
    m["d_c"] = 1;  // placeholder; the real width comes from the vocabulary
    c.model = ModelConfig::from_json(m);
    c.model.d_c = 0;
    c.train = TrainConfig::from_json(j.at("train"));
    const auto& s = j.at("sample");
    c.sample.mode = parse_sample_mode(s.at("mode").get<std::string>());
    c.sample.fixed_sigma = optional_double(s.at("fixed_sigma"));
    c.sample.max_new_tokens = s.at("max_new_tokens").get<std::size_t>();
    c.sample.stop = parse_stop(s.at("stop").get<std::string>());
    c.sample.time_budget = s.at("time_budget").get<double>();
    c.sample.temperature = s.at("temperature").get<double>();
    c.sample.rng_seed = s.at("seed").get<std::uint64_t>();
    c.sample.forbid_consecutive_time = s.at("forbid_consecutive_time").get<bool>();
    c.bins = j.at("bins").get<std::size_t>();
    const auto& o = j.at("oscillator");
    c.oscillator.data_seed = o.at("data_seed").get<std::uint64_t>();
    c.oscillator.seed_points = o.at("seed_points").get<std::size_t>();
    c.oscillator.discrete_bins = o.at("discrete_bins").get<std::vector<std::size_t>>();
    c.oscillator.fixed_sigma_ablation = o.at("fixed_sigma_ablation").get<bool>();
    c.oscillator.ablation_sigma = o.at("ablation_sigma").get<double>();
    const auto& k = j.at("calibration");
    c.calibration.data_seed = k.at("data_seed").get<std::uint64_t>();
    c.calibration.data.n_sequences = k.at("n_sequences").get<std::size_t>();
    c.calibration.data.length = k.at("length").get<std::size_t>();
    c.calibration.data.noise_std = k.at("noise_std").get<double>();
    c.calibration.data.rho = k.at("rho").get<double>();
    c.calibration.data.dt = k.at("dt").get<double>();
    c.calibration.test_sequences = k.at("test_sequences").get<std::size_t>();
    c.calibration.discrete_bins = k.at("discrete_bins").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  if (c.prep.time_normalization != "zscore" && c.prep.time_normalization != "log_zscore") {
    throw ValidationError("prep.time_normalization must be zscore or log_zscore");
  }
  if (c.oscillator.seed_points == 0) throw ValidationError("seed_points must be positive");
  if (c.bins == 0) throw ValidationError("bins must be positive");
  return c;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  // Sized for a single CPU core: four oscillator models train in a few minutes.
  c.model.d_e = 32;
  c.model.n_head = 4;
  c.model.n_layer = 2;
  c.model.context = 128;
  c.model.value_map_hidden = 32;
  c.model.dropout = 0.0;
  c.train.max_steps = 6000;
  c.train.batch_tokens = 512;
  c.train.lr_max = 4e-3;
  c.train.warmup_steps = 50;
  c.train.min_lr = 1e-4;
  c.train.weight_decay = 0.01;
  c.train.grad_clip = 1.0;
  c.train.eval_interval = 500;
  c.train.patience = 0;
  c.sample.mode = SampleMode::max_likelihood;
  c.oscillator.discrete_bins = {10, 100};
  c.oscillator.fixed_sigma_ablation = true;
  if (name == "default") return c;
  if (name == "quick") {
    c.model.n_layer = 1;
    c.train.max_steps = 120;
    c.train.lr_max = 1e-3;
    c.train.warmup_steps = 20;
    c.train.eval_interval = 40;
    c.train.patience = 10;
    c.oscillator.discrete_bins = {10};
    c.calibration.data.n_sequences = 16;
    c.calibration.test_sequences = 8;
    return c;
  }
  if (name == "large") {
    c.model.d_e = 128;
    c.model.n_layer = 4;
    c.train.batch_tokens = 2048;
    c.train.lr_max = 1e-3;
    c.train.warmup_steps = 200;
    return c;
  }
  throw ValidationError("unknown preset '" + name + "' (expected default, quick or large)");
}

json merge_config(const json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ValidationError("config section '" + where + "' must be an object");
  json out = base;
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!out.contains(it.key())) throw ValidationError("unknown config key '" + path + "'");
    auto& slot = out[it.key()];
    if (slot.is_object()) {
      slot = merge_config(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
  return out;
}

RunConfig resolve_config(const std::string& path, const std::string& preset_override,
                         const std::string& default_out_dir) {
  json patch = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config '" + path + "'");
    try {
      patch = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!patch.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
  }
  std::string preset = "default";
  if (patch.contains("preset")) {
    if (!patch["preset"].is_string()) throw ValidationError("config key 'preset' must be a string");
    preset = patch["preset"].get<std::string>();
  }
  if (!preset_override.empty()) preset = preset_override;
  auto base = preset_config(preset);
  if (!default_out_dir.empty()) base.paths.out_dir = default_out_dir;
  auto merged = merge_config(base.to_json(), patch);
  merged["preset"] = preset;
  return RunConfig::from_json(merged);
}

VocabularyOptions vocabulary_options(const PrepConfig& prep) {
  VocabularyOptions o;
  o.time.method = prep.time_normalization == "log_zscore" ? NormalizationChoice::Method::log_zscore
                                                          : NormalizationChoice::Method::zscore;
  o.sequence_ordered_classes = prep.sequence_ordered_classes;
  return o;
}

}  // namespace mvgpt
