#include "mvgpt/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mvgpt/datagen.hpp"
#include "mvgpt/error.hpp"

namespace mvgpt {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  return out;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<TokenSequence> encode_or_empty(std::span<const EventRecord> records,
                                           const Vocabulary& vocab) {
  if (records.empty()) return {};
  return encode_records(records, vocab);
}

nlohmann::ordered_json train_meta(const std::string& kind, const TrainConfig& cfg,
                                  const TrainResult& r) {
  nlohmann::ordered_json m;
  m["model_kind"] = kind;
  m["train"] = cfg.to_json();
  m["best_step"] = r.best_step;
  m["best_val_loss"] = r.best_val_loss;
  m["steps_run"] = r.steps_run;
  m["early_stopped"] = r.early_stopped;
  return m;
}

void write_records(const std::string& path, std::span<const EventRecord> records) {
  auto out = open_out(path);
  write_records_csv(out, records);
}

void write_vocab(const std::string& path, const Vocabulary& vocab) {
  auto out = open_out(path);
  out << vocab.to_json().dump(2) << '\n';
}

void write_report(const std::string& path, const EvalReport& report) {
  auto out = open_out(path);
  write_report_csv(out, report);
}

}  // namespace

TrainedModel train_continuous_model(const Vocabulary& vocab, std::span<const EventRecord> train_records,
                                    std::span<const EventRecord> val_records, ModelConfig model,
                                    const TrainConfig& cfg) {
  model.d_c = vocab.size();
  const auto train_seqs = encode_records(train_records, vocab);
  const auto val_seqs = encode_or_empty(val_records, vocab);
  Transformer<float> m(model, vocab.numeric_mask());
  m.init_params();
  TrainedModel out;
  out.result = train(m, train_seqs, val_seqs, cfg);
  out.checkpoint.config = model;
  out.checkpoint.vocab = vocab;
  out.checkpoint.params.assign(m.params().begin(), m.params().end());
  out.checkpoint.meta = train_meta(cfg.fixed_sigma ? "fixed_sigma" : "multivariate", cfg, out.result);
  return out;
}

TrainedModel train_discrete_model(const Vocabulary& vocab, std::span<const EventRecord> train_records,
                                  std::span<const EventRecord> val_records, std::size_t n_bins,
                                  ModelConfig model, TrainConfig cfg) {
  const DiscreteCodec codec(vocab, fit_bin_table(train_records, vocab, n_bins));
  const auto& dvocab = codec.discrete();
  model.d_c = dvocab.size();
  std::vector<TokenSequence> train_seqs, val_seqs;
  for (const auto& s : encode_records(train_records, vocab)) train_seqs.push_back(codec.to_discrete(s));
  for (const auto& s : encode_or_empty(val_records, vocab)) val_seqs.push_back(codec.to_discrete(s));
  cfg.value_weight = 0.0;
  cfg.fixed_sigma.reset();
  Transformer<float> m(model, dvocab.numeric_mask());
  m.init_params();
  TrainedModel out;
  out.result = train(m, train_seqs, val_seqs, cfg);
  out.checkpoint.config = model;
  out.checkpoint.vocab = vocab;
  out.checkpoint.bins = codec.bins();
  out.checkpoint.params.assign(m.params().begin(), m.params().end());
  out.checkpoint.meta = train_meta("discrete", cfg, out.result);
  out.checkpoint.meta["n_bins"] = n_bins;
  return out;
}

void write_trained_model(const std::string& out_dir, const std::string& stem,
                         const TrainedModel& trained) {
  save_checkpoint(join(out_dir, stem + ".ckpt"), trained.checkpoint);
  {
    auto out = open_out(join(out_dir, stem + "_loss.csv"));
    write_loss_csv(out, trained.result.history);
  }
  if (trained.checkpoint.bins) {
    auto out = open_out(join(out_dir, stem + "_bins.csv"));
    trained.checkpoint.bins->write_csv(out);
  }
}

Rollout rollout_trajectory(const TokenSequence& truth, const Checkpoint& ckpt,
                           const Transformer<float>& model, std::size_t seed_points,
                           const SampleOptions& opts) {
  const Vocabulary& vocab = ckpt.vocab;
  const ClassId time_id = vocab.time_class_id();
  std::vector<std::size_t> obs;
  std::vector<double> obs_time;
  double t = truth.base_time;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& tok = truth.tokens[i];
    if (tok.class_id == time_id) {
      t += normalize_value(*tok.value, vocab.at(time_id), Direction::inverse);
    } else {
      if (!vocab.at(tok.class_id).is_numeric()) {
        throw ValidationError("rollouts need a purely numeric trajectory");
      }
      obs.push_back(i);
      obs_time.push_back(t);
    }
  }
  if (seed_points == 0 || seed_points >= obs.size()) {
    throw ValidationError("seed_points must be between 1 and the trajectory length - 1");
  }
  const std::size_t wanted = obs.size() - seed_points;

  TokenSequence prefix;
  prefix.seq_id = truth.seq_id;
  prefix.base_time = truth.base_time;
  prefix.tokens.assign(truth.tokens.begin(),
                       truth.tokens.begin() + static_cast<std::ptrdiff_t>(obs[seed_points - 1] + 1));

  std::optional<DiscreteCodec> codec;
  if (ckpt.bins) codec.emplace(vocab, *ckpt.bins);
  const Vocabulary& model_vocab = codec ? codec->discrete() : vocab;
  auto is_observation = [&](ClassId id) {
    return codec ? codec->origin(id).first != time_id : id != time_id;
  };

  SampleOptions o = opts;
  o.max_new_tokens = 4 * wanted + 16;
  const auto seed = codec ? codec->to_discrete(prefix) : prefix;
  const std::size_t seed_len = seed.size();
  std::size_t produced = 0;
  const auto gen = generate(seed, model, model_vocab, o, codec ? &*codec : nullptr,
                            [&](const Generation& g) {
                              if (is_observation(g.seq.tokens.back().class_id)) ++produced;
                              return produced >= wanted;
                            });
  const auto cont = codec ? codec->to_continuous(gen.seq) : gen.seq;

  Rollout r;
  r.seq_id = truth.seq_id;
  for (std::size_t i = seed_len; i < cont.size() && r.prediction.size() < wanted; ++i) {
    const auto& tok = cont.tokens[i];
    if (tok.class_id == time_id || !tok.value) continue;
    r.prediction.push_back(normalize_value(*tok.value, vocab.at(tok.class_id), Direction::inverse));
  }
  r.missing = wanted - r.prediction.size();
  const double fill = r.prediction.empty() ? 0.0 : r.prediction.back();
  r.prediction.resize(wanted, fill);
  std::vector<ClassId> classes;
  for (std::size_t k = seed_points; k < obs.size(); ++k) {
    const auto& tok = truth.tokens[obs[k]];
    classes.push_back(tok.class_id);
    r.truth.push_back(normalize_value(*tok.value, vocab.at(tok.class_id), Direction::inverse));
    r.times.push_back(obs_time[k]);
  }
  r.mse = mse_scaled(classes, r.prediction, r.truth);
  return r;
}

const ModelSummary* OscillatorSummary::find(const std::string& name) const {
  for (const auto& m : models) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

const CalibrationModelSummary* CalibrationSummary::find(const std::string& name) const {
  for (const auto& m : models) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto out = open_out(join(out_dir, "config.json"));
  out << cfg.to_json().dump(2) << '\n';
}

OscillatorSummary run_oscillator_experiment(const RunConfig& cfg, const std::string& out_dir) {
  write_resolved_config(cfg, out_dir);
  const auto& oc = cfg.oscillator;
  const auto data =
      gen_oscillator_dataset(default_oscillator_family(), default_oscillator_holdout(), oc.data_seed);
  write_records(join(out_dir, "train.csv"), data.train);
  write_records(join(out_dir, "holdout.csv"), data.holdout);
  const auto vocab = build_vocabulary(data.train, vocabulary_options(cfg.prep));
  write_vocab(join(out_dir, "vocab.json"), vocab);
  const auto train_seqs = encode_records(data.train, vocab);
  const auto hold_seqs = encode_records(data.holdout, vocab);

  std::vector<std::pair<std::string, TrainedModel>> runs;
  runs.emplace_back("multivariate",
                    train_continuous_model(vocab, data.train, {}, cfg.model, cfg.train));
  for (auto n : oc.discrete_bins) {
    runs.emplace_back("discrete_n" + std::to_string(n),
                      train_discrete_model(vocab, data.train, {}, n, cfg.model, cfg.train));
  }
  if (oc.fixed_sigma_ablation) {
    TrainConfig tc = cfg.train;
    tc.fixed_sigma = oc.ablation_sigma;
    runs.emplace_back("fixed_sigma", train_continuous_model(vocab, data.train, {}, cfg.model, tc));
  }

  OscillatorSummary summary;
  auto rollouts_csv = open_out(join(out_dir, "rollouts.csv"));
  rollouts_csv << "model,split,seq_id,index,time,truth,prediction\n";
  auto mse_csv = open_out(join(out_dir, "rollout_mse.csv"));
  mse_csv << "model,split,seq_id,mse,missing\n";
  for (const auto& [name, trained] : runs) {
    write_trained_model(out_dir, name, trained);
    const auto& ckpt = trained.checkpoint;
    const auto model = ckpt.make_model();
    SampleOptions opts = cfg.sample;
    if (ckpt.meta.value("model_kind", "") == "fixed_sigma") opts.fixed_sigma = oc.ablation_sigma;

    ModelSummary ms;
    ms.name = name;
    ms.best_step = trained.result.best_step;
    ms.steps_run = trained.result.steps_run;
    auto record = [&](const std::string& split, const TokenSequence& seq) {
      auto r = rollout_trajectory(seq, ckpt, model, oc.seed_points, opts);
      for (std::size_t k = 0; k < r.truth.size(); ++k) {
        rollouts_csv << name << ',' << split << ',' << r.seq_id << ',' << k + oc.seed_points << ','
                     << format_double(r.times[k]) << ',' << format_double(r.truth[k]) << ','
                     << format_double(r.prediction[k]) << '\n';
      }
      mse_csv << name << ',' << split << ',' << r.seq_id << ',' << format_double(r.mse) << ','
              << r.missing << '\n';
      return r.mse;
    };
    double sum = 0.0;
    for (const auto& seq : train_seqs) {
      const double m = record("train", seq);
      sum += m;
      ms.train_mse_max = std::max(ms.train_mse_max, m);
    }
    ms.train_mse_mean = sum / static_cast<double>(train_seqs.size());
    ms.holdout_mse = record("holdout", hold_seqs.front());

    const auto preds = ckpt.bins ? teacher_forced_predictions(model, DiscreteCodec(vocab, *ckpt.bins),
                                                              hold_seqs)
                                 : teacher_forced_predictions(model, vocab, hold_seqs);
    write_report(join(out_dir, "report_" + name + ".csv"), summarize(vocab, preds));
    summary.models.push_back(ms);
  }

  auto out = open_out(join(out_dir, "summary.csv"));
  out << "model,train_mse_mean,train_mse_max,holdout_mse,best_step,steps_run\n";
  for (const auto& m : summary.models) {
    out << m.name << ',' << format_double(m.train_mse_mean) << ',' << format_double(m.train_mse_max)
        << ',' << format_double(m.holdout_mse) << ',' << m.best_step << ',' << m.steps_run << '\n';
  }
  return summary;
}

double qq_central_deviation(std::span<const QQPoint> points) {
  double worst = 0.0;
  for (const auto& p : points) {
    if (std::abs(p.theoretical) <= kZ95) worst = std::max(worst, std::abs(p.sample - p.theoretical));
  }
  return worst;
}

CalibrationSummary run_calibration_experiment(const RunConfig& cfg, const std::string& out_dir) {
  write_resolved_config(cfg, out_dir);
  const auto& cc = cfg.calibration;
  CalibrationSpec val_spec = cc.data, test_spec = cc.data;
  val_spec.n_sequences = std::max<std::size_t>(4, cc.data.n_sequences / 4);
  test_spec.n_sequences = cc.test_sequences;
  const auto train_records = gen_calibration_dataset(cc.data, cc.data_seed);
  const auto val_records = gen_calibration_dataset(val_spec, cc.data_seed + 1);
  const auto test_records = gen_calibration_dataset(test_spec, cc.data_seed + 2);
  write_records(join(out_dir, "train.csv"), train_records);
  write_records(join(out_dir, "val.csv"), val_records);
  write_records(join(out_dir, "test.csv"), test_records);
  const auto vocab = build_vocabulary(train_records, vocabulary_options(cfg.prep));
  write_vocab(join(out_dir, "vocab.json"), vocab);
  const auto test_seqs = encode_records(test_records, vocab);
  const auto target = vocab.find("y");
  if (!target) throw ValidationError("calibration data lacks class 'y'");

  std::vector<std::pair<std::string, TrainedModel>> runs;
  runs.emplace_back("multivariate",
                    train_continuous_model(vocab, train_records, val_records, cfg.model, cfg.train));
  for (auto n : cc.discrete_bins) {
    runs.emplace_back("discrete_n" + std::to_string(n),
                      train_discrete_model(vocab, train_records, val_records, n, cfg.model, cfg.train));
  }

  CalibrationSummary summary;
  auto cov_csv = open_out(join(out_dir, "coverage.csv"));
  cov_csv << "model,class,coverage,n\n";
  for (const auto& [name, trained] : runs) {
    write_trained_model(out_dir, name, trained);
    const auto& ckpt = trained.checkpoint;
    const auto model = ckpt.make_model();
    const auto all = ckpt.bins ? teacher_forced_predictions(model, DiscreteCodec(vocab, *ckpt.bins),
                                                            test_seqs)
                               : teacher_forced_predictions(model, vocab, test_seqs);
    const auto report = summarize(vocab, all);
    write_report(join(out_dir, "report_" + name + ".csv"), report);

    CalibrationModelSummary ms;
    ms.name = name;
    std::size_t hits = 0, n = 0;
    for (const auto& p : all) {
      if (p.target_class != *target || !p.numeric) continue;
      hits += p.covered;
      ++n;
    }
    ms.coverage = static_cast<double>(hits) / static_cast<double>(n);
    cov_csv << name << ",y," << format_double(ms.coverage) << ',' << n << '\n';
    if (!ckpt.bins) {
      auto out = open_out(join(out_dir, "qq_" + name + ".csv"));
      write_qq_csv(out, report.qq_points);
      ms.qq_max_deviation = qq_central_deviation(report.qq_points);
    }
    summary.models.push_back(ms);
  }
  return summary;
}

}  // namespace mvgpt
