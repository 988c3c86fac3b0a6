#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvgpt/checkpoint.hpp"
#include "mvgpt/config.hpp"
#include "mvgpt/error.hpp"
#include "mvgpt/eval.hpp"
#include "mvgpt/experiments.hpp"
#include "mvgpt/sampler.hpp"
#include "mvgpt/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace mvgpt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "error: " << kind << ": " << one_line(msg) << '\n';
  return code;
}

// Flags shared by every subcommand; empty or unset means "not given".
struct Flags {
  std::string config, preset, data, out, checkpoint, vocab, mode, val;
  std::optional<std::size_t> bins, seed_points, max_new_tokens;
  std::optional<std::uint64_t> seed;
  std::optional<double> time_budget;
  std::vector<std::string> mask_classes;
};

RunConfig resolve(const Flags& f) {
  const char* env = std::getenv("MVGPT_OUT_DIR");
  RunConfig cfg = resolve_config(f.config, f.preset, env ? env : "");
  if (!f.data.empty()) cfg.paths.data = f.data;
  if (!f.out.empty()) cfg.paths.out_dir = f.out;
  if (!f.checkpoint.empty()) cfg.paths.checkpoint = f.checkpoint;
  if (!f.vocab.empty()) cfg.paths.vocab = f.vocab;
  if (f.bins) {
    if (*f.bins == 0) throw ValidationError("--bins must be positive");
    cfg.bins = *f.bins;
    cfg.oscillator.discrete_bins = {*f.bins};
    cfg.calibration.discrete_bins = {*f.bins};
  }
  if (f.seed_points) {
    if (*f.seed_points == 0) throw ValidationError("--seed-points must be positive");
    cfg.oscillator.seed_points = *f.seed_points;
  }
  if (!f.mode.empty()) cfg.sample.mode = parse_sample_mode(f.mode);
  if (f.seed) {
    cfg.sample.rng_seed = *f.seed;
    cfg.train.seed = *f.seed;
    cfg.model.seed = *f.seed;
  }
  if (f.max_new_tokens) cfg.sample.max_new_tokens = *f.max_new_tokens;
  if (f.time_budget) {
    cfg.sample.stop = StopCondition::elapsed_time_budget;
    cfg.sample.time_budget = *f.time_budget;
  }
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) {
    throw ValidationError(std::string(what) + " '" + path + "' does not exist");
  }
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.paths.out_dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  return out;
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vocabulary '" + path + "'");
  try {
    return Vocabulary::from_json(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("vocabulary '" + path + "' is not valid JSON: " + e.what());
  }
}

Vocabulary vocab_for(const RunConfig& cfg, const std::vector<EventRecord>& records) {
  if (!cfg.paths.vocab.empty()) {
    require_file(cfg.paths.vocab, "vocabulary");
    return load_vocab(cfg.paths.vocab);
  }
  return build_vocabulary(records, vocabulary_options(cfg.prep));
}

void write_vocab(const std::string& path, const Vocabulary& vocab) {
  auto out = open_out(path);
  out << vocab.to_json().dump(2) << '\n';
}

int cmd_prep(const Flags& f) {
  const auto cfg = resolve(f);
  require(cfg.paths.data, "--data");
  require_file(cfg.paths.data, "data file");
  write_resolved_config(cfg, cfg.paths.out_dir);
  const auto records = read_records_file(cfg.paths.data);
  const auto vocab = build_vocabulary(records, vocabulary_options(cfg.prep));
  const auto seqs = encode_records(records, vocab);
  write_vocab(out_path(cfg, "vocab.json"), vocab);
  auto out = open_out(out_path(cfg, "tokens.csv"));
  write_token_dump(out, seqs, vocab);
  std::cout << "classes " << vocab.size() << ", sequences " << seqs.size() << '\n';
  return 0;
}

int cmd_train(const Flags& f, bool discrete) {
  const auto cfg = resolve(f);
  require(cfg.paths.data, "--data");
  require_file(cfg.paths.data, "data file");
  if (!f.val.empty()) require_file(f.val, "validation file");
  write_resolved_config(cfg, cfg.paths.out_dir);
  const auto records = read_records_file(cfg.paths.data);
  const std::vector<EventRecord> val = f.val.empty() ? std::vector<EventRecord>{}
                                                     : read_records_file(f.val);
  const auto vocab = vocab_for(cfg, records);
  write_vocab(out_path(cfg, "vocab.json"), vocab);
  const std::string stem = discrete ? "discrete_n" + std::to_string(cfg.bins) : "multivariate";
  const auto trained = discrete
                           ? train_discrete_model(vocab, records, val, cfg.bins, cfg.model, cfg.train)
                           : train_continuous_model(vocab, records, val, cfg.model, cfg.train);
  write_trained_model(cfg.paths.out_dir, stem, trained);
  std::cout << stem << ": steps " << trained.result.steps_run << ", best step "
            << trained.result.best_step << ", best val loss "
            << format_double(trained.result.best_val_loss) << '\n';
  return 0;
}

// Seed prefix ending at the k-th non-time token (or the whole sequence).
TokenSequence seed_prefix(const TokenSequence& seq, ClassId time_id, std::size_t k) {
  TokenSequence out;
  out.seq_id = seq.seq_id;
  out.base_time = seq.base_time;
  std::size_t seen = 0;
  for (const auto& tok : seq.tokens) {
    out.tokens.push_back(tok);
    if (tok.class_id != time_id && ++seen == k) break;
  }
  return out;
}

int cmd_generate(const Flags& f) {
  const auto cfg = resolve(f);
  require(cfg.paths.checkpoint, "--checkpoint");
  require(cfg.paths.data, "--data");
  require_file(cfg.paths.checkpoint, "checkpoint");
  require_file(cfg.paths.data, "data file");
  write_resolved_config(cfg, cfg.paths.out_dir);
  const auto ckpt = load_checkpoint(cfg.paths.checkpoint);
  const auto model = ckpt.make_model();
  const auto seqs = encode_records(read_records_file(cfg.paths.data), ckpt.vocab);
  std::optional<DiscreteCodec> codec;
  if (ckpt.bins) codec.emplace(ckpt.vocab, *ckpt.bins);
  const auto& model_vocab = codec ? codec->discrete() : ckpt.vocab;

  std::vector<TokenSequence> outputs;
  std::vector<std::vector<std::optional<TokenStats>>> stats;
  std::vector<EventRecord> records;
  std::size_t violations = 0;
  for (const auto& seq : seqs) {
    auto seed = seed_prefix(seq, ckpt.vocab.time_class_id(), cfg.oscillator.seed_points);
    if (seed.size() > ckpt.config.context) seed.tokens.resize(ckpt.config.context);
    if (codec) seed = codec->to_discrete(seed);
    auto gen = generate(seed, model, model_vocab, cfg.sample, codec ? &*codec : nullptr);
    violations += gen.consecutive_time_tokens;
    auto cont = codec ? codec->to_continuous(gen.seq) : gen.seq;
    for (auto& r : decode_sequence(cont, ckpt.vocab)) records.push_back(std::move(r));
    outputs.push_back(std::move(cont));
    stats.push_back(std::move(gen.stats));
  }
  {
    auto out = open_out(out_path(cfg, "generated_tokens.csv"));
    write_token_dump(out, outputs, ckpt.vocab, stats);
  }
  {
    auto out = open_out(out_path(cfg, "generated.csv"));
    write_records_csv(out, records);
  }
  std::cout << "generated " << outputs.size() << " sequences, consecutive time tokens "
            << violations << '\n';
  return 0;
}

int cmd_infill(const Flags& f) {
  const auto cfg = resolve(f);
  require(cfg.paths.checkpoint, "--checkpoint");
  require(cfg.paths.data, "--data");
  require_file(cfg.paths.checkpoint, "checkpoint");
  require_file(cfg.paths.data, "data file");
  write_resolved_config(cfg, cfg.paths.out_dir);
  const auto ckpt = load_checkpoint(cfg.paths.checkpoint);
  if (ckpt.is_discrete()) throw ValidationError("infilling needs a multivariate checkpoint");
  const auto model = ckpt.make_model();
  const auto& vocab = ckpt.vocab;
  std::set<ClassId> targets;
  for (const auto& name : f.mask_classes) {
    const auto id = vocab.find(name);
    if (!id || !vocab.at(*id).is_numeric() || *id == vocab.time_class_id()) {
      throw ValidationError("'" + name + "' is not a numeric value class");
    }
    targets.insert(*id);
  }
  if (targets.empty()) {
    for (ClassId c = 0; c < vocab.size(); ++c) {
      if (vocab.at(c).is_numeric() && c != vocab.time_class_id()) targets.insert(c);
    }
  }
  const auto seqs = encode_records(read_records_file(cfg.paths.data), vocab);
  auto out = open_out(out_path(cfg, "infill.csv"));
  out << "seq_id,position,class,truth,prediction,mu,sigma\n";
  std::vector<ClassId> classes;
  std::vector<double> preds, truths;
  for (const auto& seq : seqs) {
    std::set<std::size_t> masked;
    for (std::size_t k = 1; k < seq.size(); ++k) {
      if (targets.count(seq.tokens[k].class_id)) masked.insert(k);
    }
    if (masked.empty()) continue;
    if (seq.size() > ckpt.config.context) {
      throw ValidationError("sequence '" + seq.seq_id + "' is longer than the model context");
    }
    const auto gen = infill_values(seq, masked, model, vocab, cfg.sample);
    for (auto k : masked) {
      const auto& spec = vocab.at(seq.tokens[k].class_id);
      const double truth = normalize_value(*seq.tokens[k].value, spec, Direction::inverse);
      const double pred = normalize_value(*gen.seq.tokens[k].value, spec, Direction::inverse);
      out << seq.seq_id << ',' << k << ',' << spec.name << ',' << format_double(truth) << ','
          << format_double(pred) << ',' << format_double(gen.stats[k]->mu) << ','
          << format_double(gen.stats[k]->sigma) << '\n';
      classes.push_back(seq.tokens[k].class_id);
      preds.push_back(pred);
      truths.push_back(truth);
    }
  }
  if (classes.empty()) throw ValidationError("no maskable values in the data");
  const double mse = mse_scaled(classes, preds, truths);
  std::cout << "infilled " << classes.size() << " values, scaled MSE " << format_double(mse) << '\n';
  return 0;
}

int cmd_eval(const Flags& f) {
  const auto cfg = resolve(f);
  require(cfg.paths.checkpoint, "--checkpoint");
  require(cfg.paths.data, "--data");
  require_file(cfg.paths.checkpoint, "checkpoint");
  require_file(cfg.paths.data, "data file");
  write_resolved_config(cfg, cfg.paths.out_dir);
  const auto ckpt = load_checkpoint(cfg.paths.checkpoint);
  const auto model = ckpt.make_model();
  const auto seqs = encode_records(read_records_file(cfg.paths.data), ckpt.vocab);
  const auto preds = ckpt.bins
                         ? teacher_forced_predictions(model, DiscreteCodec(ckpt.vocab, *ckpt.bins), seqs)
                         : teacher_forced_predictions(model, ckpt.vocab, seqs);
  const auto report = summarize(ckpt.vocab, preds);
  {
    auto out = open_out(out_path(cfg, "report.csv"));
    write_report_csv(out, report);
  }
  if (!report.qq_points.empty()) {
    auto out = open_out(out_path(cfg, "qq.csv"));
    write_qq_csv(out, report.qq_points);
  }
  write_report_csv(std::cout, report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << one_line(w) << '\n';
  return 0;
}

int cmd_oscillator(const Flags& f) {
  const auto cfg = resolve(f);
  const auto summary = run_oscillator_experiment(cfg, cfg.paths.out_dir);
  for (const auto& m : summary.models) {
    std::cout << m.name << ": train mse mean " << format_double(m.train_mse_mean) << ", max "
              << format_double(m.train_mse_max) << ", holdout mse " << format_double(m.holdout_mse)
              << '\n';
  }
  return 0;
}

int cmd_calibration(const Flags& f) {
  const auto cfg = resolve(f);
  const auto summary = run_calibration_experiment(cfg, cfg.paths.out_dir);
  for (const auto& m : summary.models) {
    std::cout << m.name << ": coverage " << format_double(m.coverage);
    if (m.qq_max_deviation) std::cout << ", qq max deviation " << format_double(*m.qq_max_deviation);
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint class/value transformer for mixed categorical and numeric event streams"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file layered over the preset");
    sub->add_option("--preset", f.preset, "default, quick or large");
    sub->add_option("--out", f.out, "Output directory (default $MVGPT_OUT_DIR or ./out)");
    sub->add_option("--seed", f.seed, "Seed for training, initialization and sampling");
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "Long-format CSV or JSONL records");
  };
  auto add_sampling = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", f.checkpoint, "Checkpoint file");
    sub->add_option("--mode", f.mode, "sample or max_likelihood");
  };

  auto* prep = app.add_subcommand("prep", "Build the vocabulary and dump tokens");
  add_common(prep);
  add_data(prep);

  auto* train_cmd = app.add_subcommand("train", "Train the multivariate model");
  auto* train_disc = app.add_subcommand("train-discrete", "Train the quantile-bin baseline");
  for (auto* sub : {train_cmd, train_disc}) {
    add_common(sub);
    add_data(sub);
    sub->add_option("--val", f.val, "Validation records (default: the training data)");
    sub->add_option("--vocab", f.vocab, "Vocabulary JSON from prep (default: fit on --data)");
  }
  train_disc->add_option("--bins", f.bins, "Quantile bins per numeric class");

  auto* gen = app.add_subcommand("generate", "Continue sequences from their first points");
  add_common(gen);
  add_data(gen);
  add_sampling(gen);
  gen->add_option("--seed-points", f.seed_points, "Observations kept as the seed");
  gen->add_option("--max-new-tokens", f.max_new_tokens, "Token budget per sequence");
  gen->add_option("--time-budget", f.time_budget, "Stop once this much time has elapsed");

  auto* infill = app.add_subcommand("infill", "Predict hidden values at known positions");
  add_common(infill);
  add_data(infill);
  add_sampling(infill);
  infill->add_option("--mask-class", f.mask_classes, "Numeric classes to hide (default: all)");

  auto* eval = app.add_subcommand("eval", "Teacher-forced metrics on held-out data");
  add_common(eval);
  add_data(eval);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file");

  auto* osc = app.add_subcommand("oscillator-experiment", "Damped oscillator reconstruction");
  add_common(osc);
  osc->add_option("--seed-points", f.seed_points, "Observations kept as the rollout seed");
  osc->add_option("--bins", f.bins, "Run a single binned baseline with this many bins");
  osc->add_option("--mode", f.mode, "sample or max_likelihood");

  auto* cal = app.add_subcommand("calibration-experiment", "Interval coverage on known noise");
  add_common(cal);
  cal->add_option("--bins", f.bins, "Run a single binned baseline with this many bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }

  try {
    if (*prep) return cmd_prep(f);
    if (*train_cmd) return cmd_train(f, false);
    if (*train_disc) return cmd_train(f, true);
    if (*gen) return cmd_generate(f);
    if (*infill) return cmd_infill(f);
    if (*eval) return cmd_eval(f);
    if (*osc) return cmd_oscillator(f);
    if (*cal) return cmd_calibration(f);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), kExitUsage);
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kExitNumeric);
  } catch (const std::exception& e) {
    return fail("validation", e.what(), kExitValidation);
  }
  return fail("usage", "no command", kExitUsage);
}
