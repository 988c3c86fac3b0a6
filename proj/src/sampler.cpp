#include "mvgpt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mvgpt/error.hpp"

namespace mvgpt {

void SampleOptions::validate() const {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (max_new_tokens == 0) throw ValidationError("max_new_tokens must be positive");
  if (stop == StopCondition::elapsed_time_budget && !(time_budget > 0.0)) {
    throw ValidationError("time budget must be positive");
  }
  if (fixed_sigma && !(*fixed_sigma > 0.0)) throw ValidationError("fixed_sigma must be positive");
}

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "sample") return SampleMode::sample;
  if (s == "max_likelihood") return SampleMode::max_likelihood;
  throw ValidationError("unknown sampling mode '" + s + "' (expected sample or max_likelihood)");
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& seq_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : seq_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h ^ (base + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
}

namespace {

// Eval-mode forward over the tail of a token list.
class Predictor {
 public:
  explicit Predictor(const Transformer<float>& model) : model_(model) {}

  /// Head outputs for the token following tokens[0, end).
  PredictionHeadOutput next(std::span<const Token> tokens, std::size_t end,
                            std::optional<double> fixed_sigma, std::vector<double>* logits) {
    const std::size_t context = model_.config().context;
    // Window starts stay on the training chunk grid so positions keep the phase seen in training.
    const std::size_t stride = std::max<std::size_t>(1, (context + 1) / 2);
    const std::size_t begin = end <= context ? 0 : (end - context + stride - 1) / stride * stride;
    classes_.clear();
    values_.clear();
    for (std::size_t i = begin; i < end; ++i) {
      classes_.push_back(tokens[i].class_id);
      values_.push_back(tokens[i].value.value_or(0.0));
    }
    model_.forward({1, classes_.size(), classes_, values_}, ws_);
    const std::size_t row = classes_.size() - 1;
    const std::size_t dc = model_.config().d_c;
    if (logits) {
      logits->assign(ws_.logits.begin() + static_cast<std::ptrdiff_t>(row * dc),
                     ws_.logits.begin() + static_cast<std::ptrdiff_t>((row + 1) * dc));
    }
    return head_output(ws_, row, dc, fixed_sigma);
  }

 private:
  const Transformer<float>& model_;
  Workspace<float> ws_;
  std::vector<ClassId> classes_;
  std::vector<double> values_;
};

double draw_value(const ClassSpec& spec, bool is_time, double mu, double sigma, SampleMode mode,
                  std::mt19937_64& rng) {
  if (mode == SampleMode::max_likelihood) {
    if (is_time && !(normalize_value(mu, spec, Direction::inverse) > 0.0)) {
      throw NumericError("most likely time delta is not positive");
    }
    return mu;
  }
  std::normal_distribution<double> normal(mu, sigma);
  for (int attempt = 0; attempt <= kMaxTimeResamples; ++attempt) {
    const double v = normal(rng);
    if (!is_time) return v;
    if (normalize_value(v, spec, Direction::inverse) > 0.0) return v;
  }
  throw NumericError("no positive time delta after " + std::to_string(kMaxTimeResamples) +
                     " resamples (mu=" + std::to_string(mu) + ", sigma=" + std::to_string(sigma) +
                     ")");
}

double raw_delta(const Token& tok, const Vocabulary& vocab, const DiscreteCodec* codec) {
  if (tok.class_id == vocab.time_class_id()) {
    return normalize_value(*tok.value, vocab.at(tok.class_id), Direction::inverse);
  }
  if (codec) {
    const auto [cid, bin] = codec->origin(tok.class_id);
    if (bin && cid == codec->continuous().time_class_id()) {
      return bin_decode(*bin, *codec->bins_of(cid));
    }
  }
  return 0.0;
}

bool is_time_token(ClassId id, const Vocabulary& vocab, const DiscreteCodec* codec) {
  if (id == vocab.time_class_id()) return true;
  if (!codec) return false;
  const auto [cid, bin] = codec->origin(id);
  return bin.has_value() && cid == codec->continuous().time_class_id();
}

}  // namespace

Generation generate(const TokenSequence& seed, const Transformer<float>& model,
                    const Vocabulary& vocab, const SampleOptions& opts,
                    const DiscreteCodec* codec, const StopPredicate& done) {
  opts.validate();
  if (seed.size() == 0) throw ValidationError("generation needs at least one seed token");
  if (seed.size() > model.config().context) {
    throw ValidationError("seed longer than the model context");
  }
  if (vocab.size() != model.config().d_c) {
    throw ValidationError("vocabulary size does not match the model");
  }
  std::mt19937_64 rng(derive_seed(opts.rng_seed, seed.seq_id));
  Predictor predictor(model);
  Generation out;
  out.seq = seed;
  out.stats.assign(seed.size(), std::nullopt);
  std::vector<double> logits, weights(vocab.size());

  while (out.new_tokens < opts.max_new_tokens) {
    auto& toks = out.seq.tokens;
    const auto pred = predictor.next(toks, toks.size(), opts.fixed_sigma, &logits);
    const bool after_time = is_time_token(toks.back().class_id, vocab, codec);

    ClassId c = 0;
    double best = -INFINITY;
    const double maxl = *std::max_element(logits.begin(), logits.end());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      // A binned vocabulary keeps the numeric time class only as a placeholder.
      const bool reserved = codec && k == vocab.time_class_id();
      const bool banned = reserved || (opts.forbid_consecutive_time && after_time &&
                                       is_time_token(k, vocab, codec));
      weights[k] = banned ? 0.0 : std::exp((logits[k] - maxl) / opts.temperature);
      if (!banned && logits[k] > best) {
        best = logits[k];
        c = k;
      }
    }
    if (opts.mode == SampleMode::sample) {
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      c = pick(rng);
    }

    const auto& spec = vocab.at(c);
    Token tok{c, std::nullopt};
    std::optional<TokenStats> stat;
    if (spec.is_numeric()) {
      const bool is_time = c == vocab.time_class_id();
      tok.value = draw_value(spec, is_time, pred.mu[c], pred.sigma[c], opts.mode, rng);
      stat = TokenStats{pred.mu[c], pred.sigma[c]};
    }
    const bool time_tok = is_time_token(c, vocab, codec);
    if (time_tok) {
      const double delta = raw_delta(tok, vocab, codec);
      if (opts.stop == StopCondition::elapsed_time_budget &&
          out.elapsed_time + delta > opts.time_budget) {
        break;
      }
      out.elapsed_time += delta;
      if (after_time) ++out.consecutive_time_tokens;
    }
    toks.push_back(tok);
    out.stats.push_back(stat);
    ++out.new_tokens;
    if (done && done(out)) break;
  }
  return out;
}

Generation infill_values(const TokenSequence& full, const std::set<std::size_t>& masked,
                         const Transformer<float>& model, const Vocabulary& vocab,
                         const SampleOptions& opts) {
  opts.validate();
  if (vocab.size() != model.config().d_c) {
    throw ValidationError("vocabulary size does not match the model");
  }
  for (auto k : masked) {
    if (k >= full.size()) throw ValidationError("masked position beyond the sequence");
    if (k == 0) throw ValidationError("position 0 has no context to infill from");
    if (!vocab.at(full.tokens[k].class_id).is_numeric()) {
      throw ValidationError("masked position " + std::to_string(k) + " is categorical");
    }
  }
  std::mt19937_64 rng(derive_seed(opts.rng_seed, full.seq_id));
  Predictor predictor(model);
  Generation out;
  out.seq = full;
  out.stats.assign(full.size(), std::nullopt);
  for (auto k : masked) {
    auto& toks = out.seq.tokens;
    const ClassId c = toks[k].class_id;
    const auto pred = predictor.next(toks, k, opts.fixed_sigma, nullptr);
    toks[k].value = draw_value(vocab.at(c), c == vocab.time_class_id(), pred.mu[c],
                               pred.sigma[c], opts.mode, rng);
    out.stats[k] = TokenStats{pred.mu[c], pred.sigma[c]};
  }
  return out;
}

}  // namespace mvgpt
