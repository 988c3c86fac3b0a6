#include "mvgpt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "mvgpt/error.hpp"

namespace mvgpt {

void TrainConfig::validate(std::size_t context) const {
  if (max_steps == 0) throw ValidationError("max_steps must be positive");
  if (warmup_steps >= max_steps) throw ValidationError("warmup_steps must be below max_steps");
  if (batch_tokens < context) throw ValidationError("batch_tokens must be at least the context");
  if (!(lr_max >= 0 && min_lr >= 0 && weight_decay >= 0 && grad_clip >= 0 && value_weight >= 0)) {
    throw ValidationError("rates must be non-negative");
  }
  if (min_lr > lr_max) throw ValidationError("min_lr must not exceed lr_max");
  if (eval_interval == 0) throw ValidationError("eval_interval must be positive");
  if (fixed_sigma && !(*fixed_sigma > 0)) throw ValidationError("fixed_sigma must be positive");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j{{"max_steps", max_steps},     {"batch_tokens", batch_tokens},
                           {"lr_max", lr_max},           {"warmup_steps", warmup_steps},
                           {"min_lr", min_lr},           {"weight_decay", weight_decay},
                           {"grad_clip", grad_clip},     {"eval_interval", eval_interval},
                           {"patience", patience},       {"seed", seed},
                           {"value_weight", value_weight}};
  j["fixed_sigma"] = fixed_sigma ? nlohmann::ordered_json(*fixed_sigma) : nullptr;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  try {
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.batch_tokens = j.at("batch_tokens").get<std::size_t>();
    c.lr_max = j.at("lr_max").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    c.min_lr = j.at("min_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.eval_interval = j.at("eval_interval").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.value_weight = j.at("value_weight").get<double>();
    if (j.contains("fixed_sigma") && !j.at("fixed_sigma").is_null()) {
      c.fixed_sigma = j.at("fixed_sigma").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.max_steps) return cfg.min_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  return cfg.min_lr +
         0.5 * (cfg.lr_max - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Window> make_windows(std::span<const TokenSequence> seqs, std::size_t context) {
  const std::size_t span = context + 1;
  const std::size_t stride = std::max<std::size_t>(1, span / 2);
  std::vector<Window> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const std::size_t n = seqs[s].size();
    if (n < 2) continue;
    if (n <= span) {
      out.push_back({s, 0, n});
      continue;
    }
    std::size_t start = 0;
    for (; start + span < n; start += stride) out.push_back({s, start, span});
    out.push_back({s, n - span, span});
  }
  return out;
}

AdamW::AdamW(const ParamLayout& layout, double weight_decay)
    : decay_(layout.total(), 0),
      m_(layout.total(), 0.0f),
      v_(layout.total(), 0.0f),
      weight_decay_(weight_decay) {
  for (const auto& t : layout.tensors()) {
    if (t.decay) std::fill_n(decay_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size, 1);
  }
}

void AdamW::step(std::span<float> params, std::span<const float> grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.95, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto n = static_cast<std::ptrdiff_t>(params.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double g = grads[i];
    const double m = b1 * m_[i] + (1 - b1) * g;
    const double v = b2 * v_[i] + (1 - b2) * g * g;
    m_[i] = static_cast<float>(m);
    v_[i] = static_cast<float>(v);
    double p = params[i];
    if (decay_[i]) p -= lr * weight_decay_ * p;
    p -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
    params[i] = static_cast<float>(p);
  }
}

double clip_grad_norm(std::span<float> grads, double max_norm) {
  double ss = 0.0;
  for (float g : grads) ss += static_cast<double>(g) * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

namespace {

struct Batch {
  std::size_t rows = 0, length = 0;
  std::vector<ClassId> classes;
  std::vector<double> values;
  std::vector<Token> targets;
  std::vector<std::uint8_t> mask;

  ModelInput input() const { return {rows, length, classes, values}; }
};

// Right-pads every row to the longest window; pad positions are masked out and,
// being after all real tokens, are invisible to them under causal attention.
void fill_batch(Batch& b, std::span<const TokenSequence> seqs, std::span<const Window> windows) {
  b.rows = windows.size();
  b.length = 0;
  for (const auto& w : windows) b.length = std::max(b.length, w.length - 1);
  const std::size_t n = b.rows * b.length;
  b.classes.assign(n, 0);
  b.values.assign(n, 0.0);
  b.targets.assign(n, Token{0, std::nullopt});
  b.mask.assign(n, 0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& w = windows[r];
    const auto& toks = seqs[w.seq].tokens;
    for (std::size_t t = 0; t + 1 < w.length; ++t) {
      const auto& in = toks[w.start + t];
      const std::size_t i = r * b.length + t;
      b.classes[i] = in.class_id;
      b.values[i] = in.value.value_or(0.0);
      b.targets[i] = toks[w.start + t + 1];
      b.mask[i] = 1;
    }
  }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& part) {
  const auto n = static_cast<double>(part.token_count);
  acc.class_loss += part.class_loss * n;
  acc.value_loss += part.value_loss * n;
  acc.token_count += part.token_count;
}

void finish(LossBreakdown& acc) {
  if (acc.token_count == 0) return;
  const auto n = static_cast<double>(acc.token_count);
  acc.class_loss /= n;
  acc.value_loss /= n;
  acc.total = acc.class_loss + acc.value_loss;
}

std::size_t rows_per_batch(const TrainConfig& cfg, std::size_t context) {
  return std::max<std::size_t>(1, cfg.batch_tokens / context);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

}  // namespace

LossBreakdown evaluate_loss(const Transformer<float>& model, std::span<const TokenSequence> seqs,
                            const LossOptions& opts) {
  const std::size_t context = model.config().context;
  const auto windows = make_windows(seqs, context);
  if (windows.empty()) throw ValidationError("no sequence has at least two tokens");
  const std::size_t rows = std::max<std::size_t>(1, 4096 / context);
  Workspace<float> ws;
  Batch b;
  LossBreakdown acc;
  for (std::size_t i = 0; i < windows.size(); i += rows) {
    const auto chunk = std::span<const Window>(windows).subspan(i, std::min(rows, windows.size() - i));
    fill_batch(b, seqs, chunk);
    model.forward(b.input(), ws);
    accumulate(acc, head_loss(ws, b.targets, b.mask, opts, false));
  }
  finish(acc);
  return acc;
}

TrainResult train(Transformer<float>& model, std::span<const TokenSequence> train_seqs,
                  std::span<const TokenSequence> val_seqs, const TrainConfig& cfg,
                  const EvalCallback& on_eval) {
  const std::size_t context = model.config().context;
  cfg.validate(context);
  const auto windows = make_windows(train_seqs, context);
  if (windows.empty()) throw ValidationError("training set has no sequence of two or more tokens");
  if (val_seqs.empty()) val_seqs = train_seqs;

  const LossOptions opts{cfg.value_weight, cfg.fixed_sigma};
  const std::size_t rows = rows_per_batch(cfg, context);
  std::mt19937_64 batch_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);

  AdamW opt(model.layout(), cfg.weight_decay);
  std::vector<float> grads(model.num_params());
  Workspace<float> ws;
  Batch b;
  std::vector<Window> chosen(rows);

  TrainResult result;
  result.best_val_loss = INFINITY;
  result.best_params.assign(model.params().begin(), model.params().end());
  std::size_t stale = 0;

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    for (auto& w : chosen) w = windows[pick(batch_rng)];
    fill_batch(b, train_seqs, chosen);
    model.forward(b.input(), ws, true, &dropout_rng);
    const auto loss = head_loss(ws, b.targets, b.mask, opts, true);
    const double lr = lr_schedule(step, cfg);
    std::fill(grads.begin(), grads.end(), 0.0f);
    model.backward(ws, grads);
    const double norm = clip_grad_norm(grads, cfg.grad_clip);
    if (!std::isfinite(loss.total) || !std::isfinite(norm)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (lr=" + fmt(lr) +
                         ", grad_norm=" + fmt(norm) + ")");
    }
    opt.step(model.params(), grads, lr);

    LossRecord rec{step, lr, norm, loss, std::nullopt};
    const bool last = step + 1 == cfg.max_steps;
    if ((step + 1) % cfg.eval_interval == 0 || last) {
      const auto val = evaluate_loss(model, val_seqs, opts);
      if (!std::isfinite(val.total)) {
        throw NumericError("non-finite validation loss at step " + std::to_string(step) +
                           " (lr=" + fmt(lr) + ", grad_norm=" + fmt(norm) + ")");
      }
      rec.val = val;
      const bool improved = val.total < result.best_val_loss;
      if (improved) {
        result.best_val_loss = val.total;
        result.best_step = step;
        result.best_params.assign(model.params().begin(), model.params().end());
        stale = 0;
      } else {
        ++stale;
      }
      if (on_eval) on_eval(step, model, improved);
    }
    result.history.push_back(rec);
    result.steps_run = step + 1;
    if (cfg.patience > 0 && stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  std::copy(result.best_params.begin(), result.best_params.end(), model.params().begin());
  return result;
}

void write_loss_csv(std::ostream& out, std::span<const LossRecord> history) {
  out << "step,lr,grad_norm,train_class,train_value,train_total,val_class,val_value,val_total\n";
  for (const auto& r : history) {
    out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.grad_norm) << ','
        << format_double(r.train.class_loss) << ',' << format_double(r.train.value_loss) << ','
        << format_double(r.train.total);
    if (r.val) {
      out << ',' << format_double(r.val->class_loss) << ',' << format_double(r.val->value_loss)
          << ',' << format_double(r.val->total);
    } else {
      out << ",,,";
    }
    out << '\n';
  }
}

}  // namespace mvgpt
