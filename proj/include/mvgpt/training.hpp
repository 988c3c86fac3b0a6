#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "mvgpt/loss.hpp"
#include "mvgpt/model.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

struct TrainConfig {
  std::size_t max_steps = 2000;
  std::size_t batch_tokens = 2048;
  double lr_max = 1e-3;
  std::size_t warmup_steps = 100;
  double min_lr = 1e-4;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  std::size_t eval_interval = 100;
  std::size_t patience = 10;  // evaluations without improvement; 0 disables
  std::uint64_t seed = 1;
  double value_weight = 1.0;
  std::optional<double> fixed_sigma;

  /// Throws ValidationError; `context` is the model context length.
  void validate(std::size_t context) const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
};

/// Linear warm-up to lr_max, cosine decay to min_lr at max_steps, then flat.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

/// A contiguous slice of one sequence used as a training row.
struct Window {
  std::size_t seq = 0;
  std::size_t start = 0;
  std::size_t length = 0;  // tokens, including the final target
};

/// Rows of at most context + 1 tokens. Longer sequences are chunked with 50%
/// overlap and a last window flush with the end; sequences shorter than two
/// tokens are skipped.
std::vector<Window> make_windows(std::span<const TokenSequence> seqs, std::size_t context);

/// Decoupled-weight-decay Adam with beta = (0.9, 0.95) and eps = 1e-8. Decay
/// applies only to tensors flagged in the layout.
class AdamW {
 public:
  AdamW(const ParamLayout& layout, double weight_decay);
  void step(std::span<float> params, std::span<const float> grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<std::uint8_t> decay_;
  std::vector<float> m_, v_;
  double weight_decay_;
  std::size_t t_ = 0;
};

/// Scales `grads` in place so the global L2 norm is at most max_norm; returns
/// the norm before clipping. A non-positive max_norm disables clipping.
double clip_grad_norm(std::span<float> grads, double max_norm);

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  LossBreakdown train;
  std::optional<LossBreakdown> val;
};

struct TrainResult {
  std::vector<float> best_params;
  double best_val_loss = 0.0;
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool early_stopped = false;
  std::vector<LossRecord> history;
};

/// Called after every evaluation with the current model.
using EvalCallback =
    std::function<void(std::size_t step, const Transformer<float>& model, bool improved)>;

/// Mean per-token loss of the model over every window of `seqs` (eval mode).
LossBreakdown evaluate_loss(const Transformer<float>& model, std::span<const TokenSequence> seqs,
                            const LossOptions& opts);

/// Trains `model` in place; on return the model holds the best-validation
/// parameters. An empty validation set reuses the training set. Throws
/// NumericError on a non-finite loss.
TrainResult train(Transformer<float>& model, std::span<const TokenSequence> train_seqs,
                  std::span<const TokenSequence> val_seqs, const TrainConfig& cfg,
                  const EvalCallback& on_eval = {});

/// CSV `step,lr,grad_norm,train_class,train_value,train_total,val_class,val_value,val_total`.
void write_loss_csv(std::ostream& out, std::span<const LossRecord> history);

}  // namespace mvgpt
