#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "mvgpt/model.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

/// Probabilities below this are clamped before taking the log.
inline constexpr double kLogEpsilon = 1e-12;

struct LossOptions {
  double value_weight = 1.0;
  // Replaces the predicted sigma everywhere (fixed-variance ablation).
  std::optional<double> fixed_sigma;
};

struct TokenLoss {
  double class_loss = 0.0;
  double value_loss = 0.0;
};

struct LossBreakdown {
  double class_loss = 0.0;
  double value_loss = 0.0;
  double total = 0.0;
  std::size_t token_count = 0;
};

/// 0.5 log(2 pi sigma^2) + (v - mu)^2 / (2 sigma^2)
double gaussian_nll(double v, double mu, double sigma);

/// Class cross-entropy and (weighted) Gaussian value NLL for one target.
/// Categorical targets (no value) contribute zero value loss.
TokenLoss token_loss(const PredictionHeadOutput& pred, const Token& target,
                     double value_weight = 1.0);

/// Mean of token losses over aligned predictions and next-token targets.
LossBreakdown batch_loss(std::span<const PredictionHeadOutput> preds,
                         std::span<const Token> targets, double value_weight = 1.0);

/// Fused loss on raw head outputs of a workspace. Rows with mask 0 are
/// ignored; the mean runs over the remaining rows. When `with_grad` is set,
/// ws.dlogits and ws.dvhead receive d(total)/d(head outputs).
template <class T>
LossBreakdown head_loss(Workspace<T>& ws, std::span<const Token> targets,
                        std::span<const std::uint8_t> mask, const LossOptions& opts,
                        bool with_grad);

}  // namespace mvgpt
