#include "mvgpt/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvgpt/error.hpp"

namespace mvgpt {

double gaussian_nll(double v, double mu, double sigma) {
  const double z = (v - mu) / sigma;
  return 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) + 0.5 * z * z;
}

TokenLoss token_loss(const PredictionHeadOutput& pred, const Token& target, double value_weight) {
  if (target.class_id >= pred.class_probs.size()) {
    throw ValidationError("target class outside prediction width");
  }
  TokenLoss out;
  out.class_loss = -std::log(std::max(pred.class_probs[target.class_id], kLogEpsilon));
  if (target.value) {
    out.value_loss = value_weight * gaussian_nll(*target.value, pred.mu[target.class_id],
                                                 pred.sigma[target.class_id]);
  }
  return out;
}

LossBreakdown batch_loss(std::span<const PredictionHeadOutput> preds,
                         std::span<const Token> targets, double value_weight) {
  if (preds.size() != targets.size()) {
    throw ValidationError("prediction/target length mismatch");
  }
  if (preds.empty()) throw ValidationError("batch_loss needs at least one token");
  LossBreakdown out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto l = token_loss(preds[i], targets[i], value_weight);
    out.class_loss += l.class_loss;
    out.value_loss += l.value_loss;
  }
  out.token_count = preds.size();
  const double n = static_cast<double>(out.token_count);
  out.class_loss /= n;
  out.value_loss /= n;
  out.total = out.class_loss + out.value_loss;
  return out;
}

template <class T>
LossBreakdown head_loss(Workspace<T>& ws, std::span<const Token> targets,
                        std::span<const std::uint8_t> mask, const LossOptions& opts,
                        bool with_grad) {
  const std::size_t N = ws.rows();
  if (N == 0) throw ValidationError("head_loss on an empty workspace");
  const std::size_t dc = ws.logits.size() / N;
  if (targets.size() != N || mask.size() != N) {
    throw ValidationError("target/mask length does not match workspace rows");
  }
  std::size_t count = 0;
  for (auto m : mask) count += m != 0;
  if (with_grad) {
    ws.dlogits.assign(N * dc, T(0));
    ws.dvhead.assign(N * 2 * dc, T(0));
  }
  LossBreakdown out;
  out.token_count = count;
  if (count == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(count);

  std::vector<double> probs(dc);
  for (std::size_t r = 0; r < N; ++r) {
    if (!mask[r]) continue;
    const auto& target = targets[r];
    if (target.class_id >= dc) throw ValidationError("target class outside vocabulary");
    const T* lg = ws.logits.data() + r * dc;
    double maxv = -INFINITY;
    for (std::size_t c = 0; c < dc; ++c) maxv = std::max(maxv, static_cast<double>(lg[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < dc; ++c) {
      probs[c] = std::exp(static_cast<double>(lg[c]) - maxv);
      sum += probs[c];
    }
    const double lse = maxv + std::log(sum);
    out.class_loss += lse - static_cast<double>(lg[target.class_id]);
    if (with_grad) {
      T* dl = ws.dlogits.data() + r * dc;
      for (std::size_t c = 0; c < dc; ++c) {
        const double p = probs[c] / sum;
        dl[c] = static_cast<T>((p - (c == target.class_id ? 1.0 : 0.0)) * inv_n);
      }
    }

    if (target.value && opts.value_weight != 0.0) {
      const std::size_t c = target.class_id;
      const double v = *target.value;
      const double mu = static_cast<double>(ws.vhead[r * 2 * dc + c]);
      const double raw = static_cast<double>(ws.vhead[r * 2 * dc + dc + c]);
      double sigma = 0.0;
      bool sigma_live = false;
      if (opts.fixed_sigma) {
        sigma = *opts.fixed_sigma;
      } else {
        const double sp = softplus(raw);
        sigma_live = sp > kSigmaFloor;
        sigma = sigma_live ? sp : kSigmaFloor;
      }
      const double w = opts.value_weight;
      out.value_loss += w * gaussian_nll(v, mu, sigma);
      if (with_grad) {
        const double diff = mu - v;
        const double s2 = sigma * sigma;
        ws.dvhead[r * 2 * dc + c] = static_cast<T>(w * diff / s2 * inv_n);
        if (sigma_live) {
          const double dsigma = w * (1.0 / sigma - diff * diff / (s2 * sigma));
          ws.dvhead[r * 2 * dc + dc + c] = static_cast<T>(dsigma * softplus_grad(raw) * inv_n);
        }
      }
    }
  }
  out.class_loss *= inv_n;
  out.value_loss *= inv_n;
  out.total = out.class_loss + out.value_loss;
  return out;
}

template LossBreakdown head_loss<float>(Workspace<float>&, std::span<const Token>,
                                        std::span<const std::uint8_t>, const LossOptions&, bool);
template LossBreakdown head_loss<double>(Workspace<double>&, std::span<const Token>,
                                         std::span<const std::uint8_t>, const LossOptions&, bool);

}  // namespace mvgpt
