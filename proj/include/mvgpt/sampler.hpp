#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mvgpt/discrete.hpp"
#include "mvgpt/model.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

/// Draws of a time value that denormalize to a non-positive delta are redrawn
/// at most this many times.
inline constexpr int kMaxTimeResamples = 100;

enum class SampleMode { sample, max_likelihood };
enum class StopCondition { token_budget, elapsed_time_budget };

struct SampleOptions {
  SampleMode mode = SampleMode::sample;
  std::optional<double> fixed_sigma;
  std::size_t max_new_tokens = 256;
  StopCondition stop = StopCondition::token_budget;
  double time_budget = 0.0;  // raw time units; elapsed_time_budget only
  double temperature = 1.0;
  std::uint64_t rng_seed = 0;
  // Masks the time class right after a time token.
  bool forbid_consecutive_time = false;

  void validate() const;
};

SampleMode parse_sample_mode(const std::string& s);

struct Generation {
  TokenSequence seq;                              // seed followed by new tokens
  std::vector<std::optional<TokenStats>> stats;   // per token; set where a value was predicted
  std::size_t new_tokens = 0;
  std::size_t consecutive_time_tokens = 0;        // grammar violations among new tokens
  double elapsed_time = 0.0;                      // raw units covered by new time tokens
};

/// Stable per-sequence stream seed (FNV-1a over the id, mixed with `base`).
std::uint64_t derive_seed(std::uint64_t base, const std::string& seq_id);

/// Autoregressive continuation of `seed`. Once the sequence outgrows the
/// model context, the fed-back window starts at the latest multiple of
/// (context + 1) / 2 that fits, matching the training chunk grid.
/// `vocab` is the vocabulary the model predicts over; a codec maps binned
/// time tokens to elapsed time for the time budget and bars the reserved
/// placeholder time class of the binned vocabulary. `done`, when given, is
/// checked after every new token and ends generation early.
using StopPredicate = std::function<bool(const Generation&)>;
Generation generate(const TokenSequence& seed, const Transformer<float>& model,
                    const Vocabulary& vocab, const SampleOptions& opts,
                    const DiscreteCodec* codec = nullptr, const StopPredicate& done = {});

/// Fills the values at `masked` positions left to right; each fill conditions
/// on ground truth at unmasked positions and on earlier fills. Classes are
/// never altered. Throws ValidationError for categorical or position-0 masks.
Generation infill_values(const TokenSequence& full, const std::set<std::size_t>& masked,
                         const Transformer<float>& model, const Vocabulary& vocab,
                         const SampleOptions& opts);

}  // namespace mvgpt
