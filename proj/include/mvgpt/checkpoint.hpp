#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvgpt/discrete.hpp"
#include "mvgpt/model.hpp"
#include "mvgpt/schema.hpp"

namespace mvgpt {

inline constexpr int kCheckpointFormatVersion = 1;

/// On disk: 8-byte magic "MVGPTCK1", u32 little-endian header length, a JSON
/// header, then all parameters as little-endian float32 in layout order.
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;              // continuous vocabulary of the data
  std::optional<BinTable> bins;  // present for binned baselines
  std::vector<float> params;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  bool is_discrete() const { return bins.has_value(); }
  /// Vocabulary the model predicts over (binned for baselines).
  Vocabulary model_vocab() const;
  Transformer<float> make_model() const;
};

/// Writes through a temporary file and renames, so readers never see a torn file.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mvgpt
