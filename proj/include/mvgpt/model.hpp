#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvgpt/schema.hpp"
#include "mvgpt/tokenizer.hpp"

namespace mvgpt {

/// Lower bound applied to the predicted standard deviation after softplus.
inline constexpr double kSigmaFloor = 1e-4;

struct ModelConfig {
  std::size_t d_e = 64;
  std::size_t n_head = 4;
  std::size_t n_layer = 2;
  std::size_t context = 128;
  std::size_t d_c = 0;
  double dropout = 0.0;
  std::size_t value_map_hidden = 32;
  std::uint64_t seed = 1337;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::ordered_json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // receives decoupled weight decay
};

/// Named views into one flat parameter buffer.
class ParamLayout {
 public:
  void add(std::string name, std::vector<std::size_t> shape, bool decay);
  const TensorInfo& at(const std::string& name) const;
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

ParamLayout make_layout(const ModelConfig& cfg);

/// Per-position head outputs in double precision.
struct PredictionHeadOutput {
  std::vector<double> class_probs;
  std::vector<double> mu;
  std::vector<double> sigma;
};

/// Numerically stable log(1 + exp(x)).
double softplus(double x);
/// d softplus / dx, i.e. the logistic sigmoid.
double softplus_grad(double x);

/// A batch of equally long rows; row-major [batch, length]. Values are ignored
/// for categorical classes.
struct ModelInput {
  std::size_t batch = 1;
  std::size_t length = 0;
  std::span<const ClassId> classes;
  std::span<const double> values;
};

/// Activations and gradient scratch for one forward/backward pass. Reusing a
/// workspace across calls avoids reallocation; each thread needs its own.
template <class T>
struct Workspace {
  struct Layer {
    std::vector<T> ln1, ln1_mean, ln1_rstd, qkv, att, atty, res1;
    std::vector<T> ln2, ln2_mean, ln2_rstd, fch, fcg, res2;
    std::vector<T> proj_mask, mlp_mask;
  };

  std::size_t batch = 0, length = 0;
  bool dropout_active = false;
  std::vector<ClassId> classes;
  std::vector<std::size_t> numeric_rows;
  std::vector<T> vm_in, vm_pre, vm_h, vm_out;
  std::vector<T> x0, embed_mask;
  std::vector<Layer> layers;
  std::vector<T> lnf, lnf_mean, lnf_rstd;
  std::vector<T> logits, vhead;    // [N, d_c], [N, 2 d_c]
  std::vector<T> dlogits, dvhead;  // filled by the loss before backward()

  // backward scratch
  std::vector<T> dres, dln, dqkv, datty, dfch, dfcg, dbranch, dvm_out, dvm_h, dvm_pre;

  std::size_t rows() const { return batch * length; }
};

/// Decoder-only transformer with class embeddings, a shared value map, and
/// class/value heads. Parameters live in one flat buffer described by layout().
template <class T>
class Transformer {
 public:
  Transformer(ModelConfig cfg, std::vector<bool> numeric_mask);

  /// Deterministic initialization from config().seed.
  void init_params();

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  const std::vector<bool>& numeric_mask() const { return numeric_; }
  std::size_t num_params() const { return layout_.total(); }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::span<T> tensor(const std::string& name);
  std::span<const T> tensor(const std::string& name) const;

  /// Input embedding of one token at `position` (class + value map + position).
  std::vector<T> embed_token(const Token& tok, std::size_t position) const;

  /// Runs the stack; fills ws.logits and ws.vhead. Dropout is applied only when
  /// `train` is set, the configured rate is positive, and an rng is given.
  void forward(const ModelInput& in, Workspace<T>& ws, bool train = false,
               std::mt19937_64* dropout_rng = nullptr) const;

  /// Backpropagates ws.dlogits / ws.dvhead from the last forward() and
  /// accumulates parameter gradients into `grads` (size num_params()).
  void backward(Workspace<T>& ws, std::span<T> grads) const;

  /// Eval-mode forward over one token prefix; one head output per position.
  std::vector<PredictionHeadOutput> predict(std::span<const Token> tokens,
                                            std::optional<double> fixed_sigma = {}) const;

 private:
  ModelConfig cfg_;
  std::vector<bool> numeric_;
  ParamLayout layout_;
  std::vector<T> params_;
};

/// Head output for one row of a workspace.
template <class T>
PredictionHeadOutput head_output(const Workspace<T>& ws, std::size_t row, std::size_t d_c,
                                 std::optional<double> fixed_sigma = {});

/// Parameter count implied by the tensor shapes of `cfg`.
std::size_t analytic_param_count(const ModelConfig& cfg);

}  // namespace mvgpt
