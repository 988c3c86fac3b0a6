#include "mvgpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mvgpt/error.hpp"
#include "mvgpt/kernels.hpp"

namespace mvgpt {

namespace k = kernels::parallel;

void ModelConfig::validate() const {
  if (d_e == 0 || n_head == 0 || n_layer == 0 || d_c == 0 || value_map_hidden == 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (d_e % n_head != 0) throw ValidationError("d_e must be divisible by n_head");
  if (context < 2) throw ValidationError("context must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1)");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"d_e", d_e},         {"n_head", n_head},   {"n_layer", n_layer},
          {"context", context}, {"d_c", d_c},         {"dropout", dropout},
          {"value_map_hidden", value_map_hidden},     {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  try {
    c.d_e = j.at("d_e").get<std::size_t>();
    c.n_head = j.at("n_head").get<std::size_t>();
    c.n_layer = j.at("n_layer").get<std::size_t>();
    c.context = j.at("context").get<std::size_t>();
    c.d_c = j.at("d_c").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.value_map_hidden = j.at("value_map_hidden").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void ParamLayout::add(std::string name, std::vector<std::size_t> shape, bool decay) {
  std::size_t size = 1;
  for (auto d : shape) size *= d;
  tensors_.push_back({std::move(name), std::move(shape), total_, size, decay});
  total_ += size;
}

const TensorInfo& ParamLayout::at(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor named '" + name + "'");
}

ParamLayout make_layout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_e, h = cfg.value_map_hidden;
  ParamLayout l;
  l.add("class_embeddings", {cfg.d_c, d}, false);
  l.add("positional_embeddings", {cfg.context, d}, false);
  l.add("value_map.w1", {1, h}, true);
  l.add("value_map.b1", {h}, false);
  l.add("value_map.w2", {h, d}, true);
  l.add("value_map.b2", {d}, false);
  for (std::size_t i = 0; i < cfg.n_layer; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    l.add(p + "ln1.gamma", {d}, false);
    l.add(p + "ln1.beta", {d}, false);
    l.add(p + "attn.w", {d, 3 * d}, true);
    l.add(p + "attn.b", {3 * d}, false);
    l.add(p + "attn_proj.w", {d, d}, true);
    l.add(p + "attn_proj.b", {d}, false);
    l.add(p + "ln2.gamma", {d}, false);
    l.add(p + "ln2.beta", {d}, false);
    l.add(p + "mlp_fc.w", {d, 4 * d}, true);
    l.add(p + "mlp_fc.b", {4 * d}, false);
    l.add(p + "mlp_proj.w", {4 * d, d}, true);
    l.add(p + "mlp_proj.b", {d}, false);
  }
  l.add("ln_f.gamma", {d}, false);
  l.add("ln_f.beta", {d}, false);
  l.add("class_head.w", {d, cfg.d_c}, true);
  l.add("class_head.b", {cfg.d_c}, false);
  l.add("value_head.w", {d, 2 * cfg.d_c}, true);
  l.add("value_head.b", {2 * cfg.d_c}, false);
  return l;
}

std::size_t analytic_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_e, h = cfg.value_map_hidden, c = cfg.d_c;
  const std::size_t per_block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d +
                                (d * 4 * d + 4 * d) + (4 * d * d + d);
  return c * d + cfg.context * d + (h + h + h * d + d) + cfg.n_layer * per_block + 2 * d +
         (d * c + c) + (d * 2 * c + 2 * c);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_grad(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

template <class T>
std::span<const T> cspan(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

template <class T>
void zero(std::vector<T>& v, std::size_t n) {
  v.assign(n, T(0));
}

template <class T>
void make_dropout_mask(std::vector<T>& mask, std::size_t n, double p, std::mt19937_64& rng) {
  mask.resize(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = u(rng) < p ? T(0) : keep;
}

}  // namespace

template <class T>
Transformer<T>::Transformer(ModelConfig cfg, std::vector<bool> numeric_mask)
    : cfg_(cfg), numeric_(std::move(numeric_mask)), layout_(make_layout(cfg)) {
  cfg_.validate();
  if (numeric_.size() != cfg_.d_c) {
    throw ValidationError("numeric mask size does not match d_c");
  }
  params_.assign(layout_.total(), T(0));
}

template <class T>
std::span<T> Transformer<T>::tensor(const std::string& name) {
  const auto& info = layout_.at(name);
  return std::span<T>(params_).subspan(info.offset, info.size);
}

template <class T>
std::span<const T> Transformer<T>::tensor(const std::string& name) const {
  const auto& info = layout_.at(name);
  return std::span<const T>(params_).subspan(info.offset, info.size);
}

template <class T>
void Transformer<T>::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layer));
  for (const auto& info : layout_.tensors()) {
    auto t = std::span<T>(params_).subspan(info.offset, info.size);
    const auto& n = info.name;
    auto ends_with = [&](const std::string& s) {
      return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
    };
    double std = 0.0;
    double fill = 0.0;
    if (ends_with("gamma")) {
      fill = 1.0;
    } else if (n == "value_map.w1" || n == "value_map.b1") {
      // Scalar input: unit-scale hidden pre-activations with spread-out kinks.
      std = 1.0;
    } else if (ends_with("attn_proj.w") || ends_with("mlp_proj.w")) {
      std = resid_std;
    } else if (info.decay || n == "class_embeddings" || n == "positional_embeddings") {
      std = 0.02;
    }
    for (auto& x : t) x = static_cast<T>(std > 0 ? std * normal(rng) : fill);
  }
  // softplus(b) = 1 for the sigma channel of the value head.
  auto vb = tensor("value_head.b");
  const T unit_sigma = static_cast<T>(std::log(std::exp(1.0) - 1.0));
  for (std::size_t c = 0; c < cfg_.d_c; ++c) vb[cfg_.d_c + c] = unit_sigma;
}

template <class T>
std::vector<T> Transformer<T>::embed_token(const Token& tok, std::size_t position) const {
  if (position >= cfg_.context) {
    throw ValidationError("position " + std::to_string(position) + " exceeds context " +
                          std::to_string(cfg_.context));
  }
  if (tok.class_id >= cfg_.d_c) throw ValidationError("class id outside vocabulary");
  const std::size_t d = cfg_.d_e;
  std::vector<T> out(d);
  auto E = tensor("class_embeddings");
  auto P = tensor("positional_embeddings");
  for (std::size_t i = 0; i < d; ++i) out[i] = E[tok.class_id * d + i] + P[position * d + i];
  if (numeric_[tok.class_id]) {
    if (!tok.value) throw ValidationError("numeric token without value");
    const std::size_t h = cfg_.value_map_hidden;
    std::vector<T> in{static_cast<T>(*tok.value)}, pre(h), act(h), vm(d);
    k::linear_forward<T>(pre, cspan(in), tensor("value_map.w1"), tensor("value_map.b1"), 1, 1, h);
    k::gelu_forward<T>(act, cspan(pre));
    k::linear_forward<T>(vm, cspan(act), tensor("value_map.w2"), tensor("value_map.b2"), 1, h, d);
    for (std::size_t i = 0; i < d; ++i) out[i] += vm[i];
  }
  return out;
}

template <class T>
void Transformer<T>::forward(const ModelInput& in, Workspace<T>& ws, bool train,
                             std::mt19937_64* dropout_rng) const {
  const std::size_t B = in.batch, L = in.length, N = B * L;
  const std::size_t d = cfg_.d_e, dc = cfg_.d_c, hv = cfg_.value_map_hidden;
  if (L == 0 || B == 0) throw ValidationError("empty model input");
  if (L > cfg_.context) {
    throw ValidationError("sequence length " + std::to_string(L) + " exceeds context " +
                          std::to_string(cfg_.context));
  }
  if (in.classes.size() != N || in.values.size() != N) {
    throw ValidationError("model input size mismatch");
  }
  const bool dropout = train && cfg_.dropout > 0 && dropout_rng != nullptr;
  ws.batch = B;
  ws.length = L;
  ws.dropout_active = dropout;
  ws.classes.assign(in.classes.begin(), in.classes.end());

  // Embeddings: E_c + position, plus the value map on numeric rows.
  ws.x0.resize(N * d);
  auto E = tensor("class_embeddings");
  auto P = tensor("positional_embeddings");
  ws.numeric_rows.clear();
  for (std::size_t r = 0; r < N; ++r) {
    const ClassId c = in.classes[r];
    if (c >= dc) throw ValidationError("class id outside vocabulary");
    const std::size_t t = r % L;
    for (std::size_t i = 0; i < d; ++i) ws.x0[r * d + i] = E[c * d + i] + P[t * d + i];
    if (numeric_[c]) ws.numeric_rows.push_back(r);
  }
  const std::size_t M = ws.numeric_rows.size();
  ws.vm_in.resize(M);
  ws.vm_pre.resize(M * hv);
  ws.vm_h.resize(M * hv);
  ws.vm_out.resize(M * d);
  if (M > 0) {
    for (std::size_t m = 0; m < M; ++m) ws.vm_in[m] = static_cast<T>(in.values[ws.numeric_rows[m]]);
    k::linear_forward<T>(ws.vm_pre, cspan(ws.vm_in), tensor("value_map.w1"),
                         tensor("value_map.b1"), M, 1, hv);
    k::gelu_forward<T>(ws.vm_h, cspan(ws.vm_pre));
    k::linear_forward<T>(ws.vm_out, cspan(ws.vm_h), tensor("value_map.w2"),
                         tensor("value_map.b2"), M, hv, d);
    for (std::size_t m = 0; m < M; ++m) {
      T* x = ws.x0.data() + ws.numeric_rows[m] * d;
      const T* v = ws.vm_out.data() + m * d;
      for (std::size_t i = 0; i < d; ++i) x[i] += v[i];
    }
  }
  if (dropout) {
    make_dropout_mask(ws.embed_mask, N * d, cfg_.dropout, *dropout_rng);
    for (std::size_t i = 0; i < N * d; ++i) ws.x0[i] *= ws.embed_mask[i];
  }

  ws.layers.resize(cfg_.n_layer);
  const kernels::AttentionShape shape{B, L, d, cfg_.n_head};
  const T* x = ws.x0.data();
  for (std::size_t l = 0; l < cfg_.n_layer; ++l) {
    auto& a = ws.layers[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    a.ln1.resize(N * d);
    a.ln1_mean.resize(N);
    a.ln1_rstd.resize(N);
    a.qkv.resize(N * 3 * d);
    a.att.resize(B * cfg_.n_head * L * L);
    a.atty.resize(N * d);
    a.res1.resize(N * d);
    a.ln2.resize(N * d);
    a.ln2_mean.resize(N);
    a.ln2_rstd.resize(N);
    a.fch.resize(N * 4 * d);
    a.fcg.resize(N * 4 * d);
    a.res2.resize(N * d);
    std::span<const T> xin(x, N * d);

    k::layernorm_forward<T>(a.ln1, a.ln1_mean, a.ln1_rstd, xin, tensor(p + "ln1.gamma"),
                            tensor(p + "ln1.beta"), N, d);
    k::linear_forward<T>(a.qkv, cspan(a.ln1), tensor(p + "attn.w"), tensor(p + "attn.b"), N, d,
                         3 * d);
    k::attention_forward<T>(a.atty, a.att, cspan(a.qkv), shape);
    k::linear_forward<T>(a.res1, cspan(a.atty), tensor(p + "attn_proj.w"),
                         tensor(p + "attn_proj.b"), N, d, d);
    if (dropout) {
      make_dropout_mask(a.proj_mask, N * d, cfg_.dropout, *dropout_rng);
      for (std::size_t i = 0; i < N * d; ++i) a.res1[i] *= a.proj_mask[i];
    }
    for (std::size_t i = 0; i < N * d; ++i) a.res1[i] += xin[i];

    k::layernorm_forward<T>(a.ln2, a.ln2_mean, a.ln2_rstd, cspan(a.res1), tensor(p + "ln2.gamma"),
                            tensor(p + "ln2.beta"), N, d);
    k::linear_forward<T>(a.fch, cspan(a.ln2), tensor(p + "mlp_fc.w"), tensor(p + "mlp_fc.b"), N,
                         d, 4 * d);
    k::gelu_forward<T>(a.fcg, cspan(a.fch));
    k::linear_forward<T>(a.res2, cspan(a.fcg), tensor(p + "mlp_proj.w"), tensor(p + "mlp_proj.b"),
                         N, 4 * d, d);
    if (dropout) {
      make_dropout_mask(a.mlp_mask, N * d, cfg_.dropout, *dropout_rng);
      for (std::size_t i = 0; i < N * d; ++i) a.res2[i] *= a.mlp_mask[i];
    }
    for (std::size_t i = 0; i < N * d; ++i) a.res2[i] += a.res1[i];
    x = a.res2.data();
  }

  ws.lnf.resize(N * d);
  ws.lnf_mean.resize(N);
  ws.lnf_rstd.resize(N);
  k::layernorm_forward<T>(ws.lnf, ws.lnf_mean, ws.lnf_rstd, std::span<const T>(x, N * d),
                          tensor("ln_f.gamma"), tensor("ln_f.beta"), N, d);
  ws.logits.resize(N * dc);
  ws.vhead.resize(N * 2 * dc);
  k::linear_forward<T>(ws.logits, cspan(ws.lnf), tensor("class_head.w"), tensor("class_head.b"), N,
                       d, dc);
  k::linear_forward<T>(ws.vhead, cspan(ws.lnf), tensor("value_head.w"), tensor("value_head.b"), N,
                       d, 2 * dc);
}

template <class T>
void Transformer<T>::backward(Workspace<T>& ws, std::span<T> grads) const {
  const std::size_t N = ws.rows(), L = ws.length;
  const std::size_t d = cfg_.d_e, dc = cfg_.d_c, hv = cfg_.value_map_hidden;
  if (grads.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  if (ws.dlogits.size() != N * dc || ws.dvhead.size() != N * 2 * dc) {
    throw std::invalid_argument("head gradients not set");
  }
  auto g = [&](const std::string& name) {
    const auto& info = layout_.at(name);
    return grads.subspan(info.offset, info.size);
  };

  const T* x_final = cfg_.n_layer > 0 ? ws.layers.back().res2.data() : ws.x0.data();
  zero(ws.dln, N * d);
  k::linear_backward<T>(ws.dln, g("class_head.w"), g("class_head.b"), cspan(ws.dlogits),
                        cspan(ws.lnf), tensor("class_head.w"), N, d, dc);
  k::linear_backward<T>(ws.dln, g("value_head.w"), g("value_head.b"), cspan(ws.dvhead),
                        cspan(ws.lnf), tensor("value_head.w"), N, d, 2 * dc);
  zero(ws.dres, N * d);
  k::layernorm_backward<T>(ws.dres, g("ln_f.gamma"), g("ln_f.beta"), cspan(ws.dln),
                           std::span<const T>(x_final, N * d), tensor("ln_f.gamma"),
                           cspan(ws.lnf_mean), cspan(ws.lnf_rstd), N, d);

  const kernels::AttentionShape shape{ws.batch, L, d, cfg_.n_head};
  for (std::size_t li = cfg_.n_layer; li-- > 0;) {
    auto& a = ws.layers[li];
    const std::string p = "blocks." + std::to_string(li) + ".";
    const T* xin = li == 0 ? ws.x0.data() : ws.layers[li - 1].res2.data();

    // MLP branch: res2 = res1 + drop(mlp(ln2(res1))); dres holds d(res2).
    ws.dbranch = ws.dres;
    if (ws.dropout_active) {
      for (std::size_t i = 0; i < N * d; ++i) ws.dbranch[i] *= a.mlp_mask[i];
    }
    zero(ws.dfcg, N * 4 * d);
    k::linear_backward<T>(ws.dfcg, g(p + "mlp_proj.w"), g(p + "mlp_proj.b"), cspan(ws.dbranch),
                          cspan(a.fcg), tensor(p + "mlp_proj.w"), N, 4 * d, d);
    zero(ws.dfch, N * 4 * d);
    k::gelu_backward<T>(ws.dfch, cspan(a.fch), cspan(ws.dfcg));
    zero(ws.dln, N * d);
    k::linear_backward<T>(ws.dln, g(p + "mlp_fc.w"), g(p + "mlp_fc.b"), cspan(ws.dfch),
                          cspan(a.ln2), tensor(p + "mlp_fc.w"), N, d, 4 * d);
    k::layernorm_backward<T>(ws.dres, g(p + "ln2.gamma"), g(p + "ln2.beta"), cspan(ws.dln),
                             cspan(a.res1), tensor(p + "ln2.gamma"), cspan(a.ln2_mean),
                             cspan(a.ln2_rstd), N, d);

    // Attention branch: res1 = x + drop(proj(attn(ln1(x)))); dres holds d(res1).
    ws.dbranch = ws.dres;
    if (ws.dropout_active) {
      for (std::size_t i = 0; i < N * d; ++i) ws.dbranch[i] *= a.proj_mask[i];
    }
    zero(ws.datty, N * d);
    k::linear_backward<T>(ws.datty, g(p + "attn_proj.w"), g(p + "attn_proj.b"),
                          cspan(ws.dbranch), cspan(a.atty), tensor(p + "attn_proj.w"), N, d, d);
    zero(ws.dqkv, N * 3 * d);
    k::attention_backward<T>(ws.dqkv, cspan(ws.datty), cspan(a.qkv), cspan(a.att), shape);
    zero(ws.dln, N * d);
    k::linear_backward<T>(ws.dln, g(p + "attn.w"), g(p + "attn.b"), cspan(ws.dqkv), cspan(a.ln1),
                          tensor(p + "attn.w"), N, d, 3 * d);
    k::layernorm_backward<T>(ws.dres, g(p + "ln1.gamma"), g(p + "ln1.beta"), cspan(ws.dln),
                             std::span<const T>(xin, N * d), tensor(p + "ln1.gamma"),
                             cspan(a.ln1_mean), cspan(a.ln1_rstd), N, d);
  }

  // Embedding sums.
  if (ws.dropout_active) {
    for (std::size_t i = 0; i < N * d; ++i) ws.dres[i] *= ws.embed_mask[i];
  }
  auto dE = g("class_embeddings");
  auto dP = g("positional_embeddings");
  for (std::size_t r = 0; r < N; ++r) {
    const ClassId c = ws.classes[r];
    const std::size_t t = r % L;
    const T* gr = ws.dres.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      dE[c * d + i] += gr[i];
      dP[t * d + i] += gr[i];
    }
  }
  const std::size_t M = ws.numeric_rows.size();
  if (M > 0) {
    ws.dvm_out.resize(M * d);
    for (std::size_t m = 0; m < M; ++m) {
      std::copy_n(ws.dres.data() + ws.numeric_rows[m] * d, d, ws.dvm_out.data() + m * d);
    }
    zero(ws.dvm_h, M * hv);
    k::linear_backward<T>(ws.dvm_h, g("value_map.w2"), g("value_map.b2"), cspan(ws.dvm_out),
                          cspan(ws.vm_h), tensor("value_map.w2"), M, hv, d);
    zero(ws.dvm_pre, M * hv);
    k::gelu_backward<T>(ws.dvm_pre, cspan(ws.vm_pre), cspan(ws.dvm_h));
    k::linear_backward<T>(std::span<T>{}, g("value_map.w1"), g("value_map.b1"), cspan(ws.dvm_pre),
                          cspan(ws.vm_in), tensor("value_map.w1"), M, 1, hv);
  }
}

template <class T>
PredictionHeadOutput head_output(const Workspace<T>& ws, std::size_t row, std::size_t d_c,
                                 std::optional<double> fixed_sigma) {
  PredictionHeadOutput out;
  out.class_probs.resize(d_c);
  out.mu.resize(d_c);
  out.sigma.resize(d_c);
  const T* lg = ws.logits.data() + row * d_c;
  const T* vh = ws.vhead.data() + row * 2 * d_c;
  double maxv = -INFINITY;
  for (std::size_t c = 0; c < d_c; ++c) maxv = std::max(maxv, static_cast<double>(lg[c]));
  double sum = 0.0;
  for (std::size_t c = 0; c < d_c; ++c) {
    out.class_probs[c] = std::exp(static_cast<double>(lg[c]) - maxv);
    sum += out.class_probs[c];
  }
  for (std::size_t c = 0; c < d_c; ++c) {
    out.class_probs[c] /= sum;
    out.mu[c] = static_cast<double>(vh[c]);
    out.sigma[c] = fixed_sigma ? *fixed_sigma
                               : std::max(softplus(static_cast<double>(vh[d_c + c])), kSigmaFloor);
  }
  return out;
}

template <class T>
std::vector<PredictionHeadOutput> Transformer<T>::predict(std::span<const Token> tokens,
                                                          std::optional<double> fixed_sigma) const {
  if (tokens.empty()) throw ValidationError("cannot run the model on an empty sequence");
  std::vector<ClassId> classes;
  std::vector<double> values;
  for (const auto& t : tokens) {
    classes.push_back(t.class_id);
    values.push_back(t.value.value_or(0.0));
  }
  Workspace<T> ws;
  forward({1, tokens.size(), classes, values}, ws);
  std::vector<PredictionHeadOutput> out;
  out.reserve(tokens.size());
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    out.push_back(head_output(ws, r, cfg_.d_c, fixed_sigma));
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;
template PredictionHeadOutput head_output<float>(const Workspace<float>&, std::size_t, std::size_t,
                                                 std::optional<double>);
template PredictionHeadOutput head_output<double>(const Workspace<double>&, std::size_t,
                                                  std::size_t, std::optional<double>);

}  // namespace mvgpt
