#pragma once

// Dense kernels for the transformer. Every kernel exists twice: a plain
// serial reference in `serial` and an OpenMP version in `parallel` used by the
// model. Both are deterministic for a fixed build: parallel loops partition
// outputs so that every element is reduced by one thread in a fixed order.
//
// Layouts are row-major. Activations are [N, C] with N = batch * length.
// Linear weights are stored [in, out] so that y = x W + b.
// Backward kernels accumulate (+=) into their gradient outputs.

#include <cstddef>
#include <span>

namespace mvgpt::kernels {

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t length = 1;
  std::size_t channels = 1;  // model width C; qkv rows hold 3C values
  std::size_t heads = 1;
};

#define MVGPT_DECLARE_KERNELS                                                                      \
  template <class T>                                                                               \
  void linear_forward(std::span<T> out, std::span<const T> in, std::span<const T> weight,          \
                      std::span<const T> bias, std::size_t n, std::size_t in_dim,                  \
                      std::size_t out_dim);                                                        \
  template <class T>                                                                               \
  void linear_backward(std::span<T> din, std::span<T> dweight, std::span<T> dbias,                 \
                       std::span<const T> dout, std::span<const T> in, std::span<const T> weight,  \
                       std::size_t n, std::size_t in_dim, std::size_t out_dim);                    \
  template <class T>                                                                               \
  void layernorm_forward(std::span<T> out, std::span<T> mean, std::span<T> rstd,                   \
                         std::span<const T> in, std::span<const T> gamma,                          \
                         std::span<const T> beta, std::size_t n, std::size_t c);                   \
  template <class T>                                                                               \
  void layernorm_backward(std::span<T> din, std::span<T> dgamma, std::span<T> dbeta,               \
                          std::span<const T> dout, std::span<const T> in,                          \
                          std::span<const T> gamma, std::span<const T> mean,                       \
                          std::span<const T> rstd, std::size_t n, std::size_t c);                  \
  template <class T>                                                                               \
  void gelu_forward(std::span<T> out, std::span<const T> in);                                      \
  template <class T>                                                                               \
  void gelu_backward(std::span<T> din, std::span<const T> in, std::span<const T> dout);            \
  /* att holds post-softmax weights [B, H, T, T]; entries above the diagonal are zero. */          \
  template <class T>                                                                               \
  void attention_forward(std::span<T> out, std::span<T> att, std::span<const T> qkv,               \
                         const AttentionShape& shape);                                             \
  template <class T>                                                                               \
  void attention_backward(std::span<T> dqkv, std::span<const T> dout, std::span<const T> qkv,      \
                          std::span<const T> att, const AttentionShape& shape);

namespace serial {
MVGPT_DECLARE_KERNELS
}  // namespace serial

namespace parallel {
MVGPT_DECLARE_KERNELS
/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
}  // namespace parallel

#undef MVGPT_DECLARE_KERNELS

}  // namespace mvgpt::kernels
