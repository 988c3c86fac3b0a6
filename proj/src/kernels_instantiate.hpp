#pragma once

// Explicit float/double instantiations shared by both kernel flavours.
#define MVGPT_INSTANTIATE(T)                                                                      \
  template void linear_forward<T>(std::span<T>, std::span<const T>, std::span<const T>,           \
                                  std::span<const T>, std::size_t, std::size_t, std::size_t);     \
  template void linear_backward<T>(std::span<T>, std::span<T>, std::span<T>, std::span<const T>,  \
                                   std::span<const T>, std::span<const T>, std::size_t,           \
                                   std::size_t, std::size_t);                                     \
  template void layernorm_forward<T>(std::span<T>, std::span<T>, std::span<T>,                    \
                                     std::span<const T>, std::span<const T>, std::span<const T>,  \
                                     std::size_t, std::size_t);                                   \
  template void layernorm_backward<T>(std::span<T>, std::span<T>, std::span<T>,                   \
                                      std::span<const T>, std::span<const T>, std::span<const T>, \
                                      std::span<const T>, std::span<const T>, std::size_t,        \
                                      std::size_t);                                               \
  template void gelu_forward<T>(std::span<T>, std::span<const T>);                                \
  template void gelu_backward<T>(std::span<T>, std::span<const T>, std::span<const T>);           \
  template void attention_forward<T>(std::span<T>, std::span<T>, std::span<const T>,              \
                                     const AttentionShape&);                                      \
  template void attention_backward<T>(std::span<T>, std::span<const T>, std::span<const T>,       \
                                      std::span<const T>, const AttentionShape&);
