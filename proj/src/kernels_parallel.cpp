#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernels_instantiate.hpp"
#include "mvgpt/kernels.hpp"

namespace mvgpt::kernels::parallel {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

using Index = std::ptrdiff_t;

// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::size_t kParallelWork = 1 << 15;

template <class T>
constexpr T kGeluScale = static_cast<T>(0.7978845608028654);

// Clamped 13/6 rational fit of tanh, accurate to a few ulp in float. It has no
// libm call, so the surrounding loops vectorize.
#pragma omp declare simd notinbranch
inline float fast_tanh(float x) {
  const float c = x > 7.90531110763549805f ? 7.90531110763549805f
                  : (x < -7.90531110763549805f ? -7.90531110763549805f : x);
  const float x2 = c * c;
  float p = -2.76076847742355e-16f;
  p = p * x2 + 2.00018790482477e-13f;
  p = p * x2 - 8.60467152213735e-11f;
  p = p * x2 + 5.12229709037114e-08f;
  p = p * x2 + 1.48572235717979e-05f;
  p = p * x2 + 6.37261928875436e-04f;
  p = p * x2 + 4.89352455891786e-03f;
  float q = 1.19825839466702e-06f;
  q = q * x2 + 1.18534705686654e-04f;
  q = q * x2 + 2.26843463243900e-03f;
  q = q * x2 + 4.89352518554385e-03f;
  const float r = c * p / q;
  return std::abs(x) < 0.0004f ? x : r;
}

#pragma omp declare simd notinbranch
inline double fast_tanh(double x) { return std::tanh(x); }

// exp for arguments in [-87, 88]: Cody-Waite reduction by ln 2, a degree-6
// polynomial, and the power of two assembled in the exponent bits.
#pragma omp declare simd notinbranch
inline float fast_exp(float x) {
  const float c = x > 88.3f ? 88.3f : (x < -87.3f ? -87.3f : x);
  const float n = std::floor(c * 1.44269504088896341f + 0.5f);
  const float r = c - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float e = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return e * std::bit_cast<float>(bits);
}

#pragma omp declare simd notinbranch
inline double fast_exp(double x) { return std::exp(x); }

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
inline void axpy(T* y, T a, const T* x, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

template <class T>
void linear_forward(std::span<T> out, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::size_t n, std::size_t in_dim,
                    std::size_t out_dim) {
  constexpr std::size_t kRows = 4;
  const Index blocks = static_cast<Index>((n + kRows - 1) / kRows);
  const bool par = n * in_dim * out_dim > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRows;
    const std::size_t rows = std::min(kRows, n - r0);
    for (std::size_t r = r0; r < r0 + rows; ++r) {
      T* y = out.data() + r * out_dim;
      if (bias.empty()) {
        std::fill(y, y + out_dim, T(0));
      } else {
        std::copy(bias.begin(), bias.end(), y);
      }
    }
    if (rows == kRows) {
      T* y0 = out.data() + r0 * out_dim;
      T* y1 = y0 + out_dim;
      T* y2 = y1 + out_dim;
      T* y3 = y2 + out_dim;
      const T* x0 = in.data() + r0 * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        const T* w = weight.data() + i * out_dim;
        const T a0 = x0[i], a1 = x0[in_dim + i], a2 = x0[2 * in_dim + i], a3 = x0[3 * in_dim + i];
#pragma omp simd
        for (std::size_t o = 0; o < out_dim; ++o) {
          const T wo = w[o];
          y0[o] += a0 * wo;
          y1[o] += a1 * wo;
          y2[o] += a2 * wo;
          y3[o] += a3 * wo;
        }
      }
    } else {
      for (std::size_t r = r0; r < r0 + rows; ++r) {
        T* y = out.data() + r * out_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
          axpy(y, in[r * in_dim + i], weight.data() + i * out_dim, out_dim);
        }
      }
    }
  }
}

template <class T>
void linear_backward(std::span<T> din, std::span<T> dweight, std::span<T> dbias,
                     std::span<const T> dout, std::span<const T> in, std::span<const T> weight,
                     std::size_t n, std::size_t in_dim, std::size_t out_dim) {
  const bool par = n * in_dim * out_dim > kParallelWork;
  if (!din.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index r = 0; r < static_cast<Index>(n); ++r) {
      const T* g = dout.data() + static_cast<std::size_t>(r) * out_dim;
      T* dx = din.data() + static_cast<std::size_t>(r) * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) dx[i] += dot(g, weight.data() + i * out_dim, out_dim);
    }
  }

  // Each thread owns a block of dweight rows and streams dout once per block.
  constexpr std::size_t kBlock = 8;
  const Index blocks = static_cast<Index>((in_dim + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(static) if (par)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kBlock;
    const std::size_t i1 = std::min(in_dim, i0 + kBlock);
    for (std::size_t r = 0; r < n; ++r) {
      const T* g = dout.data() + r * out_dim;
      const T* x = in.data() + r * in_dim;
      for (std::size_t i = i0; i < i1; ++i) axpy(dweight.data() + i * out_dim, x[i], g, out_dim);
    }
  }

  if (!dbias.empty()) {
    for (std::size_t r = 0; r < n; ++r) axpy(dbias.data(), T(1), dout.data() + r * out_dim, out_dim);
  }
}

template <class T>
void layernorm_forward(std::span<T> out, std::span<T> mean, std::span<T> rstd,
                       std::span<const T> in, std::span<const T> gamma, std::span<const T> beta,
                       std::size_t n, std::size_t c) {
  constexpr T eps = T(1e-5);
  const bool par = n * c > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index r = 0; r < static_cast<Index>(n); ++r) {
    const T* x = in.data() + static_cast<std::size_t>(r) * c;
    T* y = out.data() + static_cast<std::size_t>(r) * c;
    T m = 0;
#pragma omp simd reduction(+ : m)
    for (std::size_t i = 0; i < c; ++i) m += x[i];
    m /= static_cast<T>(c);
    T var = 0;
#pragma omp simd reduction(+ : var)
    for (std::size_t i = 0; i < c; ++i) var += (x[i] - m) * (x[i] - m);
    var /= static_cast<T>(c);
    const T s = T(1) / std::sqrt(var + eps);
#pragma omp simd
    for (std::size_t i = 0; i < c; ++i) y[i] = (x[i] - m) * s * gamma[i] + beta[i];
    mean[static_cast<std::size_t>(r)] = m;
    rstd[static_cast<std::size_t>(r)] = s;
  }
}

template <class T>
void layernorm_backward(std::span<T> din, std::span<T> dgamma, std::span<T> dbeta,
                        std::span<const T> dout, std::span<const T> in, std::span<const T> gamma,
                        std::span<const T> mean, std::span<const T> rstd, std::size_t n,
                        std::size_t c) {
  const bool par = n * c > kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index rr = 0; rr < static_cast<Index>(n); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const T* x = in.data() + r * c;
    const T* g = dout.data() + r * c;
    T* dx = din.data() + r * c;
    const T m = mean[r], s = rstd[r];
    T dnorm_mean = 0;
    T dnorm_norm_mean = 0;
#pragma omp simd reduction(+ : dnorm_mean, dnorm_norm_mean)
    for (std::size_t i = 0; i < c; ++i) {
      const T dnorm = gamma[i] * g[i];
      dnorm_mean += dnorm;
      dnorm_norm_mean += dnorm * (x[i] - m) * s;
    }
    dnorm_mean /= static_cast<T>(c);
    dnorm_norm_mean /= static_cast<T>(c);
#pragma omp simd
    for (std::size_t i = 0; i < c; ++i) {
      const T norm = (x[i] - m) * s;
      dx[i] += (gamma[i] * g[i] - dnorm_mean - norm * dnorm_norm_mean) * s;
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = in.data() + r * c;
    const T* g = dout.data() + r * c;
    const T m = mean[r], s = rstd[r];
#pragma omp simd
    for (std::size_t i = 0; i < c; ++i) {
      dbeta[i] += g[i];
      dgamma[i] += (x[i] - m) * s * g[i];
    }
  }
}

template <class T>
void gelu_forward(std::span<T> out, std::span<const T> in) {
  const Index n = static_cast<Index>(in.size());
  const T* x = in.data();
  T* y = out.data();
#pragma omp parallel for simd schedule(static) if (in.size() > kParallelWork)
  for (Index i = 0; i < n; ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + fast_tanh(kGeluScale<T> * (v + T(0.044715) * v * v * v)));
  }
}

template <class T>
void gelu_backward(std::span<T> din, std::span<const T> in, std::span<const T> dout) {
  const Index n = static_cast<Index>(in.size());
  const T* x = in.data();
  const T* dy = dout.data();
  T* dx = din.data();
#pragma omp parallel for simd schedule(static) if (in.size() > kParallelWork)
  for (Index i = 0; i < n; ++i) {
    const T v = x[i];
    const T th = fast_tanh(kGeluScale<T> * (v + T(0.044715) * v * v * v));
    const T local = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kGeluScale<T> *
                                               (T(1) + T(3 * 0.044715) * v * v);
    dx[i] += local * dy[i];
  }
}

// Head-major copy of one (batch, head) slice: out[d * L + t] = src row t, column d.
template <class T>
void transpose_head(T* out, const T* qkv, std::size_t row_stride, std::size_t L, std::size_t hs) {
  for (std::size_t t = 0; t < L; ++t) {
    const T* src = qkv + t * row_stride;
    for (std::size_t d = 0; d < hs; ++d) out[d * L + t] = src[d];
  }
}

template <class T>
void attention_forward(std::span<T> out, std::span<T> att, std::span<const T> qkv,
                       const AttentionShape& s) {
  const std::size_t C = s.channels, L = s.length, H = s.heads, hs = C / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hs));
  const bool par = s.batch * H * L * L * hs > kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<T> kt(hs * L);
#pragma omp for collapse(2) schedule(static)
    for (Index bi = 0; bi < static_cast<Index>(s.batch); ++bi) {
      for (Index hi = 0; hi < static_cast<Index>(H); ++hi) {
        const auto b = static_cast<std::size_t>(bi), h = static_cast<std::size_t>(hi);
        const T* base = qkv.data() + b * L * 3 * C;
        transpose_head(kt.data(), base + C + h * hs, 3 * C, L, hs);
        for (std::size_t t = 0; t < L; ++t) {
          const T* q = base + t * 3 * C + h * hs;
          T* a = att.data() + ((b * H + h) * L + t) * L;
          const auto len = static_cast<Index>(t + 1);
          std::fill(a, a + L, T(0));
          for (std::size_t d = 0; d < hs; ++d) {
            const T qd = q[d] * scale;
            const T* k = kt.data() + d * L;
#pragma omp simd
            for (Index t2 = 0; t2 < len; ++t2) a[t2] += qd * k[t2];
          }
          T maxv = a[0];
          for (Index t2 = 1; t2 < len; ++t2) maxv = std::max(maxv, a[t2]);
          T sum = 0;
#pragma omp simd reduction(+ : sum)
          for (Index t2 = 0; t2 < len; ++t2) {
            a[t2] = fast_exp(a[t2] - maxv);
            sum += a[t2];
          }
          const T inv = T(1) / sum;
#pragma omp simd
          for (Index t2 = 0; t2 < len; ++t2) a[t2] *= inv;
          T* o = out.data() + (b * L + t) * C + h * hs;
          std::fill(o, o + hs, T(0));
          for (std::size_t t2 = 0; t2 <= t; ++t2) {
            axpy(o, a[t2], base + t2 * 3 * C + 2 * C + h * hs, hs);
          }
        }
      }
    }
  }
}

template <class T>
void attention_backward(std::span<T> dqkv, std::span<const T> dout, std::span<const T> qkv,
                        std::span<const T> att, const AttentionShape& s) {
  const std::size_t C = s.channels, L = s.length, H = s.heads, hs = C / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hs));
  const bool par = s.batch * H * L * L * hs > kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<T> datt(L), vt(hs * L);
#pragma omp for collapse(2) schedule(static)
    for (Index bi = 0; bi < static_cast<Index>(s.batch); ++bi) {
      for (Index hi = 0; hi < static_cast<Index>(H); ++hi) {
        const auto b = static_cast<std::size_t>(bi), h = static_cast<std::size_t>(hi);
        const T* base = qkv.data() + b * L * 3 * C;
        T* dbase = dqkv.data() + b * L * 3 * C;
        transpose_head(vt.data(), base + 2 * C + h * hs, 3 * C, L, hs);
        for (std::size_t t = 0; t < L; ++t) {
          const T* a = att.data() + ((b * H + h) * L + t) * L;
          const T* g = dout.data() + (b * L + t) * C + h * hs;
          const T* q = base + t * 3 * C + h * hs;
          T* dq = dbase + t * 3 * C + h * hs;
          const auto len = static_cast<Index>(t + 1);
          std::fill(datt.begin(), datt.begin() + len, T(0));
          for (std::size_t d = 0; d < hs; ++d) {
            const T gd = g[d];
            const T* v = vt.data() + d * L;
            T* da = datt.data();
#pragma omp simd
            for (Index t2 = 0; t2 < len; ++t2) da[t2] += gd * v[t2];
          }
          T weighted = 0;
#pragma omp simd reduction(+ : weighted)
          for (Index t2 = 0; t2 < len; ++t2) weighted += a[t2] * datt[t2];
          for (std::size_t t2 = 0; t2 <= t; ++t2) {
            const std::size_t row = t2 * 3 * C + h * hs;
            axpy(dbase + row + 2 * C, a[t2], g, hs);
            const T dpre = a[t2] * (datt[t2] - weighted) * scale;
            axpy(dq, dpre, base + row + C, hs);
            axpy(dbase + row + C, dpre, q, hs);
          }
        }
      }
    }
  }
}

MVGPT_INSTANTIATE(float)
MVGPT_INSTANTIATE(double)

}  // namespace mvgpt::kernels::parallel
