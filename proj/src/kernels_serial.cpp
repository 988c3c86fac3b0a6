#include <cmath>
#include <vector>

#include "kernels_instantiate.hpp"
#include "mvgpt/kernels.hpp"

namespace mvgpt::kernels::serial {

template <class T>
void linear_forward(std::span<T> out, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::size_t n, std::size_t in_dim,
                    std::size_t out_dim) {
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      T acc = bias.empty() ? T(0) : bias[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += in[r * in_dim + i] * weight[i * out_dim + o];
      out[r * out_dim + o] = acc;
    }
  }
}

template <class T>
void linear_backward(std::span<T> din, std::span<T> dweight, std::span<T> dbias,
                     std::span<const T> dout, std::span<const T> in, std::span<const T> weight,
                     std::size_t n, std::size_t in_dim, std::size_t out_dim) {
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T g = dout[r * out_dim + o];
      if (!dbias.empty()) dbias[o] += g;
      for (std::size_t i = 0; i < in_dim; ++i) {
        if (!din.empty()) din[r * in_dim + i] += g * weight[i * out_dim + o];
        dweight[i * out_dim + o] += g * in[r * in_dim + i];
      }
    }
  }
}

template <class T>
void layernorm_forward(std::span<T> out, std::span<T> mean, std::span<T> rstd,
                       std::span<const T> in, std::span<const T> gamma, std::span<const T> beta,
                       std::size_t n, std::size_t c) {
  constexpr T eps = T(1e-5);
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = in.data() + r * c;
    T m = 0;
    for (std::size_t i = 0; i < c; ++i) m += x[i];
    m /= static_cast<T>(c);
    T var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (x[i] - m) * (x[i] - m);
    var /= static_cast<T>(c);
    const T s = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) out[r * c + i] = (x[i] - m) * s * gamma[i] + beta[i];
    mean[r] = m;
    rstd[r] = s;
  }
}

template <class T>
void layernorm_backward(std::span<T> din, std::span<T> dgamma, std::span<T> dbeta,
                        std::span<const T> dout, std::span<const T> in, std::span<const T> gamma,
                        std::span<const T> mean, std::span<const T> rstd, std::size_t n,
                        std::size_t c) {
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = in.data() + r * c;
    const T* g = dout.data() + r * c;
    T dnorm_mean = 0;
    T dnorm_norm_mean = 0;
    for (std::size_t i = 0; i < c; ++i) {
      const T norm = (x[i] - mean[r]) * rstd[r];
      const T dnorm = gamma[i] * g[i];
      dnorm_mean += dnorm;
      dnorm_norm_mean += dnorm * norm;
    }
    dnorm_mean /= static_cast<T>(c);
    dnorm_norm_mean /= static_cast<T>(c);
    for (std::size_t i = 0; i < c; ++i) {
      const T norm = (x[i] - mean[r]) * rstd[r];
      const T dnorm = gamma[i] * g[i];
      dbeta[i] += g[i];
      dgamma[i] += norm * g[i];
      din[r * c + i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd[r];
    }
  }
}

namespace {
template <class T>
constexpr T kGeluScale = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
}

template <class T>
void gelu_forward(std::span<T> out, std::span<const T> in) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T x = in[i];
    out[i] = T(0.5) * x * (T(1) + std::tanh(kGeluScale<T> * (x + T(0.044715) * x * x * x)));
  }
}

template <class T>
void gelu_backward(std::span<T> din, std::span<const T> in, std::span<const T> dout) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T x = in[i];
    const T u = kGeluScale<T> * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T sech2 = T(1) - th * th;
    const T local = T(0.5) * (T(1) + th) +
                    T(0.5) * x * sech2 * kGeluScale<T> * (T(1) + T(3 * 0.044715) * x * x);
    din[i] += local * dout[i];
  }
}

template <class T>
void attention_forward(std::span<T> out, std::span<T> att, std::span<const T> qkv,
                       const AttentionShape& s) {
  const std::size_t C = s.channels, T_ = s.length, H = s.heads, hs = C / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hs));
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T_; ++t) {
        const T* q = qkv.data() + (b * T_ + t) * 3 * C + h * hs;
        T* a = att.data() + ((b * H + h) * T_ + t) * T_;
        T maxv = -INFINITY;
        for (std::size_t t2 = 0; t2 <= t; ++t2) {
          const T* k = qkv.data() + (b * T_ + t2) * 3 * C + C + h * hs;
          T dot = 0;
          for (std::size_t i = 0; i < hs; ++i) dot += q[i] * k[i];
          a[t2] = dot * scale;
          if (a[t2] > maxv) maxv = a[t2];
        }
        T sum = 0;
        for (std::size_t t2 = 0; t2 <= t; ++t2) {
          a[t2] = std::exp(a[t2] - maxv);
          sum += a[t2];
        }
        for (std::size_t t2 = 0; t2 <= t; ++t2) a[t2] /= sum;
        for (std::size_t t2 = t + 1; t2 < T_; ++t2) a[t2] = 0;
        T* o = out.data() + (b * T_ + t) * C + h * hs;
        for (std::size_t i = 0; i < hs; ++i) o[i] = 0;
        for (std::size_t t2 = 0; t2 <= t; ++t2) {
          const T* v = qkv.data() + (b * T_ + t2) * 3 * C + 2 * C + h * hs;
          for (std::size_t i = 0; i < hs; ++i) o[i] += a[t2] * v[i];
        }
      }
    }
  }
}

template <class T>
void attention_backward(std::span<T> dqkv, std::span<const T> dout, std::span<const T> qkv,
                        std::span<const T> att, const AttentionShape& s) {
  const std::size_t C = s.channels, T_ = s.length, H = s.heads, hs = C / H;
  const T scale = T(1) / std::sqrt(static_cast<T>(hs));
  std::vector<T> datt(T_);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T_; ++t) {
        const T* a = att.data() + ((b * H + h) * T_ + t) * T_;
        const T* g = dout.data() + (b * T_ + t) * C + h * hs;
        const T* q = qkv.data() + (b * T_ + t) * 3 * C + h * hs;
        T* dq = dqkv.data() + (b * T_ + t) * 3 * C + h * hs;
        T weighted = 0;
        for (std::size_t t2 = 0; t2 <= t; ++t2) {
          const T* v = qkv.data() + (b * T_ + t2) * 3 * C + 2 * C + h * hs;
          T* dv = dqkv.data() + (b * T_ + t2) * 3 * C + 2 * C + h * hs;
          T d = 0;
          for (std::size_t i = 0; i < hs; ++i) {
            d += g[i] * v[i];
            dv[i] += a[t2] * g[i];
          }
          datt[t2] = d;
          weighted += a[t2] * d;
        }
        for (std::size_t t2 = 0; t2 <= t; ++t2) {
          const T dpre = a[t2] * (datt[t2] - weighted) * scale;
          const T* k = qkv.data() + (b * T_ + t2) * 3 * C + C + h * hs;
          T* dk = dqkv.data() + (b * T_ + t2) * 3 * C + C + h * hs;
          for (std::size_t i = 0; i < hs; ++i) {
            dq[i] += dpre * k[i];
            dk[i] += dpre * q[i];
          }
        }
      }
    }
  }
}

MVGPT_INSTANTIATE(float)
MVGPT_INSTANTIATE(double)

}  // namespace mvgpt::kernels::serial
