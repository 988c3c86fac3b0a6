#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mvgpt/kernels.hpp"

using namespace mvgpt::kernels;

namespace {

template <class T>
std::vector<T> randn(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(rng));
  return v;
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <class T>
std::span<const T> c(const std::vector<T>& v) {
  return {v.data(), v.size()};
}

template <class T>
constexpr double tol() {
  return std::is_same_v<T, float> ? 2e-4 : 1e-11;
}

}  // namespace

template <class T>
class KernelTest : public ::testing::Test {};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(KernelTest, Scalars);

TYPED_TEST(KernelTest, LinearMatchesSerial) {
  using T = TypeParam;
  std::mt19937_64 rng(1);
  // Odd row count exercises the tail of the row-blocked path.
  const std::size_t n = 37, in = 24, out = 40;
  auto x = randn<T>(n * in, rng), w = randn<T>(in * out, rng), b = randn<T>(out, rng);
  std::vector<T> y_s(n * out), y_p(n * out);
  serial::linear_forward<T>(y_s, c(x), c(w), c(b), n, in, out);
  parallel::linear_forward<T>(y_p, c(x), c(w), c(b), n, in, out);
  EXPECT_LT(max_abs_diff(y_s, y_p), tol<T>());

  auto dy = randn<T>(n * out, rng);
  std::vector<T> dx_s(n * in, T(0.5)), dw_s(in * out, T(0.25)), db_s(out, T(-1));
  auto dx_p = dx_s, dw_p = dw_s, db_p = db_s;
  serial::linear_backward<T>(dx_s, dw_s, db_s, c(dy), c(x), c(w), n, in, out);
  parallel::linear_backward<T>(dx_p, dw_p, db_p, c(dy), c(x), c(w), n, in, out);
  EXPECT_LT(max_abs_diff(dx_s, dx_p), tol<T>());
  EXPECT_LT(max_abs_diff(dw_s, dw_p), tol<T>() * 10);
  EXPECT_LT(max_abs_diff(db_s, db_p), tol<T>() * 10);
}

TYPED_TEST(KernelTest, LinearWithoutBias) {
  using T = TypeParam;
  std::mt19937_64 rng(2);
  const std::size_t n = 8, in = 3, out = 5;
  auto x = randn<T>(n * in, rng), w = randn<T>(in * out, rng);
  std::vector<T> y(n * out);
  parallel::linear_forward<T>(y, c(x), c(w), std::span<const T>{}, n, in, out);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double expected = 0;
      for (std::size_t i = 0; i < in; ++i) expected += double(x[r * in + i]) * double(w[i * out + o]);
      EXPECT_NEAR(y[r * out + o], expected, tol<T>());
    }
  }
}

TYPED_TEST(KernelTest, LayerNormMatchesSerial) {
  using T = TypeParam;
  std::mt19937_64 rng(3);
  const std::size_t n = 19, ch = 32;
  auto x = randn<T>(n * ch, rng, 3.0), g = randn<T>(ch, rng), b = randn<T>(ch, rng);
  std::vector<T> y_s(n * ch), y_p(n * ch), m_s(n), m_p(n), r_s(n), r_p(n);
  serial::layernorm_forward<T>(y_s, m_s, r_s, c(x), c(g), c(b), n, ch);
  parallel::layernorm_forward<T>(y_p, m_p, r_p, c(x), c(g), c(b), n, ch);
  EXPECT_LT(max_abs_diff(y_s, y_p), tol<T>());

  auto dy = randn<T>(n * ch, rng);
  std::vector<T> dx_s(n * ch), dg_s(ch), db_s(ch);
  auto dx_p = dx_s, dg_p = dg_s, db_p = db_s;
  serial::layernorm_backward<T>(dx_s, dg_s, db_s, c(dy), c(x), c(g), c(m_s), c(r_s), n, ch);
  parallel::layernorm_backward<T>(dx_p, dg_p, db_p, c(dy), c(x), c(g), c(m_p), c(r_p), n, ch);
  EXPECT_LT(max_abs_diff(dx_s, dx_p), tol<T>());
  EXPECT_LT(max_abs_diff(dg_s, dg_p), tol<T>() * 10);
  EXPECT_LT(max_abs_diff(db_s, db_p), tol<T>() * 10);
}

TYPED_TEST(KernelTest, GeluMatchesSerialAndDerivative) {
  using T = TypeParam;
  std::mt19937_64 rng(4);
  auto x = randn<T>(257, rng, 2.0);
  std::vector<T> y_s(x.size()), y_p(x.size());
  serial::gelu_forward<T>(y_s, c(x));
  parallel::gelu_forward<T>(y_p, c(x));
  EXPECT_LT(max_abs_diff(y_s, y_p), tol<T>());

  std::vector<T> ones(x.size(), T(1)), dx(x.size(), T(0));
  serial::gelu_backward<T>(dx, c(x), c(ones));
  if constexpr (std::is_same_v<T, double>) {
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> p{x[i] + h}, m{x[i] - h}, yp(1), ym(1);
      serial::gelu_forward<double>(yp, c(p));
      serial::gelu_forward<double>(ym, c(m));
      EXPECT_NEAR(dx[i], (yp[0] - ym[0]) / (2 * h), 1e-8);
    }
  }
}

TYPED_TEST(KernelTest, AttentionMatchesSerialAndIsCausal) {
  using T = TypeParam;
  std::mt19937_64 rng(5);
  const AttentionShape s{3, 11, 16, 4};
  const std::size_t N = s.batch * s.length;
  auto qkv = randn<T>(N * 3 * s.channels, rng);
  std::vector<T> out_s(N * s.channels), out_p(N * s.channels);
  std::vector<T> att_s(s.batch * s.heads * s.length * s.length), att_p(att_s.size());
  serial::attention_forward<T>(out_s, att_s, c(qkv), s);
  parallel::attention_forward<T>(out_p, att_p, c(qkv), s);
  EXPECT_LT(max_abs_diff(out_s, out_p), tol<T>());
  EXPECT_LT(max_abs_diff(att_s, att_p), tol<T>());
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh) {
    for (std::size_t t = 0; t < s.length; ++t) {
      double sum = 0;
      for (std::size_t t2 = 0; t2 < s.length; ++t2) {
        const T a = att_p[(bh * s.length + t) * s.length + t2];
        if (t2 > t) EXPECT_EQ(a, T(0));
        sum += a;
      }
      EXPECT_NEAR(sum, 1.0, tol<T>());
    }
  }

  auto dout = randn<T>(N * s.channels, rng);
  std::vector<T> dqkv_s(qkv.size()), dqkv_p(qkv.size());
  serial::attention_backward<T>(dqkv_s, c(dout), c(qkv), c(att_s), s);
  parallel::attention_backward<T>(dqkv_p, c(dout), c(qkv), c(att_p), s);
  EXPECT_LT(max_abs_diff(dqkv_s, dqkv_p), tol<T>() * 10);
}

TEST(KernelFiniteDifference, AttentionBackward) {
  std::mt19937_64 rng(6);
  const AttentionShape s{2, 5, 8, 2};
  const std::size_t N = s.batch * s.length;
  auto qkv = randn<double>(N * 3 * s.channels, rng);
  auto w = randn<double>(N * s.channels, rng);  // loss = <w, out>
  std::vector<double> out(N * s.channels), att(s.batch * s.heads * s.length * s.length);
  auto loss = [&](const std::vector<double>& in) {
    serial::attention_forward<double>(out, att, c(in), s);
    double l = 0;
    for (std::size_t i = 0; i < out.size(); ++i) l += w[i] * out[i];
    return l;
  };
  loss(qkv);
  std::vector<double> grad(qkv.size());
  serial::attention_backward<double>(grad, c(w), c(qkv), c(att), s);
  const double h = 1e-6;
  for (std::size_t i = 0; i < qkv.size(); ++i) {
    auto p = qkv, m = qkv;
    p[i] += h;
    m[i] -= h;
    EXPECT_NEAR(grad[i], (loss(p) - loss(m)) / (2 * h), 1e-7) << "index " << i;
  }
}

TEST(KernelDeterminism, ParallelRunsAreBitIdentical) {
  std::mt19937_64 rng(7);
  const std::size_t n = 300, in = 64, out = 192;
  auto x = randn<float>(n * in, rng), w = randn<float>(in * out, rng), dy = randn<float>(n * out, rng);
  std::vector<float> dw1(in * out), dw2(in * out), dx1(n * in), dx2(n * in);
  parallel::linear_backward<float>(dx1, dw1, std::span<float>{}, c(dy), c(x), c(w), n, in, out);
  parallel::linear_backward<float>(dx2, dw2, std::span<float>{}, c(dy), c(x), c(w), n, in, out);
  EXPECT_EQ(dw1, dw2);
  EXPECT_EQ(dx1, dx2);
}
