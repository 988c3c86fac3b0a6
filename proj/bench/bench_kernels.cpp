#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mvgpt/kernels.hpp"
#include "mvgpt/loss.hpp"
#include "mvgpt/model.hpp"

using namespace mvgpt;

namespace {

std::vector<float> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_LinearForward(benchmark::State& state) {
  const std::size_t n = 2048, in = static_cast<std::size_t>(state.range(0)), out = 4 * in;
  const auto x = randn(n * in, 1), w = randn(in * out, 2), b = randn(out, 3);
  std::vector<float> y(n * out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::linear_forward<float>(y, x, w, b, n, in, out);
    } else {
      kernels::serial::linear_forward<float>(y, x, w, b, n, in, out);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * in * out, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_LinearBackward(benchmark::State& state) {
  const std::size_t n = 2048, in = static_cast<std::size_t>(state.range(0)), out = 4 * in;
  const auto x = randn(n * in, 1), w = randn(in * out, 2), dy = randn(n * out, 3);
  std::vector<float> dx(n * in), dw(in * out), db(out);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::linear_backward<float>(dx, dw, db, dy, x, w, n, in, out);
    } else {
      kernels::serial::linear_backward<float>(dx, dw, db, dy, x, w, n, in, out);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(4.0 * n * in * out, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const std::size_t T = static_cast<std::size_t>(state.range(0));
  const kernels::AttentionShape s{16, T, 64, 4};
  const auto qkv = randn(s.batch * T * 3 * s.channels, 4);
  std::vector<float> out(s.batch * T * s.channels), att(s.batch * s.heads * T * T);
  std::vector<float> dqkv(qkv.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::attention_forward<float>(out, att, qkv, s);
      kernels::parallel::attention_backward<float>(dqkv, out, qkv, att, s);
    } else {
      kernels::serial::attention_forward<float>(out, att, qkv, s);
      kernels::serial::attention_backward<float>(dqkv, out, qkv, att, s);
    }
    benchmark::DoNotOptimize(dqkv.data());
  }
}

// One optimizer-free training step: forward, fused loss, backward.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.d_e = static_cast<std::size_t>(state.range(0));
  cfg.n_layer = static_cast<std::size_t>(state.range(1));
  cfg.n_head = 4;
  cfg.context = 128;
  cfg.d_c = 2;
  Transformer<float> model(cfg, {true, true});
  model.init_params();
  const std::size_t rows = 16, L = cfg.context, N = rows * L;
  std::vector<ClassId> cls(N);
  std::vector<double> vals(N);
  std::vector<Token> targets(N);
  std::vector<std::uint8_t> mask(N, 1);
  for (std::size_t i = 0; i < N; ++i) {
    cls[i] = i % 2;
    vals[i] = 0.1 * static_cast<double>(i % 17);
    targets[i] = {(i + 1) % 2, 0.05};
  }
  Workspace<float> ws;
  std::vector<float> grads(model.num_params());
  for (auto _ : state) {
    model.forward({rows, L, cls, vals}, ws, true);
    head_loss(ws, targets, mask, {}, true);
    model.backward(ws, grads);
    benchmark::DoNotOptimize(grads.data());
  }
  state.counters["tokens/s"] = benchmark::Counter(static_cast<double>(N), benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(BM_LinearForward<false>)->Name("linear_forward/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_LinearForward<true>)->Name("linear_forward/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_LinearBackward<false>)->Name("linear_backward/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_LinearBackward<true>)->Name("linear_backward/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_Attention<false>)->Name("attention/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_Attention<true>)->Name("attention/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_TrainStep)->Name("train_step")->Args({64, 2})->Args({128, 4})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
