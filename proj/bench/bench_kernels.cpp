// Serial reference kernels against the OpenMP kernels on layer shapes of the
// 128x128 model. Thread count for the parallel side follows SEQSORT_THREADS.

#include <benchmark/benchmark.h>

#include "seqsort/nn/kernels.hpp"
#include "seqsort/nn/model.hpp"
#include "seqsort/nn/optim.hpp"
#include "seqsort/rng.hpp"

using namespace seqsort;
using namespace seqsort::nn;

namespace {

Tensor4<float> random_tensor(int n, int h, int w, int c, std::uint64_t seed) {
  Tensor4<float> t(n, h, w, c);
  Rng rng = make_rng(seed);
  for (auto& v : t.data) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return t;
}

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  std::vector<float> v(n);
  Rng rng = make_rng(seed);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -0.1, 0.1));
  return v;
}

// state.range(0): batch, (1): spatial size, (2): cin, (3): cout
template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const int n = state.range(0), s = state.range(1), cin = state.range(2), cout = state.range(3);
  const auto x = random_tensor(n, s, s, cin, 1);
  const auto w = random_vector(9 * cin * cout, 2);
  const auto b = random_vector(cout, 3);
  Tensor4<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv3x3_forward(x, w, b, cout, y);
    } else {
      ref::conv3x3_forward(x, w, b, cout, y);
    }
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * s * s * 9 * cin * cout);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const int n = state.range(0), s = state.range(1), cin = state.range(2), cout = state.range(3);
  const auto x = random_tensor(n, s, s, cin, 1);
  const auto w = random_vector(9 * cin * cout, 2);
  const auto dy = random_tensor(n, s, s, cout, 4);
  Tensor4<float> dx;
  std::vector<float> dw, db;
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv3x3_backward(x, w, dy, &dx, dw, db);
    } else {
      ref::conv3x3_backward(x, w, dy, &dx, dw, db);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * s * s * 9 * cin * cout * 2);
}

template <bool Parallel>
void BM_BatchNormTrain(benchmark::State& state) {
  const int n = state.range(0), s = state.range(1), c = state.range(2);
  const auto x = random_tensor(n, s, s, c, 5);
  const std::vector<float> gamma(c, 1.0f), beta(c, 0.0f);
  Tensor4<float> y;
  BatchNormCache<float> cache;
  for (auto _ : state) {
    if constexpr (Parallel) {
      batchnorm_forward_train(x, gamma, beta, 1e-5, y, cache);
    } else {
      ref::batchnorm_forward_train(x, gamma, beta, 1e-5, y, cache);
    }
    benchmark::DoNotOptimize(y.data.data());
  }
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const int n = state.range(0), k = state.range(1), m = state.range(2);
  const auto x = random_tensor(n, 1, 1, k, 6);
  const auto w = random_vector(static_cast<std::size_t>(k) * m, 7);
  const auto b = random_vector(m, 8);
  Tensor4<float> y;
  for (auto _ : state) {
    if constexpr (Parallel) {
      dense_forward(x, w, b, m, y);
    } else {
      ref::dense_forward(x, w, b, m, y);
    }
    benchmark::DoNotOptimize(y.data.data());
  }
}

template <bool Parallel>
void BM_ModelTrainStep(benchmark::State& state) {
  Architecture arch;
  arch.input_size = state.range(1);
  auto params = he_normal_init<float>(arch, 11);
  const auto x = random_tensor(state.range(0), arch.input_size, arch.input_size, 3, 12);
  ForwardCache<float> cache;
  const Backend backend = Parallel ? Backend::Parallel : Backend::Reference;
  for (auto _ : state) {
    Rng rng = make_rng(13);
    forward(params, x, Mode::Train, &rng, cache, backend);
    Tensor4<float> ds(x.n, 1, 1, cache.seq_logits.c, 0.01f), dp(x.n, 1, 1, cache.plane_logits.c, 0.01f);
    auto res = backward(params, cache, ds, dp, BackwardOptions{}, backend);
    benchmark::DoNotOptimize(res.grads.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Args({8, 64, 32, 32})->Args({8, 16, 64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Args({8, 64, 32, 32})->Args({8, 16, 64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Args({8, 64, 32, 32})->Args({8, 16, 64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Args({8, 64, 32, 32})->Args({8, 16, 64, 128})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNormTrain<false>)->Args({8, 128, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchNormTrain<true>)->Args({8, 128, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DenseForward<false>)->Args({32, 8192, 256})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DenseForward<true>)->Args({32, 8192, 256})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelTrainStep<false>)->Args({4, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelTrainStep<true>)->Args({4, 64})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
