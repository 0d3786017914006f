#include <benchmark/benchmark.h>

#include <vector>

#include "pyratten/attention.hpp"
#include "pyratten/kernels.hpp"
#include "pyratten/network.hpp"
#include "pyratten/ops.hpp"
#include "pyratten/random.hpp"

using namespace pyratten;

namespace {

std::vector<Real> random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(n);
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-1, 1));
  return v;
}

template <bool kReference>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_buffer(static_cast<std::size_t>(n) * n, 1);
  const auto b = random_buffer(static_cast<std::size_t>(n) * n, 2);
  std::vector<Real> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    if (kReference) {
      kernels::reference::gemm(false, false, n, n, n, 1, a.data(), n, b.data(), n, 0, c.data(), n);
    } else {
      kernels::gemm(false, false, n, n, n, 1, a.data(), n, b.data(), n, 0, c.data(), n);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

template <bool kReference>
void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), hw = 48;
  const kernels::ConvGeometry g{c, hw, hw, 3, 3, 1, 1, 1};
  const auto x = random_buffer(static_cast<std::size_t>(c) * hw * hw, 3);
  const auto w = random_buffer(static_cast<std::size_t>(c) * c * 9, 4);
  const std::vector<Real> bias(c, 0);
  Tensor xt(Shape{1, c, hw, hw}, x);
  const ConvSpec spec{Tensor(Shape{c, c, 3, 3}, w), Tensor(Shape{c, 1, 1, 1}), 1, 1, 1};
  std::vector<Real> y(static_cast<std::size_t>(c) * hw * hw);
  for (auto _ : state) {
    if (kReference) {
      kernels::reference::conv2d(x.data(), 1, g, w.data(), bias.data(), c, y.data());
      benchmark::DoNotOptimize(y.data());
    } else {
      benchmark::DoNotOptimize(conv2d(xt, spec));
    }
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * hw * hw);
}

template <bool kReference>
void BM_Softmax(benchmark::State& state) {
  const int axis = static_cast<int>(state.range(0)), inner = 576;
  const auto x = random_buffer(static_cast<std::size_t>(axis) * inner, 5);
  std::vector<Real> y(x.size());
  for (auto _ : state) {
    if (kReference) {
      kernels::reference::softmax(x.data(), 1, axis, inner, y.data());
    } else {
      kernels::softmax(x.data(), 1, axis, inner, y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(x.size()));
}

void BM_PyramidAttention(benchmark::State& state) {
  const int hw = static_cast<int>(state.range(0));
  PyramidAttentionConfig cfg;
  cfg.feature_channels = 16;
  cfg.embed_channels = 8;
  Rng rng(6);
  const AttentionParams p = init_attention_params(cfg, rng);
  const Tensor x = uniform_tensor(Shape{1, 16, hw, hw}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(pyramid_attention(x, cfg, p));
}

void BM_TrainingStep(benchmark::State& state) {
  NetworkConfig cfg;
  cfg.num_blocks = 4;
  cfg.feature_channels = 16;
  cfg.attention_positions = state.range(0) ? std::set<int>{2} : std::set<int>{};
  cfg.attention.feature_channels = 16;
  cfg.attention.embed_channels = 8;
  ParamStore store = init_params(cfg, 7);
  store.set_requires_grad(true);
  Rng rng(8);
  const Tensor x = uniform_tensor(Shape{4, 3, 24, 24}, 0, 1, rng);
  kernels::FlushDenormalsScope flush;
  for (auto _ : state) {
    store.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss(panet_forward(x, cfg, store), x));
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/blas")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3_48x48/im2col")->Arg(16)->Arg(64);
BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3_48x48/reference")->Arg(16)->Arg(64);
BENCHMARK(BM_Softmax<false>)->Name("softmax/parallel")->Arg(1024)->Arg(4096);
BENCHMARK(BM_Softmax<true>)->Name("softmax/reference")->Arg(1024)->Arg(4096);
BENCHMARK(BM_PyramidAttention)->Name("pyramid_attention_c16")->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainingStep)->Name("train_step_r4_c16_b4_p24/attention")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
