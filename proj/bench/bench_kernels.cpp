#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dlh/kernels.hpp"

namespace k = dlh::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_vec(static_cast<std::size_t>(n) * n, 1), b = random_vec(static_cast<std::size_t>(n) * n, 2);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm(false, false, n, n, n, a, b, c, false);
    else
      k::reference::gemm(false, false, n, n, n, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

// Encoder-sized stride-2 convolution: batch 8, 32 -> 64 channels, 8x8 input.
k::ConvShape encoder_shape(int batch) {
  k::ConvShape s;
  s.batch = batch;
  s.in_channels = 32;
  s.out_channels = 64;
  s.in_h = s.in_w = 8;
  return s;
}

template <bool Parallel>
void BM_Conv(benchmark::State& state) {
  const k::ConvShape s = encoder_shape(static_cast<int>(state.range(0)));
  const auto in = random_vec(static_cast<std::size_t>(s.batch) * s.in_channels * s.in_h * s.in_w, 3);
  const auto w = random_vec(static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel * s.kernel, 4);
  const auto bias = random_vec(static_cast<std::size_t>(s.out_channels), 5);
  std::vector<double> out(static_cast<std::size_t>(s.batch) * s.out_channels * s.conv_out_h() * s.conv_out_w());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d(s, in, w, bias, out);
    else
      k::reference::conv2d(s, in, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Deconv(benchmark::State& state) {
  k::ConvShape s;
  s.batch = static_cast<int>(state.range(0));
  s.in_channels = 64;
  s.out_channels = 32;
  s.in_h = s.in_w = 4;
  const auto in = random_vec(static_cast<std::size_t>(s.batch) * s.in_channels * s.in_h * s.in_w, 6);
  const auto w = random_vec(static_cast<std::size_t>(s.in_channels) * s.out_channels * s.kernel * s.kernel, 7);
  const auto bias = random_vec(static_cast<std::size_t>(s.out_channels), 8);
  std::vector<double> out(static_cast<std::size_t>(s.batch) * s.out_channels * s.deconv_out_h() * s.deconv_out_w());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv_transpose2d(s, in, w, bias, out);
    else
      k::reference::conv_transpose2d(s, in, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv<true>)->Name("conv2d/parallel")->Arg(8)->Arg(160);
BENCHMARK(BM_Conv<false>)->Name("conv2d/serial")->Arg(8)->Arg(160);
BENCHMARK(BM_Deconv<true>)->Name("conv_transpose2d/parallel")->Arg(8)->Arg(160);
BENCHMARK(BM_Deconv<false>)->Name("conv_transpose2d/serial")->Arg(8)->Arg(160);

BENCHMARK_MAIN();
