#include <benchmark/benchmark.h>

#include <random>

#include "rifcn/model.hpp"
#include "rifcn/tensor_ops.hpp"

using namespace rifcn;

namespace {

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
    Tensor4<T> t(n, c, h, w);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.data()[i] = static_cast<T>(static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
    }
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    auto x = random_tensor<float>(1, ch, hw, hw, 1);
    auto k = make_conv_kernel<float>(ch, ch, 3, 1, 1);
    std::mt19937_64 rng(2);
    for (std::size_t i = 0; i < k.weights.size(); ++i) {
        k.weights.data()[i] = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5);
    }
    for (auto _ : state) {
        auto y = conv2d(x, k);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ch) * ch * 9 * hw * hw);
}

void BM_Conv2dBackward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    auto x = random_tensor<float>(1, ch, hw, hw, 1);
    auto k = make_conv_kernel<float>(ch, ch, 3, 1, 1);
    auto g = random_tensor<float>(1, ch, hw, hw, 3);
    for (auto _ : state) {
        auto b = conv2d_backward(x, k, g);
        benchmark::DoNotOptimize(b.grad_x.data());
    }
}

void BM_Deconv2dForward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const int hw = static_cast<int>(state.range(1));
    auto x = random_tensor<float>(1, ch, hw, hw, 1);
    auto k = make_deconv_kernel<float>(ch, ch / 2 > 0 ? ch / 2 : 1, 4, 2, 1);
    for (auto _ : state) {
        auto y = deconv2d(x, k);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_Maxpool(benchmark::State& state) {
    const int hw = static_cast<int>(state.range(0));
    auto x = random_tensor<float>(1, 64, hw, hw, 1);
    for (auto _ : state) {
        auto y = maxpool2d(x);
        benchmark::DoNotOptimize(y.y.data());
    }
}

void BM_PredictTile(benchmark::State& state) {
    ForwardStreamSpec spec;
    spec = spec.scaled(0.125); // widths 8..128
    spec.in_channels = 3;
    auto model = build_model<float>(spec, 3, 11);
    auto x = random_tensor<float>(1, 3, 64, 64, 5);
    for (auto _ : state) {
        auto probs = predict(model, x);
        benchmark::DoNotOptimize(probs.data());
    }
}

} // namespace

BENCHMARK(BM_Conv2dForward)->Args({16, 64})->Args({64, 64})->Args({64, 128});
BENCHMARK(BM_Conv2dBackward)->Args({16, 64})->Args({64, 64});
BENCHMARK(BM_Deconv2dForward)->Args({16, 32})->Args({64, 32});
BENCHMARK(BM_Maxpool)->Arg(64)->Arg(256);
BENCHMARK(BM_PredictTile);

BENCHMARK_MAIN();
