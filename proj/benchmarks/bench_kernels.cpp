#include <benchmark/benchmark.h>

#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/ops.hpp"
#include "glyphdiff/saq.hpp"

using namespace glyphdiff;

namespace {

Tensor rand_t(Shape shape, uint64_t seed) {
    RngStream rng(seed, "bench");
    return Tensor::randn(std::move(shape), rng);
}

void bm_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Tensor a = rand_t({n, n}, 1), b = rand_t({n, n}, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data());
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(128)->Arg(256)->Arg(512);

void bm_conv2d(benchmark::State& state) {
    Tensor x = rand_t({8, 64, 8, 24}, 3);
    Tensor w = rand_t({64, 64, 3, 3}, 4);
    Tensor b = rand_t({64}, 5);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1).data());
}
BENCHMARK(bm_conv2d);

void bm_quantize(benchmark::State& state) {
    ParamRegistry reg(7);
    StyleCodebook cb(reg, "cb", 128, 64);
    Tensor f = rand_t({16, 4, 12, 64}, 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(quantize(f, cb).indices.idx.data());
        cb.reset_usage();
    }
}
BENCHMARK(bm_quantize);

void bm_softmax(benchmark::State& state) {
    Tensor x = rand_t({32, 4, 192, 56}, 9);
    for (auto _ : state) benchmark::DoNotOptimize(softmax(x, -1).data());
}
BENCHMARK(bm_softmax);

void bm_denoiser_forward(benchmark::State& state) {
    ParamRegistry reg(11);
    Denoiser model(reg, "unet.");
    NoiseSchedule ns = NoiseSchedule::linear();
    NoGradGuard ng;
    Tensor z = rand_t({8, 4, 8, 24}, 12);
    ConditioningContext ctx;
    ctx.style_seq = rand_t({8, 48, 128}, 13);
    ctx.content = rand_t({8, 5, 128}, 14);
    ctx.content_mask = Tensor::full({8, 5}, 1.0f);
    ctx.null_style.assign(8, false);
    ctx.null_content.assign(8, false);
    IndexArray t = IndexArray::from({8}, {0, 100, 200, 300, 400, 500, 600, 700});
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(z, t, ctx).eps_hat.data());
        active_tape().clear();
    }
}
BENCHMARK(bm_denoiser_forward);

}  // namespace

BENCHMARK_MAIN();
