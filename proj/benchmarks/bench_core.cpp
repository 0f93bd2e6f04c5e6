// Microbenchmarks for the hot paths: tensor primitives, the masking
// pipeline, codec round trips, and whole denoiser steps.

#include <benchmark/benchmark.h>

#include <vector>

#include "posegen/codec.hpp"
#include "posegen/dit.hpp"
#include "posegen/kv_share.hpp"
#include "posegen/ops.hpp"
#include "posegen/rng.hpp"
#include "posegen/sampler.hpp"
#include "posegen/synth.hpp"
#include "posegen/tensor.hpp"

using namespace posegen;

namespace {

DitConfig bench_config() {
    DitConfig c;
    c.layers = 4;
    c.dim = 32;
    c.heads = 4;
    c.ffn_mult = 4;
    c.lora_rank = 4;
    c.lora_alpha = 4.0f;
    c.codec = CodecConfig{8, 4, 8};
    c.seed = 0xBE7C;
    return c;
}

ConditionBundle bench_bundle(const Model& m) {
    Rng rng(31);
    const int64_t c = 8, f = 5, h = 8, w = 8;
    return make_bundle(m, Tensor::gaussian({c, f, h, w}, rng),
                       Tensor::gaussian({4, f, h, w}, rng),
                       Tensor::gaussian({c, f, h, w}, rng),
                       Tensor::gaussian({c, f, h, w}, rng),
                       Tensor::gaussian({c, 1, h, w}, rng),
                       {0, 1, 2, 3, 4, 5, 6, 7}, {2});
}

void BM_Matmul(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(1);
    const int64_t n = state.range(0);
    Tensor a = Tensor::gaussian({n, n}, rng);
    Tensor b = Tensor::gaussian({n, n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_SoftmaxRows(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(2);
    Tensor x = Tensor::gaussian({state.range(0), state.range(0)}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x));
}
BENCHMARK(BM_SoftmaxRows)->Arg(96)->Arg(256);

void BM_RopeApply(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(3);
    const int64_t n = state.range(0);
    Tensor x = Tensor::gaussian({n, 24}, rng);
    std::vector<TokenPos> pos;
    for (int64_t i = 0; i < n; ++i)
        pos.push_back({int32_t(i / 16), int32_t((i / 4) % 4), int32_t(i % 4)});
    for (auto _ : state) benchmark::DoNotOptimize(rope_apply(x, pos));
}
BENCHMARK(BM_RopeApply)->Arg(96)->Arg(512);

void BM_Attention(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(4);
    const int64_t n = state.range(0), d = 32;
    Tensor q = Tensor::gaussian({n, d}, rng);
    Tensor k = Tensor::gaussian({n, d}, rng);
    Tensor v = Tensor::gaussian({n, d}, rng);
    const double scale = 1.0 / 5.656854;
    for (auto _ : state) {
        Tensor w = softmax_rows(mul_scalar(matmul(q, transpose2d(k)), scale));
        benchmark::DoNotOptimize(matmul(w, v));
    }
}
BENCHMARK(BM_Attention)->Arg(96)->Arg(256);

void BM_OtsuThreshold(benchmark::State& state) {
    Rng rng(5);
    std::vector<float> vals(static_cast<size_t>(state.range(0)));
    for (auto& v : vals) v = float(rng.normal());
    for (auto _ : state) benchmark::DoNotOptimize(otsu_threshold(vals));
}
BENCHMARK(BM_OtsuThreshold)->Arg(80)->Arg(4096);

void BM_SharedAttention(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(6);
    const int64_t n = 80, d = 32;
    Tensor q = Tensor::gaussian({n, d}, rng);
    Tensor k = Tensor::gaussian({n, d}, rng);
    Tensor v = Tensor::gaussian({n, d}, rng);
    std::vector<float> mask(n, 0.0f);
    for (int64_t i = 0; i < n; i += 3) mask[size_t(i)] = 1.0f;
    for (auto _ : state)
        benchmark::DoNotOptimize(shared_attention(q, k, v, mask, 4));
}
BENCHMARK(BM_SharedAttention);

void BM_Encode(benchmark::State& state) {
    Sample scene = generate_scene(random_scene_spec(7, 17, 64, 64));
    CodecConfig cc{8, 4, 8};
    for (auto _ : state) benchmark::DoNotOptimize(encode(scene.video, cc));
}
BENCHMARK(BM_Encode);

void BM_DitForward(benchmark::State& state) {
    NoGradGuard ng;
    Model m(bench_config());
    ConditionBundle b = bench_bundle(m);
    for (auto _ : state) benchmark::DoNotOptimize(dit_forward(m, b, 0.5));
}
BENCHMARK(BM_DitForward);

void BM_SamplerStep(benchmark::State& state) {
    Model m(bench_config());
    ConditionBundle b = bench_bundle(m);
    FrameMask fm = build_frame_mask(SegmentRole::base, 17, 4, 8, 8);
    SamplerConfig cfg{1, 9};
    for (auto _ : state)
        benchmark::DoNotOptimize(sample(m, b, fm, nullptr, cfg));
}
BENCHMARK(BM_SamplerStep);

}  // namespace

BENCHMARK_MAIN();
