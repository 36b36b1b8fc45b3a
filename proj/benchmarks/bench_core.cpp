// Wall-clock cost of the inner-loop kernels: 2D convolution, the per-channel
// slice-axis convolution, one reverse-process step and one training
// iteration on a small network.

#include <benchmark/benchmark.h>

#include "hdiff/autograd.hpp"
#include "hdiff/backbone.hpp"
#include "hdiff/diffusion.hpp"
#include "hdiff/params.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/schedule.hpp"
#include "hdiff/tensor.hpp"
#include "hdiff/train.hpp"

using namespace hdiff;

namespace {

BackboneConfig bench_config() {
    BackboneConfig cfg;
    cfg.base_channels = 8;
    cfg.channel_multipliers = {1, 2};
    cfg.timestep_embedding_dim = 16;
    cfg.norm_groups = 4;
    cfg.attention_heads = 2;
    return cfg;
}

void bm_conv2d_forward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    Rng rng(1);
    const Tensor x = Tensor::randn({8, c, 32, 32}, rng);
    const Tensor w = Tensor::randn({c, c, 3, 3}, rng);
    const Tensor bias = Tensor::zeros({c});
    for (auto _ : state) {
        Tape tape;
        Var out = tape.conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(bias), 1, 1);
        benchmark::DoNotOptimize(tape.value(out).data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}

void bm_depthwise_slice_conv(benchmark::State& state) {
    const int b = static_cast<int>(state.range(0));
    Rng rng(2);
    const Tensor fm = Tensor::randn({b, 16, 32, 32}, rng);
    const Tensor k = init_dirac(16, 3);
    for (auto _ : state) {
        Tensor out = depthwise_slice_conv(fm, k);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(fm.size()));
}

void bm_sampler_step(benchmark::State& state) {
    const BackboneConfig cfg = bench_config();
    ParamStore store;
    Rng init(3);
    init_backbone_params(cfg, store, init);
    const NoiseSchedule sched = build_linear_schedule(1000, 1e-4, 2e-2);
    Rng rng(4);
    const Tensor x0 = Tensor::randn({8, 1, 32, 32}, rng);
    Tensor m = Tensor::zeros({8, 1, 32, 32});
    for (int b = 2; b < 6; ++b)
        for (int h = 8; h < 24; ++h)
            for (int w = 8; w < 24; ++w) m.at(b, 0, h, w) = 1.0;
    const DenoiserFn den = as_denoiser(cfg, store);
    for (auto _ : state) {
        Rng step_rng = rng.fork(static_cast<std::uint64_t>(state.iterations()));
        Tensor out = sample_inpaint(den, x0, m, sched, step_rng, 1);
        benchmark::DoNotOptimize(out.data());
    }
}

void bm_train_iteration(benchmark::State& state) {
    const BackboneConfig cfg = bench_config();
    ParamStore store;
    Rng init(5);
    init_backbone_params(cfg, store, init);
    const NoiseSchedule sched = build_linear_schedule(1000, 1e-4, 2e-2);
    ExampleSampler sampler = [](Rng& r) {
        Tensor x0 = Tensor::randn({8, 1, 32, 32}, r);
        Tensor m = Tensor::zeros({8, 1, 32, 32});
        for (int b = 2; b < 6; ++b)
            for (int h = 8; h < 24; ++h)
                for (int w = 8; w < 24; ++w) m.at(b, 0, h, w) = 1.0;
        return std::pair<Tensor, Tensor>{std::move(x0), std::move(m)};
    };
    int iter = 0;
    for (auto _ : state) {
        TrainConfig tc;
        tc.start_iteration = iter;
        tc.iterations = ++iter;
        tc.seed = 6;
        benchmark::DoNotOptimize(train_loop(cfg, store, sched, sampler, tc).final_loss);
    }
}

}  // namespace

BENCHMARK(bm_conv2d_forward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_depthwise_slice_conv)->Arg(8)->Arg(24)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_sampler_step)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_train_iteration)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
