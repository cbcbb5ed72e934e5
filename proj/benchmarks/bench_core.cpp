// Microbenchmarks for the hot paths: convolution, the denoiser forward and
// backward passes, one fused reverse step, the RNG, and the rasterizer.
// These size the end-to-end budget (a full sampler run is T model calls).

#include <benchmark/benchmark.h>

#include "uvdiff/denoiser.hpp"
#include "uvdiff/harness.hpp"
#include "uvdiff/metrics.hpp"
#include "uvdiff/ops.hpp"
#include "uvdiff/tape.hpp"

namespace {

using namespace uvdiff;

void bm_philox_normal(benchmark::State& state) {
    Rng rng(1);
    std::vector<float> buf(std::size_t(state.range(0)));
    for (auto _ : state) {
        rng.fill_normal(buf.data(), buf.size());
        benchmark::DoNotOptimize(buf.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_philox_normal)->Arg(1 << 16);

void bm_conv2d(benchmark::State& state) {
    const std::size_t c = std::size_t(state.range(0));
    const std::size_t b = std::size_t(state.range(1));
    Rng rng(2);
    const Tensor x = Tensor::randn(Shape{b, c, 32, 32}, rng);
    const Tensor w = Tensor::randn(Shape{c, c, 3, 3}, rng);
    const Tensor bias = Tensor::randn(Shape{c}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, &bias, 1, 1));
    // 2 * MACs per output element
    state.SetItemsProcessed(int64_t(state.iterations()) *
                            int64_t(2 * b * c * c * 9 * 32 * 32));
}
BENCHMARK(bm_conv2d)->Args({32, 1})->Args({32, 4})->Args({64, 4});

void bm_group_norm(benchmark::State& state) {
    Rng rng(3);
    const Tensor x = Tensor::randn(Shape{4, 32, 32, 32}, rng);
    const Tensor gain = Tensor::ones(Shape{32});
    const Tensor bias = Tensor::zeros(Shape{32});
    for (auto _ : state) benchmark::DoNotOptimize(ops::group_norm(x, 8, gain, bias));
}
BENCHMARK(bm_group_norm);

void bm_unet_forward(benchmark::State& state) {
    const std::size_t b = std::size_t(state.range(0));
    UNet net(UNetConfig{}, 42);
    Rng rng(4);
    const Tensor x = Tensor::randn(Shape{b, 10, 32, 32}, rng);
    const std::vector<int> ts(b, 500);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, ts));
}
BENCHMARK(bm_unet_forward)->Arg(1)->Arg(4)->Arg(20);

void bm_unet_backward(benchmark::State& state) {
    const std::size_t b = std::size_t(state.range(0));
    UNet net(UNetConfig{}, 42);
    net.set_tracked(false); // sampling mode: no weight gradients
    Rng rng(5);
    const std::vector<int> ts(b, 500);
    for (auto _ : state) {
        Tensor x = Tensor::randn(Shape{b, 10, 32, 32}, rng);
        x.set_tracked(true);
        TapeT<float> tape;
        TapeScope<float> scope(tape);
        const Tensor out = net.forward(x, ts);
        const Tensor loss = ops::sum(ops::mul(out, out));
        auto grads = tape.backward(loss);
        benchmark::DoNotOptimize(grads.size());
    }
}
BENCHMARK(bm_unet_backward)->Arg(1)->Arg(20);

void bm_reverse_step(benchmark::State& state) {
    const NoiseSchedule s = NoiseSchedule::linear(1000);
    Rng rng(6);
    const Tensor x = Tensor::randn(Shape{20, 10, 32, 32}, rng);
    const Tensor eps = Tensor::randn(Shape{20, 10, 32, 32}, rng);
    Tensor noise = Tensor::randn(Shape{20, 10, 32, 32}, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(reverse_step_from_eps(x, eps, 500, 499, 1.0, s, &noise));
}
BENCHMARK(bm_reverse_step);

void bm_render(benchmark::State& state) {
    const MorphableModel mm = MorphableModel::synthetic(4242);
    const QuadSample sample = make_quad(1000, kHeldOutIndexOffset, 32);
    Camera cam;
    cam.scale = 60;
    cam.translation = Eigen::Vector2d(80, 80);
    RenderParams rp;
    for (auto _ : state)
        benchmark::DoNotOptimize(render_mesh(mm.base, cam, sample.quad, rp));
}
BENCHMARK(bm_render);

void bm_ssim(benchmark::State& state) {
    Rng rng(7);
    const Tensor a = Tensor::randn(Shape{3, 32, 32}, rng);
    const Tensor b = Tensor::randn(Shape{3, 32, 32}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(bm_ssim);

} // namespace

BENCHMARK_MAIN();
