// Acceptance gate: eight go/no-go checks over the installed surface, one
// verdict line each. Criterion 5 reads the benchmark report produced by
// criterion 4 (shared artifact, no second run). `--skip-slow` skips the two
// slow criteria for quick local iteration; ctest runs the full set.
#include <Eigen/Geometry>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "uvdiff/harness.hpp"
#include "uvdiff/metrics.hpp"
#include "uvdiff/train.hpp"

using namespace uvdiff;
using uvdiff::testing::gradcheck;
using uvdiff::testing::make_test_net;

namespace {

// Reference diffuse-albedo PSNR means per sampler, pinned from the first
// successful full run. NaN = not pinned yet; criterion 4 then reports the
// measured values as PROVISIONAL instead of gating on them.
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kPinnedDiffusePsnr[4] = {kNan, kNan, kNan, kNan}; // score_sde,
                                                                   // repaint, mcg,
                                                                   // mcg_ddim
constexpr double kPinTolDb = 0.5;

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::optional<BenchmarkReport> g_report; // produced by criterion 4, read by 5

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Tensor64 randn64(const Shape& sh, Rng& rng) {
    Tensor64 t(sh);
    double* p = t.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) p[i] = rng.normal();
    return t;
}

// ---------------------------------------------------------------- criterion 1

Outcome criterion_gradients() {
    Rng rng = make_stream(3, StreamDomain::misc, 7);
    double worst_op = 0;
    std::string worst_name = "-";
    auto run = [&](const char* name, const std::function<Tensor64(const Tensor64&)>& f,
                   const Tensor64& x) {
        const double e = gradcheck(f, x);
        if (e > worst_op) {
            worst_op = e;
            worst_name = name;
        }
    };
    // Scalar loss via a fixed probe so gradients are non-uniform.
    auto probed = [&](std::function<Tensor64(const Tensor64&)> f, const Shape& out_shape) {
        Tensor64 probe = randn64(out_shape, rng);
        return [f = std::move(f), probe](const Tensor64& x) {
            return ops::sum(ops::mul(f(x), probe));
        };
    };

    const Tensor64 a = randn64(Shape{3, 5}, rng);
    const Tensor64 b = randn64(Shape{3, 5}, rng);
    run("add", probed([&](const Tensor64& x) { return ops::add(x, b); }, a.shape()), a);
    run("sub", probed([&](const Tensor64& x) { return ops::sub(b, x); }, a.shape()), a);
    run("mul", probed([&](const Tensor64& x) { return ops::mul(x, b); }, a.shape()), a);
    run("scale", probed([](const Tensor64& x) { return ops::scale(x, 1.7); }, a.shape()), a);
    run("add_scalar", probed([](const Tensor64& x) { return ops::add_scalar(x, 0.3); }, a.shape()),
        a);
    run("silu", probed([](const Tensor64& x) { return ops::silu(x); }, a.shape()), a);
    run("relu", probed([](const Tensor64& x) { return ops::relu(x); }, a.shape()),
        ops::add_scalar(a, 3.0)); // keep clear of the kink at 0
    run("sum", [](const Tensor64& x) { return ops::sum(x); }, a);
    run("mean", [](const Tensor64& x) { return ops::mean(x); }, a);
    run("reshape", probed([](const Tensor64& x) { return ops::reshape(x, Shape{5, 3}); },
                          Shape{5, 3}),
        a);

    const Tensor64 m1 = randn64(Shape{4, 3}, rng);
    const Tensor64 m2 = randn64(Shape{3, 6}, rng);
    run("matmul lhs", probed([&](const Tensor64& x) { return ops::matmul(x, m2); }, Shape{4, 6}),
        m1);
    run("matmul rhs", probed([&](const Tensor64& x) { return ops::matmul(m1, x); }, Shape{4, 6}),
        m2);

    const Tensor64 cx = randn64(Shape{2, 3, 6, 6}, rng);
    const Tensor64 cw = randn64(Shape{4, 3, 3, 3}, rng);
    const Tensor64 cb = randn64(Shape{4}, rng);
    run("conv2d input",
        probed([&](const Tensor64& x) { return ops::conv2d(x, cw, &cb, 1, 1); },
               Shape{2, 4, 6, 6}),
        cx);
    run("conv2d weight",
        probed([&](const Tensor64& w) { return ops::conv2d(cx, w, nullptr, 1, 1); },
               Shape{2, 4, 6, 6}),
        cw);
    run("conv2d stride2",
        probed([&](const Tensor64& x) { return ops::conv2d(x, cw, &cb, 2, 1); },
               Shape{2, 4, 3, 3}),
        cx);

    const Tensor64 gx = randn64(Shape{2, 4, 5, 5}, rng);
    const Tensor64 gg = ops::add_scalar(randn64(Shape{4}, rng), 2.0);
    const Tensor64 gb = randn64(Shape{4}, rng);
    run("group_norm input",
        probed([&](const Tensor64& x) { return ops::group_norm(x, 2, gg, gb); }, gx.shape()), gx);
    run("group_norm gain",
        probed([&](const Tensor64& g) { return ops::group_norm(gx, 2, g, gb); }, gx.shape()), gg);
    run("group_norm bias",
        probed([&](const Tensor64& v) { return ops::group_norm(gx, 2, gg, v); }, gx.shape()), gb);

    run("concat",
        probed(
            [&](const Tensor64& x) {
                return ops::concat(std::vector<Tensor64>{x, b}, 0);
            },
            Shape{6, 5}),
        a);
    run("slice", probed([](const Tensor64& x) { return ops::slice(x, 1, 1, 3); }, Shape{3, 3}),
        a);
    run("upsample_nearest2",
        probed([](const Tensor64& x) { return ops::upsample_nearest2(x); }, Shape{2, 3, 12, 12}),
        randn64(Shape{2, 3, 6, 6}, rng));
    run("add_channel x",
        probed([&](const Tensor64& x) { return ops::add_channel(x, cb); }, Shape{2, 4, 5, 5}),
        randn64(Shape{2, 4, 5, 5}, rng));
    {
        const Tensor64 acx = randn64(Shape{2, 4, 5, 5}, rng);
        run("add_channel v",
            probed([&](const Tensor64& v) { return ops::add_channel(acx, v); }, acx.shape()), cb);
    }

    // End-to-end: input gradient of the full denoiser in 64-bit mode.
    UNetT<double> net = make_test_net(8, 16, 99).cast<double>();
    const std::vector<int> ts{5};
    const Tensor64 probe = randn64(Shape{1, 10, 8, 8}, rng);
    const double e2e = gradcheck(
        [&](const Tensor64& x) { return ops::sum(ops::mul(net.forward(x, ts), probe)); },
        randn64(Shape{1, 10, 8, 8}, rng));

    Outcome o;
    o.pass = worst_op < 1e-4 && e2e < 1e-3;
    o.detail = fmt("worst per-op rel err %.2e (%s) < 1e-4, denoiser end-to-end %.2e < 1e-3",
                   worst_op, worst_name.c_str(), e2e);
    return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion_forward_stats() {
    const NoiseSchedule s = NoiseSchedule::linear(1000);
    const Shape sh{10, 20, 20};
    // A constant offset well above the noise floor keeps the 2% relative
    // mean check meaningful even at t = T, where sqrt(abar) ~ 6e-3.
    Tensor64 x0(sh);
    for (std::size_t i = 0; i < x0.size(); ++i) x0.mutable_data()[i] = 8.0;

    const int draws = 10000;
    Outcome o;
    std::ostringstream detail;
    for (const int t : {1, 500, 1000}) {
        Rng rng = make_stream(424242, StreamDomain::misc, std::uint32_t(t));
        double sum = 0, sum_sq = 0;
        Tensor64 eps(sh);
        for (int k = 0; k < draws; ++k) {
            double* ep = eps.mutable_data();
            for (std::size_t i = 0; i < eps.size(); ++i) ep[i] = rng.normal();
            const Tensor64 xt = forward_sample(x0, t, eps, s);
            const double* p = xt.data();
            for (std::size_t i = 0; i < xt.size(); ++i) {
                sum += p[i];
                sum_sq += p[i] * p[i];
            }
        }
        const double n = double(draws) * double(x0.size());
        const double mean = sum / n;
        const double var = sum_sq / n - mean * mean;
        const double want_mean = std::sqrt(s.alpha_bar(t)) * 8.0;
        const double want_var = 1.0 - s.alpha_bar(t);
        const double rel_mean = std::abs(mean - want_mean) / std::abs(want_mean);
        const double rel_var = std::abs(var - want_var) / want_var;
        if (rel_mean > 0.02 || rel_var > 0.02) o.pass = false;
        detail << fmt("t=%d mean %.2e var %.2e", t, rel_mean, rel_var)
               << (t != 1000 ? "; " : "");
    }
    o.detail = "rel errs " + detail.str() + " (all < 2e-2, 10k draws each)";
    return o;
}

// ---------------------------------------------------------------- criterion 3

Observation half_mask_obs(const Tensor& stacked) {
    const std::size_t r = stacked.extent(1);
    Observation obs;
    obs.mask = Tensor(Shape{r, r});
    obs.known = Tensor(Shape{10, r, r});
    float* m = obs.mask.mutable_data();
    for (std::size_t y = 0; y < r; ++y)
        for (std::size_t x = 0; x < r; ++x) m[y * r + x] = x < r / 2 ? 1.0f : 0.0f;
    float* k = obs.known.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < r * r; ++i)
            k[c * r * r + i] = m[i] == 1.0f ? stacked.data()[c * r * r + i] : 0.0f;
    obs.validate();
    return obs;
}

bool masked_passthrough(const InpaintResult& res, const Observation& obs) {
    const std::size_t plane = obs.mask.size();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            if (obs.mask[i] == 1.0f &&
                res.stacked[c * plane + i] != obs.known[c * plane + i])
                return false;
    return true;
}

Outcome criterion_inpaint_invariants() {
    constexpr int kT = 100;
    constexpr std::size_t kR = 16;
    const NoiseSchedule s = NoiseSchedule::linear(kT);
    const ModelFn<float> model = make_test_net(16, 32, 99).as_model();
    const Observation obs = half_mask_obs(stack_quad(make_quad(123, 0, int(kR)).quad));

    InpaintConfig cfg;
    cfg.seed = 31;
    cfg.repaint_n = 3;
    cfg.ddim_steps = 25;

    std::vector<std::string> fails;
    auto expect = [&](bool ok, const char* what) {
        if (!ok) fails.emplace_back(what);
    };
    auto counters = [&](const InpaintResult& r, std::int64_t fwd, std::int64_t bwd,
                        const char* what) {
        expect(r.forward_evals == fwd && r.backward_evals == bwd, what);
    };

    cfg.algo = InpaintAlgo::score_sde;
    const InpaintResult r_score = run_inpaint(model, obs, s, cfg);
    cfg.algo = InpaintAlgo::repaint;
    const InpaintResult r_rep3 = run_inpaint(model, obs, s, cfg);
    cfg.algo = InpaintAlgo::mcg;
    const InpaintResult r_mcg = run_inpaint(model, obs, s, cfg);
    cfg.algo = InpaintAlgo::mcg_ddim;
    const InpaintResult r_ddim = run_inpaint(model, obs, s, cfg);

    InpaintConfig cfg1 = cfg;
    cfg1.repaint_n = 1;
    cfg1.algo = InpaintAlgo::repaint;
    const InpaintResult r_rep1 = run_inpaint(model, obs, s, cfg1);
    InpaintConfig cfg_full = cfg;
    cfg_full.algo = InpaintAlgo::mcg_ddim;
    cfg_full.ddim_steps = kT;
    cfg_full.eta = 1.0;
    const InpaintResult r_ddim_full = run_inpaint(model, obs, s, cfg_full);

    for (const auto* r : {&r_score, &r_rep3, &r_mcg, &r_ddim, &r_rep1, &r_ddim_full})
        expect(masked_passthrough(*r, obs), "masked texels not bit-equal to observation");

    counters(r_score, kT, 0, "score_sde counters != T/0");
    counters(r_rep3, 3 * kT, 0, "repaint(n=3) counters != nT/0");
    counters(r_mcg, kT, kT, "mcg counters != T/T");
    counters(r_ddim, 25, 25, "mcg_ddim counters != N/N");

    expect(bit_equal(r_rep1.stacked, r_score.stacked), "repaint(n=1) != score_sde");
    expect(bit_equal(r_ddim_full.stacked, r_mcg.stacked), "mcg_ddim(N=T,eta=1) != mcg");

    // All-zero mask: every sampler must reproduce its unconditional chain.
    Observation zero;
    zero.mask = Tensor(Shape{kR, kR});
    zero.known = Tensor(Shape{10, kR, kR});
    zero.validate();
    const Shape full{1, 10, kR, kR};
    const Shape chain{10, kR, kR};
    const Tensor u_ddpm = sample_ddpm<float>(model, full, s, cfg.seed).reshaped(chain);
    const Tensor u_ddim = sample_ddim<float>(model, full, s, 25, 0.0, cfg.seed).reshaped(chain);

    cfg.algo = InpaintAlgo::score_sde;
    expect(bit_equal(run_inpaint(model, zero, s, cfg).stacked, u_ddpm),
           "zero-mask score_sde != ddpm");
    cfg1.algo = InpaintAlgo::repaint;
    expect(bit_equal(run_inpaint(model, zero, s, cfg1).stacked, u_ddpm),
           "zero-mask repaint(n=1) != ddpm");
    cfg.algo = InpaintAlgo::mcg;
    expect(bit_equal(run_inpaint(model, zero, s, cfg).stacked, u_ddpm),
           "zero-mask mcg != ddpm");
    cfg.algo = InpaintAlgo::mcg_ddim;
    expect(bit_equal(run_inpaint(model, zero, s, cfg).stacked, u_ddim),
           "zero-mask mcg_ddim != ddim");

    Outcome o;
    o.pass = fails.empty();
    if (o.pass) {
        o.detail = "masked pass-through, zero-mask chains, counters 100/300/(100,100)/(25,25) "
                   "and cross-sampler identities all bit-exact";
    } else {
        o.detail = fails.front();
        if (fails.size() > 1) o.detail += fmt(" (+%zu more)", fails.size() - 1);
    }
    return o;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion_benchmark_trend() {
    std::printf("  [reference] generating dataset (2048 quads at 32x32)\n");
    std::fflush(stdout);
    const Tensor dataset = make_dataset(1000, 2048, 32);
    const NoiseSchedule s = NoiseSchedule::linear(1000);

    // Frozen reference rig. Width 16 keeps the full run (training + 4x20
    // guided samplings at T=1000) inside the 2 h budget on one CPU core;
    // batch 8 / lr 2e-4 reach a markedly lower loss than the conservative
    // TrainConfig defaults at the pinned 20k steps.
    UNetConfig ref_cfg;
    ref_cfg.base_width = 16;
    ref_cfg.time_dim = 32;
    UNet net(ref_cfg, 42);
    TrainConfig tc;
    tc.batch = 8;
    tc.lr = 2e-4;
    const TrainStats stats = train_denoiser(net, dataset, s, tc, [](int step, double ema) {
        if (step % 2000 == 0) {
            std::printf("  [train] step %6d ema loss %.5f\n", step, ema);
            std::fflush(stdout);
        }
    });
    std::printf("  [train] first-window mean %.5f, final ema %.5f\n",
                stats.first_window_mean, stats.final_loss_ema);
    std::fflush(stdout);

    BenchmarkSpec spec; // frozen defaults: 20 scenes, R=32, all four samplers
    const BenchmarkReport report = run_benchmark(net.as_model(), s, spec);
    g_report = report;

    std::ofstream("bench_report.txt") << report_text(report);
    std::ofstream("bench_report.json") << report_json(report);

    const InpaintAlgo order[4] = {InpaintAlgo::score_sde, InpaintAlgo::repaint,
                                  InpaintAlgo::mcg, InpaintAlgo::mcg_ddim};
    double mean[4];
    for (int i = 0; i < 4; ++i) {
        const AlgoReport* a = find_algo(report, order[i]);
        if (a == nullptr) return {false, "missing sampler in benchmark report"};
        mean[i] = a->mean_psnr_diffuse;
    }
    std::printf("  [bench] mean diffuse psnr: score_sde=%.4f repaint=%.4f mcg=%.4f "
                "mcg_ddim=%.4f (coverage %.3f)\n",
                mean[0], mean[1], mean[2], mean[3], report.mean_coverage);
    std::fflush(stdout);

    const bool trend_mcg = mean[2] > mean[0];
    const double ddim_gap = std::abs(mean[3] - mean[2]);
    const bool trend_ddim = ddim_gap <= 1.0;

    bool pins_present = true, pins_ok = true;
    double pin_worst = 0;
    for (int i = 0; i < 4; ++i) {
        if (std::isnan(kPinnedDiffusePsnr[i])) {
            pins_present = false;
        } else {
            pin_worst = std::max(pin_worst, std::abs(mean[i] - kPinnedDiffusePsnr[i]));
            if (std::abs(mean[i] - kPinnedDiffusePsnr[i]) > kPinTolDb) pins_ok = false;
        }
    }

    Outcome o;
    o.pass = trend_mcg && trend_ddim && (!pins_present || pins_ok);
    std::string pins = pins_present
                           ? fmt("pins ok, worst |d| %.2f <= %.1f dB", pin_worst, kPinTolDb)
                           : fmt("pins PROVISIONAL: %.4f/%.4f/%.4f/%.4f", mean[0], mean[1],
                                 mean[2], mean[3]);
    o.detail = fmt("mcg %.2f > score_sde %.2f: %s; |mcg_ddim-mcg| %.2f <= 1.0 dB: %s; %s",
                   mean[2], mean[0], trend_mcg ? "yes" : "NO", ddim_gap,
                   trend_ddim ? "yes" : "NO", pins.c_str());
    return o;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion_wall_ordering() {
    if (!g_report) return {false, "benchmark report unavailable (criterion 4 did not run)"};
    const BenchmarkReport& rep = *g_report;
    const std::int64_t n = rep.spec.num_scenes;
    const std::int64_t T = rep.schedule_steps;
    const std::int64_t N = rep.spec.ddim_steps;

    struct Want {
        InpaintAlgo algo;
        std::int64_t fwd, bwd;
    };
    const Want wants[4] = {{InpaintAlgo::score_sde, n * T, 0},
                           {InpaintAlgo::repaint, n * T * rep.spec.repaint_n, 0},
                           {InpaintAlgo::mcg, n * T, n * T},
                           {InpaintAlgo::mcg_ddim, n * N, n * N}};
    double wall[4];
    bool counters_ok = true;
    for (int i = 0; i < 4; ++i) {
        const AlgoReport* a = find_algo(rep, wants[i].algo);
        if (a == nullptr) return {false, "missing sampler in benchmark report"};
        wall[i] = a->wall_seconds;
        if (a->forward_evals != wants[i].fwd || a->backward_evals != wants[i].bwd)
            counters_ok = false;
    }
    // Expected: mcg_ddim < score_sde < mcg < repaint.
    const bool order_ok = wall[3] < wall[0] && wall[0] < wall[2] && wall[2] < wall[1];

    Outcome o;
    o.pass = order_ok && counters_ok;
    o.detail = fmt("wall mcg_ddim %.1fs < score_sde %.1fs < mcg %.1fs < repaint %.1fs: %s; "
                   "call counts %s",
                   wall[3], wall[0], wall[2], wall[1], order_ok ? "yes" : "NO",
                   counters_ok ? "exact" : "WRONG");
    return o;
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion_geometry() {
    // Render -> unwrap identity. Ambient-only shading makes the rendered
    // pixel exactly the bilinearly sampled diffuse albedo, so unwrapped
    // texels must reproduce the source map up to resampling error.
    const MorphableModel mm = MorphableModel::synthetic(1);
    const ReflectanceQuad quad = make_quad(7, 0, 32).quad;
    Camera cam;
    cam.scale = 0.38 * 160;
    cam.translation = Eigen::Vector2d(80.0, 80.0);
    RenderParams rp;
    rp.width = rp.height = 160;
    rp.shade.ambient = 1.0;
    rp.shade.diffuse = 0.0;
    rp.shade.specular = 0.0;
    rp.background = {0.5f, 0.5f, 0.5f};
    const Image img = render_mesh(mm.base, cam, quad, rp);
    const Observation obs = unwrap(img, mm.base, cam, 32);

    const std::size_t plane = obs.mask.size();
    double mae = 0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i)
            if (obs.mask[i] == 1.0f) {
                const double want = 2.0 * quad.diffuse[c * plane + i] - 1.0;
                mae += std::abs(obs.known[c * plane + i] - want);
                ++count;
            }
    mae = count > 0 ? mae / double(count) : 1.0;
    const double coverage = obs.coverage();

    // Landmark fit recovers synthetic coefficients at zero noise.
    const MorphableModel mm2 = MorphableModel::synthetic(11);
    Rng rng = make_stream(900, StreamDomain::scene, 0);
    Eigen::VectorXd ps(mm2.k_shape()), pe(mm2.k_expr());
    for (int i = 0; i < ps.size(); ++i) ps[i] = 0.3 * rng.normal();
    for (int i = 0; i < pe.size(); ++i) pe[i] = 0.15 * rng.normal();
    const Mesh gt_mesh = instantiate(mm2, ps, pe);
    Camera gt_cam;
    gt_cam.scale = 36.48;
    gt_cam.rotation =
        Eigen::AngleAxisd(18.0 * M_PI / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
    gt_cam.translation = Eigen::Vector2d(80.0, 80.0);
    std::vector<Eigen::Vector2d> lm2d;
    for (const int v : mm2.landmarks) lm2d.push_back(gt_cam.project(gt_mesh.vertices[v]));
    const FitResult fit = fit_morphable(lm2d, mm2);

    Eigen::VectorXd want(ps.size() + pe.size()), got(ps.size() + pe.size());
    want << ps, pe;
    got << fit.shape_coeffs, fit.expr_coeffs;
    const double rel = (got - want).norm() / want.norm();

    Outcome o;
    o.pass = mae <= 2e-2 && coverage > 0.2 && rel < 1e-2;
    o.detail = fmt("unwrap MAE %.4f <= 0.02 (coverage %.2f), fit coeff rel err %.2e < 1e-2 "
                   "(residual %.4f px)",
                   mae, coverage, rel, fit.residual);
    return o;
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion_metrics() {
    Tensor a(Shape{3, 16, 16});
    Tensor b(Shape{3, 16, 16});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.mutable_data()[i] = 0.25f;
        b.mutable_data()[i] = 0.75f;
    }
    const double p = psnr(a, b);
    const bool psnr_ok = std::abs(p - 6.020599913279624) <= 1e-3;

    Tensor img(Shape{16, 20});
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 20; ++x)
            img.mutable_data()[y * 20 + x] =
                float(0.5 + 0.3 * std::sin(0.4 * double(x)) + 0.01 * double(y));
    const bool self_ok = ssim(img, img) == 1.0;

    Rng rng = make_stream(40, StreamDomain::misc, 0);
    Tensor noise(img.shape());
    for (std::size_t i = 0; i < noise.size(); ++i)
        noise.mutable_data()[i] = float(rng.normal());
    auto noisy = [&](double sigma) {
        Tensor out = img.clone();
        for (std::size_t i = 0; i < out.size(); ++i)
            out.mutable_data()[i] += float(sigma) * noise[i];
        return out;
    };
    const double s1 = ssim(img, noisy(0.05));
    const double s2 = ssim(img, noisy(0.10));
    const double s3 = ssim(img, noisy(0.20));
    const bool mono_ok = s1 > s2 && s2 > s3 && s1 < 1.0;

    Outcome o;
    o.pass = psnr_ok && self_ok && mono_ok;
    o.detail = fmt("psnr %.6f (want 6.020600 +-1e-3), ssim(a,a)=%s, monotone %.3f > %.3f > %.3f",
                   p, self_ok ? "1 exact" : "NOT 1", s1, s2, s3);
    return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion_determinism() {
    const MorphableModel mm = MorphableModel::synthetic(4, 12, 17, 4, 2);
    Rng rng = make_stream(800, StreamDomain::scene, 0);
    Eigen::VectorXd ps(mm.k_shape()), pe(mm.k_expr());
    for (int i = 0; i < ps.size(); ++i) ps[i] = 0.3 * rng.normal();
    for (int i = 0; i < pe.size(); ++i) pe[i] = 0.15 * rng.normal();
    const Mesh gt_mesh = instantiate(mm, ps, pe);
    Camera cam;
    cam.scale = 0.38 * 96;
    cam.translation = Eigen::Vector2d(48.0, 48.0);
    RenderParams rp;
    rp.width = rp.height = 96;
    rp.background = {0.1f, 0.1f, 0.1f};
    const Image img = render_mesh(gt_mesh, cam, make_quad(55, 3, 16).quad, rp);
    std::vector<Eigen::Vector2d> lm2d;
    for (const int v : mm.landmarks) lm2d.push_back(cam.project(gt_mesh.vertices[v]));

    const ModelFn<float> model = make_test_net(16, 32, 7).as_model();
    const NoiseSchedule s = NoiseSchedule::linear(100);
    ReconstructConfig cfg;
    cfg.resolution = 16;
    cfg.inpaint.algo = InpaintAlgo::mcg;
    cfg.inpaint.ddim_steps = 50;
    cfg.inpaint.seed = 9;

    const ReconstructResult r1 = reconstruct(img, lm2d, mm, model, s, cfg);
    const ReconstructResult r2 = reconstruct(img, lm2d, mm, model, s, cfg);

    const bool stacked_ok = bit_equal(r1.inpaint.stacked, r2.inpaint.stacked);
    const bool obs_ok = bit_equal(r1.observation.known, r2.observation.known) &&
                        bit_equal(r1.observation.mask, r2.observation.mask);
    const bool fit_ok = r1.fit.residual == r2.fit.residual;
    const double coverage = r1.observation.coverage();

    Outcome o;
    o.pass = stacked_ok && obs_ok && fit_ok && coverage > 0.0 &&
             r1.inpaint.stacked.all_finite();
    o.detail = fmt("two runs bit-identical: result %s, observation %s, fit %s "
                   "(coverage %.2f)",
                   stacked_ok ? "yes" : "NO", obs_ok ? "yes" : "NO", fit_ok ? "yes" : "NO",
                   coverage);
    return o;
}

} // namespace

int main(int argc, char** argv) {
    bool skip_slow = false;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--skip-slow") skip_slow = true;

    struct Entry {
        int id;
        const char* name;
        bool slow;
        std::function<Outcome()> fn;
    };
    const std::vector<Entry> entries = {
        {1, "gradient correctness", false, criterion_gradients},
        {2, "forward-process statistics", false, criterion_forward_stats},
        {3, "inpainting invariants", false, criterion_inpaint_invariants},
        {4, "benchmark trend (diffuse PSNR)", true, criterion_benchmark_trend},
        {5, "wall-time ordering and call counts", true, criterion_wall_ordering},
        {6, "geometry roundtrip", false, criterion_geometry},
        {7, "metric sanity", false, criterion_metrics},
        {8, "determinism", false, criterion_determinism},
    };

    int failures = 0;
    for (const auto& e : entries) {
        if (skip_slow && e.slow) {
            std::printf("[SKIP] criterion %d: %s (slow, skipped on request)\n", e.id, e.name);
            std::fflush(stdout);
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = e.fn();
        } catch (const std::exception& ex) {
            o.pass = false;
            o.detail = std::string("exception: ") + ex.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", e.id,
                    e.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failures;
    }
    return failures;
}
