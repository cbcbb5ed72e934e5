// Command line front end: dataset generation, training, sampling,
// inpainting, image-based reconstruction, the benchmark and map evaluation.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uvdiff/harness.hpp"
#include "uvdiff/image.hpp"
#include "uvdiff/metrics.hpp"
#include "uvdiff/ndt_io.hpp"
#include "uvdiff/train.hpp"

namespace {

using namespace uvdiff;

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key,
             int fallback) {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : std::stoi(it->second);
}

// Loads a checkpoint plus the schedule it was trained against. A nonzero
// override wins; otherwise the header value (default 1000) is used.
std::pair<UNet, NoiseSchedule> load_model(const std::string& path,
                                          int schedule_override) {
    auto [net, meta] = load_denoiser(path);
    const int steps =
        schedule_override > 0 ? schedule_override : meta_int(meta, "schedule_steps", 1000);
    std::fprintf(stderr, "loaded %s: %zu params, schedule T=%d\n", path.c_str(),
                 net.param_count(), steps);
    return {std::move(net), NoiseSchedule::linear(steps)};
}

Image plane_to_image(const Tensor& t, std::size_t c0, std::size_t nc, bool remap) {
    const int r = int(t.extent(1));
    Image im = Image::create(r, r, nc == 1 ? 1 : 3);
    const std::size_t plane = std::size_t(r) * std::size_t(r);
    for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x)
            for (std::size_t c = 0; c < nc; ++c) {
                float v = t.data()[(c0 + c) * plane + std::size_t(y) * r + std::size_t(x)];
                if (remap) v = 0.5f * (v + 1.0f);
                im.at(x, y, int(c)) = std::clamp(v, 0.0f, 1.0f);
            }
    return im;
}

void write_quad_pngs(const std::string& prefix, const ReflectanceQuad& q) {
    write_png(prefix + "_texture.png", plane_to_image(q.texture, 0, 3, false));
    write_png(prefix + "_diffuse.png", plane_to_image(q.diffuse, 0, 3, false));
    write_png(prefix + "_specular.png", plane_to_image(q.specular, 0, 1, false));
    write_png(prefix + "_normal.png", plane_to_image(q.normal, 0, 3, true));
    std::fprintf(stderr, "wrote %s_{texture,diffuse,specular,normal}.png\n",
                 prefix.c_str());
}

std::vector<Eigen::Vector2d> read_landmarks(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail_state("cannot open landmark file " + path);
    std::vector<Eigen::Vector2d> pts;
    double x, y;
    while (is >> x >> y) pts.emplace_back(x, y);
    require(!pts.empty(), "landmark file " + path + " is empty");
    return pts;
}

Tensor batch_item(const Tensor& batch, std::size_t i) {
    require(batch.rank() == 4, "expected a [B,C,H,W] tensor");
    const std::size_t item = batch.size() / batch.extent(0);
    Tensor out(Shape{batch.extent(1), batch.extent(2), batch.extent(3)});
    std::copy_n(batch.data() + i * item, item, out.mutable_data());
    return out;
}

void print_quad_metrics(const ReflectanceQuad& pred, const ReflectanceQuad& gt) {
    std::printf("psnr texture : %8.3f dB\n",
                psnr_display(psnr(pred.texture, gt.texture)));
    std::printf("psnr diffuse : %8.3f dB\n",
                psnr_display(psnr(pred.diffuse, gt.diffuse)));
    std::printf("psnr specular: %8.3f dB\n",
                psnr_display(psnr(pred.specular, gt.specular)));
    std::printf("psnr normal  : %8.3f dB\n",
                psnr_display(psnr(pred.normal, gt.normal, 2.0)));
    if (pred.resolution() >= 11)
        std::printf("ssim diffuse : %8.4f\n", ssim(pred.diffuse, gt.diffuse));
}

struct SamplerOpts {
    std::string algo = "mcg";
    std::uint64_t seed = 1000;
    int repaint_n = 10;
    int ddim_steps = 200;
    double eta = 0.0;
    double lambda = 1.0;
};

void add_sampler_opts(CLI::App* sub, SamplerOpts& o) {
    sub->add_option("--algo", o.algo, "score_sde | repaint | mcg | mcg_ddim")
        ->capture_default_str();
    sub->add_option("--seed", o.seed, "sampling seed")->capture_default_str();
    sub->add_option("--repaint-n", o.repaint_n, "repaint repetitions per step")
        ->capture_default_str();
    sub->add_option("--ddim-steps", o.ddim_steps, "DDIM subsequence length")
        ->capture_default_str();
    sub->add_option("--eta", o.eta, "DDIM stochasticity")->capture_default_str();
    sub->add_option("--lambda", o.lambda, "manifold-guidance step size")
        ->capture_default_str();
}

InpaintConfig to_config(const SamplerOpts& o) {
    InpaintConfig cfg;
    cfg.algo = parse_algo(o.algo);
    cfg.repaint_n = o.repaint_n;
    cfg.ddim_steps = o.ddim_steps;
    cfg.eta = o.eta;
    cfg.mcg_scale = o.lambda;
    cfg.seed = o.seed;
    return cfg;
}

// ---- subcommands ----------------------------------------------------------

struct GenDataOpts {
    std::string out;
    std::uint64_t count = 2048;
    int resolution = 32;
    std::uint64_t seed = 1000;
    std::string split = "train";
    bool held_out = false;
};

void run_gen_data(const GenDataOpts& o) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor data = make_dataset(o.seed, o.count, o.resolution,
                               o.held_out ? kHeldOutIndexOffset : 0);
    DatasetHeader h;
    h.count = o.count;
    h.resolution = o.resolution;
    h.split = o.held_out ? "heldout" : o.split;
    h.seed = o.seed;
    write_dataset(o.out, h, data);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                          .count();
    std::printf("wrote %s: %llu quads at %dx%d, hash %016llx (%.1fs)\n", o.out.c_str(),
                static_cast<unsigned long long>(o.count), o.resolution, o.resolution,
                static_cast<unsigned long long>(tensor_hash(data)), dt);
}

struct TrainOpts {
    std::string data;
    std::string out;
    std::string resume;
    TrainConfig cfg;
    int width = 32;
    int time_dim = 64;
    int groups = 8;
    int schedule_steps = 1000;
    std::uint64_t weight_seed = 42;
};

void run_train(const TrainOpts& o) {
    auto [header, data] = read_dataset(o.data);
    require(header.channels == 10, "train: dataset must have 10 channels");
    std::fprintf(stderr, "dataset %s: %llu items at %dx%d (split %s)\n", o.data.c_str(),
                 static_cast<unsigned long long>(header.count), header.resolution,
                 header.resolution, header.split.c_str());

    UNet net;
    if (!o.resume.empty()) {
        net = load_denoiser(o.resume).first;
        std::fprintf(stderr, "resuming from %s (fresh optimizer state)\n",
                     o.resume.c_str());
    } else {
        UNetConfig nc;
        nc.base_width = o.width;
        nc.time_dim = o.time_dim;
        nc.groups = o.groups;
        net = UNet(nc, o.weight_seed);
    }
    std::fprintf(stderr, "model: %zu parameters\n", net.param_count());

    const NoiseSchedule s = NoiseSchedule::linear(o.schedule_steps);
    const auto t0 = std::chrono::steady_clock::now();
    TrainStats stats = train_denoiser(net, data, s, o.cfg, [&](int step, double ema) {
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "step %6d/%d  loss-ema %.6f  %.0fs\n", step, o.cfg.steps,
                     ema, dt);
    });
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::map<std::string, std::string> meta;
    meta["schedule_steps"] = std::to_string(o.schedule_steps);
    meta["train_steps"] = std::to_string(o.cfg.steps);
    meta["train_seed"] = std::to_string(o.cfg.seed);
    meta["weight_seed"] = std::to_string(o.weight_seed);
    meta["dataset_seed"] = std::to_string(header.seed);
    meta["final_loss_ema"] = std::to_string(stats.final_loss_ema);
    save_denoiser(o.out, net, meta);
    std::printf("trained %d steps in %.0fs: loss %.5f (first 100) -> %.5f (ema), "
                "saved %s\n",
                o.cfg.steps, dt, stats.first_window_mean, stats.final_loss_ema,
                o.out.c_str());
}

struct SampleOpts {
    std::string model;
    std::string out;
    std::string png_prefix;
    int count = 1;
    int resolution = 32;
    std::uint64_t seed = 1;
    int ddim = 0; // 0 = full ancestral sampling
    double eta = 0.0;
    int schedule_steps = 0;
};

void run_sample(const SampleOpts& o) {
    auto [net, s] = load_model(o.model, o.schedule_steps);
    const ModelFn<float> model = net.as_model();
    const Shape shape{std::size_t(o.count), 10, std::size_t(o.resolution),
                      std::size_t(o.resolution)};
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor x = o.ddim > 0 ? sample_ddim(model, shape, s, o.ddim, o.eta, o.seed)
                                : sample_ddpm(model, shape, s, o.seed);
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.out.empty()) write_ndt_file(o.out, x);
    for (int b = 0; b < o.count && !o.png_prefix.empty(); ++b)
        write_quad_pngs(o.png_prefix + "_" + std::to_string(b),
                        unstack_quad(batch_item(x, std::size_t(b))));
    std::printf("sampled %d map stacks in %.1fs (%s), hash %016llx\n", o.count, dt,
                o.ddim > 0 ? "ddim" : "ddpm",
                static_cast<unsigned long long>(tensor_hash(x)));
}

struct InpaintOpts {
    std::string model;
    std::string known;
    std::string mask;
    std::string out;
    std::string png_prefix;
    SamplerOpts sampler;
    int schedule_steps = 0;
};

void run_inpaint_cmd(const InpaintOpts& o) {
    auto [net, s] = load_model(o.model, o.schedule_steps);
    Observation obs;
    obs.known = read_ndt_file<float>(o.known);
    obs.mask = read_ndt_file<float>(o.mask);
    obs.validate();
    std::fprintf(stderr, "observation: %zux%zu, coverage %.3f\n", obs.resolution(),
                 obs.resolution(), obs.coverage());

    const auto t0 = std::chrono::steady_clock::now();
    const InpaintResult res = run_inpaint(net.as_model(), obs, s, to_config(o.sampler));
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.out.empty()) write_ndt_file(o.out, res.stacked);
    if (!o.png_prefix.empty()) write_quad_pngs(o.png_prefix, res.quad);
    std::printf("%s: %.1fs, %lld forward / %lld backward evals, hash %016llx\n",
                o.sampler.algo.c_str(), dt, static_cast<long long>(res.forward_evals),
                static_cast<long long>(res.backward_evals),
                static_cast<unsigned long long>(tensor_hash(res.stacked)));
}

struct ReconstructOpts {
    std::string model;
    std::string image;
    std::string landmarks;
    std::string out_prefix = "reconstruct";
    std::uint64_t mm_seed = 4242;
    int resolution = 32;
    int demo_scene = -1;
    SamplerOpts sampler;
    int schedule_steps = 0;
};

void run_reconstruct(const ReconstructOpts& o) {
    auto [net, s] = load_model(o.model, o.schedule_steps);
    ReconstructConfig rc;
    rc.inpaint = to_config(o.sampler);
    rc.resolution = o.resolution;

    Image img;
    std::vector<Eigen::Vector2d> lm;
    const BenchmarkScene* demo = nullptr;
    std::vector<BenchmarkScene> scenes;
    if (o.demo_scene >= 0) {
        BenchmarkSpec spec;
        spec.num_scenes = o.demo_scene + 1;
        spec.model_seed = o.mm_seed;
        spec.resolution = o.resolution;
        scenes = prepare_scenes(spec);
        demo = &scenes.back();
        img = demo->image;
        lm = demo->gt_landmarks;
        std::fprintf(stderr, "demo scene %d: rendered input internally\n",
                     o.demo_scene);
    } else {
        require(!o.image.empty() && !o.landmarks.empty(),
                "reconstruct: need --image and --landmarks (or --demo-scene)");
        img = read_png(o.image);
        lm = read_landmarks(o.landmarks);
    }

    const MorphableModel mm = MorphableModel::synthetic(o.mm_seed);
    const auto t0 = std::chrono::steady_clock::now();
    const ReconstructResult res = reconstruct(img, lm, mm, net.as_model(), s, rc);
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_ndt_file(o.out_prefix + "_stacked.ndt", res.inpaint.stacked);
    write_obj(o.out_prefix + "_mesh.obj", res.mesh);
    write_quad_pngs(o.out_prefix, res.inpaint.quad);
    std::printf("fit: residual %.4f px after %d iterations; coverage %.3f\n",
                res.fit.residual, res.fit.iterations, res.observation.coverage());
    std::printf("%s: %.1fs, %lld forward / %lld backward evals\n",
                o.sampler.algo.c_str(), dt,
                static_cast<long long>(res.inpaint.forward_evals),
                static_cast<long long>(res.inpaint.backward_evals));
    if (demo) {
        std::printf("against ground truth:\n");
        print_quad_metrics(res.inpaint.quad, demo->gt);
    }
}

struct BenchOpts {
    std::string model;
    std::string out_text;
    std::string out_json;
    BenchmarkSpec spec;
    std::vector<std::string> algos; // empty = all four
    int schedule_steps = 0;
};

void run_bench(const BenchOpts& o) {
    auto [net, s] = load_model(o.model, o.schedule_steps);
    BenchmarkSpec spec = o.spec;
    if (!o.algos.empty()) {
        spec.algos.clear();
        for (const std::string& a : o.algos) spec.algos.push_back(parse_algo(a));
    }
    const BenchmarkReport report = run_benchmark(net.as_model(), s, spec);
    const std::string text = report_text(report);
    std::fputs(text.c_str(), stdout);
    if (!o.out_text.empty()) {
        std::ofstream os(o.out_text);
        os << text;
        if (!os) fail_state("cannot write " + o.out_text);
    }
    if (!o.out_json.empty()) {
        std::ofstream os(o.out_json);
        os << report_json(report);
        if (!os) fail_state("cannot write " + o.out_json);
    }
}

struct EvalOpts {
    std::string pred;
    std::string gt;
};

void run_eval(const EvalOpts& o) {
    const Tensor pred = read_ndt_file<float>(o.pred);
    const Tensor gt = read_ndt_file<float>(o.gt);
    require(pred.shape() == gt.shape(), "eval: tensor shapes differ");
    require(pred.rank() == 3 && pred.extent(0) == 10, "eval: expected [10,R,R]");
    print_quad_metrics(unstack_quad(pred), unstack_quad(gt));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uvdiff: diffusion-guided UV texture and reflectance completion"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an ini/key=value file");

    GenDataOpts gen;
    auto* sub = app.add_subcommand("gen-data", "generate a synthetic quad dataset");
    sub->add_option("--out", gen.out, "output .uvds path")->required();
    sub->add_option("--count", gen.count)->capture_default_str();
    sub->add_option("--resolution", gen.resolution)->capture_default_str();
    sub->add_option("--seed", gen.seed)->capture_default_str();
    sub->add_option("--split", gen.split)->capture_default_str();
    sub->add_flag("--held-out", gen.held_out,
                  "draw from the reserved evaluation index range");
    sub->callback([&gen] { run_gen_data(gen); });

    TrainOpts tr;
    sub = app.add_subcommand("train", "train the denoiser on a dataset");
    sub->add_option("--data", tr.data, "input .uvds path")->required();
    sub->add_option("--out", tr.out, "output checkpoint path")->required();
    sub->add_option("--resume", tr.resume, "checkpoint to continue from");
    sub->add_option("--steps", tr.cfg.steps)->capture_default_str();
    sub->add_option("--batch", tr.cfg.batch)->capture_default_str();
    sub->add_option("--lr", tr.cfg.lr)->capture_default_str();
    sub->add_option("--clip-norm", tr.cfg.clip_norm)->capture_default_str();
    sub->add_option("--seed", tr.cfg.seed)->capture_default_str();
    sub->add_option("--log-every", tr.cfg.log_every)->capture_default_str();
    sub->add_option("--width", tr.width)->capture_default_str();
    sub->add_option("--time-dim", tr.time_dim)->capture_default_str();
    sub->add_option("--groups", tr.groups)->capture_default_str();
    sub->add_option("--schedule-steps", tr.schedule_steps)->capture_default_str();
    sub->add_option("--weight-seed", tr.weight_seed)->capture_default_str();
    sub->callback([&tr] { run_train(tr); });

    SampleOpts sm;
    sub = app.add_subcommand("sample", "draw unconditional map stacks");
    sub->add_option("--model", sm.model, "checkpoint path")->required();
    sub->add_option("--out", sm.out, "output .ndt path");
    sub->add_option("--png", sm.png_prefix, "decode and dump PNGs with this prefix");
    sub->add_option("--count", sm.count)->capture_default_str();
    sub->add_option("--resolution", sm.resolution)->capture_default_str();
    sub->add_option("--seed", sm.seed)->capture_default_str();
    sub->add_option("--ddim", sm.ddim, "DDIM steps; 0 = full ancestral")
        ->capture_default_str();
    sub->add_option("--eta", sm.eta)->capture_default_str();
    sub->add_option("--schedule-steps", sm.schedule_steps,
                    "override checkpoint schedule");
    sub->callback([&sm] { run_sample(sm); });

    InpaintOpts in;
    sub = app.add_subcommand("inpaint", "complete maps from a partial observation");
    sub->add_option("--model", in.model, "checkpoint path")->required();
    sub->add_option("--known", in.known, "[10,R,R] .ndt observation")->required();
    sub->add_option("--mask", in.mask, "[R,R] .ndt 0/1 mask")->required();
    sub->add_option("--out", in.out, "output .ndt path");
    sub->add_option("--png", in.png_prefix, "decode and dump PNGs with this prefix");
    sub->add_option("--schedule-steps", in.schedule_steps,
                    "override checkpoint schedule");
    add_sampler_opts(sub, in.sampler);
    sub->callback([&in] { run_inpaint_cmd(in); });

    ReconstructOpts rec;
    sub = app.add_subcommand("reconstruct",
                             "fit geometry to an image, unwrap and inpaint");
    sub->add_option("--model", rec.model, "checkpoint path")->required();
    sub->add_option("--image", rec.image, "input PNG");
    sub->add_option("--landmarks", rec.landmarks, "text file with 'x y' per line");
    sub->add_option("--out-prefix", rec.out_prefix)->capture_default_str();
    sub->add_option("--mm-seed", rec.mm_seed, "morphable-model seed")
        ->capture_default_str();
    sub->add_option("--resolution", rec.resolution)->capture_default_str();
    sub->add_option("--demo-scene", rec.demo_scene,
                    "render benchmark scene N as the input instead");
    sub->add_option("--schedule-steps", rec.schedule_steps,
                    "override checkpoint schedule");
    add_sampler_opts(sub, rec.sampler);
    sub->callback([&rec] { run_reconstruct(rec); });

    BenchOpts be;
    sub = app.add_subcommand("bench", "run the four-sampler comparison");
    sub->add_option("--model", be.model, "checkpoint path")->required();
    sub->add_option("--scenes", be.spec.num_scenes)->capture_default_str();
    sub->add_option("--seed-base", be.spec.chain_seed_base)->capture_default_str();
    sub->add_option("--gen-seed", be.spec.generator_seed)->capture_default_str();
    sub->add_option("--mm-seed", be.spec.model_seed)->capture_default_str();
    sub->add_option("--resolution", be.spec.resolution)->capture_default_str();
    sub->add_option("--image-size", be.spec.image_size)->capture_default_str();
    sub->add_option("--repaint-n", be.spec.repaint_n)->capture_default_str();
    sub->add_option("--ddim-steps", be.spec.ddim_steps)->capture_default_str();
    sub->add_option("--eta", be.spec.ddim_eta)->capture_default_str();
    sub->add_option("--lambda", be.spec.mcg_scale)->capture_default_str();
    sub->add_option("--algos", be.algos, "subset to run (default: all four)")
        ->delimiter(',');
    sub->add_option("--out-text", be.out_text, "write the table here too");
    sub->add_option("--out-json", be.out_json, "write a JSON report");
    sub->add_option("--schedule-steps", be.schedule_steps,
                    "override checkpoint schedule");
    sub->callback([&be] { run_bench(be); });

    EvalOpts ev;
    sub = app.add_subcommand("eval", "compare two [10,R,R] map stacks");
    sub->add_option("--pred", ev.pred)->required();
    sub->add_option("--gt", ev.gt)->required();
    sub->callback([&ev] { run_eval(ev); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
