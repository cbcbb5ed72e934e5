#include "uvdiff/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "uvdiff/metrics.hpp"
#include "uvdiff/ndt_io.hpp"

namespace uvdiff {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

Eigen::Matrix3d yaw_rotation(double degrees) {
    const double a = degrees * kDegToRad;
    Eigen::Matrix3d r;
    r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return r;
}

std::uint64_t chain_hash(std::uint64_t h, const Tensor& t) {
    return fnv1a(t.data(), t.size() * sizeof(float), h);
}

// Mean over scenes that ignores infinite PSNR entries (bit-perfect scenes);
// all-infinite collapses to infinity, which the writers cap or null out.
double finite_mean(const std::vector<SceneMetrics>& scenes,
                   double SceneMetrics::*field) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& sm : scenes)
        if (std::isfinite(sm.*field)) {
            sum += sm.*field;
            ++n;
        }
    return n == 0 ? std::numeric_limits<double>::infinity() : sum / double(n);
}

nlohmann::json json_or_null(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

} // namespace

std::vector<BenchmarkScene> prepare_scenes(const BenchmarkSpec& spec) {
    require(spec.num_scenes >= 1, "benchmark: need at least one scene");
    require(!spec.yaw_degrees.empty(), "benchmark: needs at least one pose");
    require(spec.resolution >= 11, "benchmark: resolution below SSIM window");
    const MorphableModel mm = MorphableModel::synthetic(spec.model_seed);

    std::vector<BenchmarkScene> scenes;
    scenes.reserve(std::size_t(spec.num_scenes));
    for (int i = 0; i < spec.num_scenes; ++i) {
        BenchmarkScene sc;

        QuadSample sample = make_quad(spec.generator_seed,
                                      kHeldOutIndexOffset + std::uint32_t(i),
                                      spec.resolution);
        sc.gt = std::move(sample.quad);

        sc.gt_camera.rotation =
            yaw_rotation(spec.yaw_degrees[std::size_t(i) % spec.yaw_degrees.size()]);
        sc.gt_camera.scale = 0.38 * spec.image_size;
        sc.gt_camera.translation =
            Eigen::Vector2d(0.5 * spec.image_size, 0.5 * spec.image_size);

        Rng rng = make_stream(spec.chain_seed_base + std::uint64_t(i),
                              StreamDomain::scene, 0);
        Eigen::VectorXd ps(mm.k_shape()), pe(mm.k_expr());
        for (Eigen::Index k = 0; k < ps.size(); ++k) ps[k] = 0.30 * rng.normal();
        for (Eigen::Index k = 0; k < pe.size(); ++k) pe[k] = 0.15 * rng.normal();
        const Mesh gt_mesh = instantiate(mm, ps, pe);

        // The renderer shades rotated normals against the camera-space light,
        // which equals shading model-space normals against the rotated-back
        // light. Re-bake the texture with that model-space light so the
        // unwrapped observation agrees with the ground-truth texture channels.
        const ShadeParams cam_shade; // defaults; light/view in camera space
        ShadeParams model_shade = cam_shade;
        model_shade.light =
            sc.gt_camera.rotation.transpose() * cam_shade.light.normalized();
        model_shade.view =
            sc.gt_camera.rotation.transpose() * cam_shade.view.normalized();
        sc.gt.texture = shade_uv(sc.gt, model_shade);
        sc.gt_stacked = stack_quad(sc.gt);

        RenderParams rp;
        rp.width = rp.height = spec.image_size;
        rp.shade = cam_shade;
        sc.image = render_mesh(gt_mesh, sc.gt_camera, sc.gt, rp);

        sc.gt_landmarks.reserve(mm.landmarks.size());
        for (int v : mm.landmarks)
            sc.gt_landmarks.push_back(
                sc.gt_camera.project(gt_mesh.vertices[std::size_t(v)]));
        sc.fit = fit_morphable(sc.gt_landmarks, mm);
        sc.fitted_mesh = instantiate(mm, sc.fit.shape_coeffs, sc.fit.expr_coeffs);
        sc.observation = unwrap(sc.image, sc.fitted_mesh, sc.fit.camera, spec.resolution);
        sc.observation.validate();
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

BenchmarkReport run_benchmark(const ModelFn<float>& model, const NoiseSchedule& s,
                              const BenchmarkSpec& spec) {
    BenchmarkReport report;
    report.spec = spec;
    report.schedule_steps = s.steps();

    const std::vector<BenchmarkScene> scenes = prepare_scenes(spec);

    std::vector<Observation> obs;
    std::vector<std::uint64_t> seeds;
    std::uint64_t ih = 0xcbf29ce484222325ull;
    double coverage = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        obs.push_back(scenes[i].observation);
        seeds.push_back(spec.chain_seed_base + i);
        coverage += scenes[i].observation.coverage();
        ih = chain_hash(ih, scenes[i].observation.known);
        ih = chain_hash(ih, scenes[i].observation.mask);
        ih = chain_hash(ih, scenes[i].gt_stacked);
    }
    report.mean_coverage = coverage / double(scenes.size());
    report.input_hash = ih;

    for (InpaintAlgo algo : spec.algos) {
        InpaintConfig cfg;
        cfg.algo = algo;
        cfg.repaint_n = spec.repaint_n;
        cfg.ddim_steps = spec.ddim_steps;
        cfg.eta = spec.ddim_eta;
        cfg.mcg_scale = spec.mcg_scale;

        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<InpaintResult> results =
            run_inpaint_batch(model, obs, s, cfg, seeds);
        const auto t1 = std::chrono::steady_clock::now();

        AlgoReport ar;
        ar.algo = algo;
        ar.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        std::uint64_t rh = 0xcbf29ce484222325ull;
        for (std::size_t i = 0; i < results.size(); ++i) {
            const InpaintResult& res = results[i];
            ar.forward_evals += res.forward_evals;
            ar.backward_evals += res.backward_evals;
            rh = chain_hash(rh, res.stacked);

            SceneMetrics sm;
            sm.scene = int(i);
            sm.psnr_texture = psnr(res.quad.texture, scenes[i].gt.texture);
            sm.psnr_diffuse = psnr(res.quad.diffuse, scenes[i].gt.diffuse);
            sm.psnr_specular = psnr(res.quad.specular, scenes[i].gt.specular);
            // Normals live in [-1,1]; peak 2 gives the same dB as mapping
            // both arguments to [0,1] first.
            sm.psnr_normal = psnr(res.quad.normal, scenes[i].gt.normal, 2.0);
            sm.ssim_diffuse = ssim(res.quad.diffuse, scenes[i].gt.diffuse);
            ar.scenes.push_back(sm);
        }
        ar.result_hash = rh;
        ar.mean_psnr_texture = finite_mean(ar.scenes, &SceneMetrics::psnr_texture);
        ar.mean_psnr_diffuse = finite_mean(ar.scenes, &SceneMetrics::psnr_diffuse);
        ar.mean_psnr_specular = finite_mean(ar.scenes, &SceneMetrics::psnr_specular);
        ar.mean_psnr_normal = finite_mean(ar.scenes, &SceneMetrics::psnr_normal);
        ar.mean_ssim_diffuse = finite_mean(ar.scenes, &SceneMetrics::ssim_diffuse);
        report.algos.push_back(std::move(ar));
    }
    return report;
}

std::string report_text(const BenchmarkReport& report) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line,
                  "uv reflectance inpainting benchmark\n"
                  "scenes: %d  resolution: %d  image: %dx%d  schedule steps: %d\n"
                  "mean mask coverage: %.3f  input hash: %016llx\n\n",
                  report.spec.num_scenes, report.spec.resolution,
                  report.spec.image_size, report.spec.image_size,
                  report.schedule_steps, report.mean_coverage,
                  static_cast<unsigned long long>(report.input_hash));
    out += line;
    std::snprintf(line, sizeof line, "%-10s %9s %8s %8s %9s %9s %9s %9s %9s\n",
                  "algo", "wall[s]", "fwd", "bwd", "psnr-tex", "psnr-dif",
                  "psnr-spc", "psnr-nrm", "ssim-dif");
    out += line;
    for (const AlgoReport& ar : report.algos) {
        std::snprintf(line, sizeof line,
                      "%-10s %9.2f %8lld %8lld %9.2f %9.2f %9.2f %9.2f %9.4f\n",
                      to_string(ar.algo).c_str(), ar.wall_seconds,
                      static_cast<long long>(ar.forward_evals),
                      static_cast<long long>(ar.backward_evals),
                      psnr_display(ar.mean_psnr_texture),
                      psnr_display(ar.mean_psnr_diffuse),
                      psnr_display(ar.mean_psnr_specular),
                      psnr_display(ar.mean_psnr_normal), ar.mean_ssim_diffuse);
        out += line;
    }
    return out;
}

std::string report_json(const BenchmarkReport& report) {
    nlohmann::json j;
    j["spec"] = {
        {"num_scenes", report.spec.num_scenes},
        {"chain_seed_base", report.spec.chain_seed_base},
        {"generator_seed", report.spec.generator_seed},
        {"model_seed", report.spec.model_seed},
        {"resolution", report.spec.resolution},
        {"image_size", report.spec.image_size},
        {"yaw_degrees", report.spec.yaw_degrees},
        {"repaint_n", report.spec.repaint_n},
        {"ddim_steps", report.spec.ddim_steps},
        {"ddim_eta", report.spec.ddim_eta},
        {"mcg_scale", report.spec.mcg_scale},
    };
    j["schedule_steps"] = report.schedule_steps;
    j["mean_coverage"] = report.mean_coverage;
    char hex[24];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(report.input_hash));
    j["input_hash"] = hex;
    j["algos"] = nlohmann::json::array();
    for (const AlgoReport& ar : report.algos) {
        nlohmann::json ja;
        ja["algo"] = to_string(ar.algo);
        ja["wall_seconds"] = ar.wall_seconds;
        ja["forward_evals"] = ar.forward_evals;
        ja["backward_evals"] = ar.backward_evals;
        std::snprintf(hex, sizeof hex, "%016llx",
                      static_cast<unsigned long long>(ar.result_hash));
        ja["result_hash"] = hex;
        ja["mean"] = {
            {"psnr_texture", json_or_null(ar.mean_psnr_texture)},
            {"psnr_diffuse", json_or_null(ar.mean_psnr_diffuse)},
            {"psnr_specular", json_or_null(ar.mean_psnr_specular)},
            {"psnr_normal", json_or_null(ar.mean_psnr_normal)},
            {"ssim_diffuse", ar.mean_ssim_diffuse},
        };
        ja["scenes"] = nlohmann::json::array();
        for (const SceneMetrics& sm : ar.scenes)
            ja["scenes"].push_back({
                {"scene", sm.scene},
                {"psnr_texture", json_or_null(sm.psnr_texture)},
                {"psnr_diffuse", json_or_null(sm.psnr_diffuse)},
                {"psnr_specular", json_or_null(sm.psnr_specular)},
                {"psnr_normal", json_or_null(sm.psnr_normal)},
                {"ssim_diffuse", sm.ssim_diffuse},
            });
        j["algos"].push_back(std::move(ja));
    }
    return j.dump(2) + "\n";
}

const AlgoReport* find_algo(const BenchmarkReport& report, InpaintAlgo algo) {
    for (const AlgoReport& ar : report.algos)
        if (ar.algo == algo) return &ar;
    return nullptr;
}

} // namespace uvdiff
