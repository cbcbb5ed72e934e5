#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uvdiff/inpaint.hpp"
#include "uvdiff/uvgeom.hpp"

namespace uvdiff {

// Everything that defines a benchmark run. Scene content (held-out quads,
// poses, morphable-model draw) is a pure function of the seeds here, so two
// runs with equal specs consume bit-identical inputs.
struct BenchmarkSpec {
    int num_scenes = 20;
    std::uint64_t chain_seed_base = 1000; // scene i samples with seed base + i
    std::uint64_t generator_seed = 1000;  // held-out quads (same generator as the
                                          // training set, disjoint index range)
    std::uint64_t model_seed = 4242;      // morphable-model draw
    int resolution = 32;                  // UV map resolution
    int image_size = 160;                 // rendered views are square
    std::vector<double> yaw_degrees = {0.0, 35.0, -35.0}; // cycled over scenes
    int repaint_n = 10;
    int ddim_steps = 200;
    double ddim_eta = 0.0;
    double mcg_scale = 1.0;
    std::vector<InpaintAlgo> algos = {InpaintAlgo::score_sde, InpaintAlgo::repaint,
                                      InpaintAlgo::mcg, InpaintAlgo::mcg_ddim};
};

// One prepared scene: ground truth plus the fitted geometry and the partial
// observation every sampler starts from.
struct BenchmarkScene {
    ReflectanceQuad gt;   // texture re-shaded for this scene's light
    Tensor gt_stacked;    // [10,R,R]
    Camera gt_camera;
    std::vector<Eigen::Vector2d> gt_landmarks; // projected through gt_camera
    FitResult fit;
    Mesh fitted_mesh;
    Image image;          // rendered view the observation is unwrapped from
    Observation observation;
};

struct SceneMetrics {
    int scene = 0;
    double psnr_texture = 0;
    double psnr_diffuse = 0;
    double psnr_specular = 0;
    double psnr_normal = 0;
    double ssim_diffuse = 0;
};

struct AlgoReport {
    InpaintAlgo algo = InpaintAlgo::score_sde;
    double wall_seconds = 0;
    std::int64_t forward_evals = 0;  // summed over scenes
    std::int64_t backward_evals = 0;
    std::vector<SceneMetrics> scenes;
    std::uint64_t result_hash = 0; // FNV-1a over all result tensors, in order
    // Means over scenes (PSNR means ignore infinite entries; if every entry
    // is infinite the mean itself is infinite).
    double mean_psnr_texture = 0;
    double mean_psnr_diffuse = 0;
    double mean_psnr_specular = 0;
    double mean_psnr_normal = 0;
    double mean_ssim_diffuse = 0;
};

struct BenchmarkReport {
    BenchmarkSpec spec;
    int schedule_steps = 0;
    double mean_coverage = 0;       // observed mask fraction, averaged
    std::uint64_t input_hash = 0;   // FNV-1a over observations + GT stacks
    std::vector<AlgoReport> algos;
};

// Deterministic scene construction: draw a held-out quad, re-shade its
// texture for the scene pose, render the view, fit the morphable model to
// the projected landmarks and unwrap the partial texture observation.
std::vector<BenchmarkScene> prepare_scenes(const BenchmarkSpec& spec);

// Runs every configured sampler over all scenes (one lockstep batch per
// sampler, which is what the timing column measures) and collects metrics.
BenchmarkReport run_benchmark(const ModelFn<float>& model, const NoiseSchedule& s,
                              const BenchmarkSpec& spec);

std::string report_text(const BenchmarkReport& report);
std::string report_json(const BenchmarkReport& report); // infinite PSNR -> null

const AlgoReport* find_algo(const BenchmarkReport& report, InpaintAlgo algo);

} // namespace uvdiff
