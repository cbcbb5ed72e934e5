#pragma once

#include <string>
#include <vector>

#include "uvdiff/diffusion.hpp"
#include "uvdiff/synthdata.hpp"

namespace uvdiff {

enum class InpaintAlgo { score_sde, repaint, mcg, mcg_ddim };

std::string to_string(InpaintAlgo a);
InpaintAlgo parse_algo(const std::string& name); // throws on unknown name

// Partial observation of a stacked quad: `known` is [10,R,R] in the stacked
// [-1,1] encoding with the unwrapped texture in channels 0..2 (zero where
// unobserved); channels 3..9 are ignored — reflectance is never observed.
// `mask` is [R,R] with values exactly 0 or 1 (1 = texture visible).
struct Observation {
    Tensor known;
    Tensor mask;

    void validate() const;
    std::size_t resolution() const { return mask.extent(0); }
    double coverage() const; // fraction of mask == 1
};

struct InpaintConfig {
    InpaintAlgo algo = InpaintAlgo::mcg;
    int repaint_n = 10;     // RePaint resampling repetitions per timestep
    int ddim_steps = 200;   // DDIM subsequence length (mcg_ddim)
    double eta = 0.0;       // DDIM stochasticity (mcg_ddim)
    double mcg_scale = 1.0; // guidance step size lambda (mcg family)
    std::uint64_t seed = 0;
};

struct InpaintResult {
    Tensor stacked;       // [10,R,R], masked texture texels bit-equal to the
                          // observation by construction
    ReflectanceQuad quad; // decoded maps
    // Per-run evaluation counters, incremented where the network actually
    // runs: forward at each model call, backward at each tape backward pass.
    std::int64_t forward_evals = 0;
    std::int64_t backward_evals = 0;
};

// The four samplers. All of them draw noise from purpose-keyed streams of
// cfg.seed, so for a shared seed: repaint with n = 1 matches score_sde
// bit-for-bit, mcg_ddim with N = T and eta = 1 matches mcg bit-for-bit, and
// an all-zero mask reproduces the corresponding unconditional sampler.
InpaintResult score_sde_inpaint(const ModelFn<float>& model, const Observation& obs,
                                const NoiseSchedule& s, const InpaintConfig& cfg);
InpaintResult repaint_inpaint(const ModelFn<float>& model, const Observation& obs,
                              const NoiseSchedule& s, const InpaintConfig& cfg);
InpaintResult mcg_inpaint(const ModelFn<float>& model, const Observation& obs,
                          const NoiseSchedule& s, const InpaintConfig& cfg);
InpaintResult mcg_ddim_inpaint(const ModelFn<float>& model, const Observation& obs,
                               const NoiseSchedule& s, const InpaintConfig& cfg);

// Dispatch on cfg.algo.
InpaintResult run_inpaint(const ModelFn<float>& model, const Observation& obs,
                          const NoiseSchedule& s, const InpaintConfig& cfg);

// Lockstep-batched variant: all chains advance together through shared model
// evaluations, while each chain keeps its own seed-derived noise streams,
// mask, observation and gradient normalization. Statistically equivalent to
// independent runs; used by the benchmark to amortize GEMM cost.
std::vector<InpaintResult> run_inpaint_batch(const ModelFn<float>& model,
                                             const std::vector<Observation>& obs,
                                             const NoiseSchedule& s,
                                             const InpaintConfig& cfg,
                                             const std::vector<std::uint64_t>& seeds);

} // namespace uvdiff
