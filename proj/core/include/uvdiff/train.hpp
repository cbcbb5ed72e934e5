#pragma once

#include <functional>

#include "uvdiff/denoiser.hpp"
#include "uvdiff/schedule.hpp"

namespace uvdiff {

struct TrainConfig {
    int steps = 20000;
    int batch = 4;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0; // global-norm gradient clip; <= 0 disables
    std::uint64_t seed = 7;
    int log_every = 200;
};

struct TrainStats {
    std::vector<std::pair<int, double>> loss_log; // (step, ema) every log_every
    double first_window_mean = 0; // mean loss of the first 100 steps
    double final_loss_ema = 0;    // EMA (alpha = 0.01) at the last step
};

// Standard denoising objective: per step, draw a batch of dataset items,
// per-item timesteps and noise (all from per-step Philox streams, so a run
// is reproducible and resumable at any step index), noise the batch, and do
// one Adam step on mean((eps_hat - eps)^2). Weight tracking is enabled for
// the duration of the call and switched off again before returning.
TrainStats train_denoiser(UNet& net, const Tensor& dataset, const NoiseSchedule& s,
                          const TrainConfig& cfg,
                          const std::function<void(int, double)>& progress = {});

} // namespace uvdiff
