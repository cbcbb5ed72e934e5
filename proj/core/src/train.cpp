#include "uvdiff/train.hpp"

#include <cmath>

#include "uvdiff/ops.hpp"
#include "uvdiff/tape.hpp"

namespace uvdiff {

TrainStats train_denoiser(UNet& net, const Tensor& dataset, const NoiseSchedule& s,
                          const TrainConfig& cfg,
                          const std::function<void(int, double)>& progress) {
    require(dataset.rank() == 4, "train: dataset must be [N,C,H,W]");
    require(dataset.extent(1) == std::size_t(net.config().in_channels),
            "train: dataset channel count does not match the model");
    require(cfg.steps >= 1 && cfg.batch >= 1, "train: bad steps/batch");
    const std::size_t n_items = dataset.extent(0);
    const std::size_t c = dataset.extent(1), h = dataset.extent(2), w = dataset.extent(3);
    const std::size_t item = c * h * w;
    const std::size_t bsz = std::size_t(cfg.batch);

    net.set_tracked(true);
    auto params = net.named_params();
    // Adam moments keyed by parameter position (uids change on every update).
    std::vector<std::vector<double>> m(params.size()), v(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].second->size(), 0.0);
        v[i].assign(params[i].second->size(), 0.0);
    }

    TrainStats stats;
    double ema = 0.0;
    double first_sum = 0.0;
    int first_n = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = make_stream(cfg.seed, StreamDomain::train, std::uint32_t(step));

        std::vector<int> ts(bsz);
        Tensor x_t(Shape{bsz, c, h, w});
        Tensor eps(Shape{bsz, c, h, w});
        float* xp = x_t.mutable_data();
        float* ep = eps.mutable_data();
        const float* dp = dataset.data();
        for (std::size_t b = 0; b < bsz; ++b) {
            const std::size_t idx = std::size_t(rng.uniform_int(0, int(n_items)));
            const int t = rng.uniform_int(1, s.steps() + 1);
            ts[b] = t;
            rng.fill_normal(ep + b * item, item);
            const double ca = std::sqrt(s.alpha_bar(t));
            const double cb = std::sqrt(1.0 - s.alpha_bar(t));
            const float* x0 = dp + idx * item;
            float* xb = xp + b * item;
            const float* eb = ep + b * item;
            for (std::size_t j = 0; j < item; ++j)
                xb[j] = float(ca * double(x0[j]) + cb * double(eb[j]));
        }

        Tape tape;
        Tensor loss;
        {
            TapeScope<float> scope(tape);
            Tensor out = net.forward(x_t, ts);
            Tensor d = ops::sub(out, eps);
            loss = ops::mean(ops::mul(d, d));
        }
        auto grads = tape.backward(loss);

        double gnorm_sq = 0.0;
        std::vector<const Tensor*> gptr(params.size(), nullptr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto it = grads.find(params[i].second->uid());
            if (it == grads.end()) continue; // e.g. zero-init head bias unused
            gptr[i] = &it->second;
            const float* g = it->second.data();
            for (std::size_t j = 0; j < it->second.size(); ++j)
                gnorm_sq += double(g[j]) * double(g[j]);
        }
        const double gnorm = std::sqrt(gnorm_sq);
        const double clip = (cfg.clip_norm > 0 && gnorm > cfg.clip_norm)
                                ? cfg.clip_norm / (gnorm + 1e-12)
                                : 1.0;

        const double k = double(step + 1);
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, k);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, k);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!gptr[i]) continue;
            Tensor& p = *params[i].second;
            float* pd = p.mutable_data();
            const float* g = gptr[i]->data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = double(g[j]) * clip;
                m[i][j] = cfg.adam_beta1 * m[i][j] + (1.0 - cfg.adam_beta1) * gj;
                v[i][j] = cfg.adam_beta2 * v[i][j] + (1.0 - cfg.adam_beta2) * gj * gj;
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                pd[j] = float(double(pd[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
            }
        }

        const double loss_val = double(loss[0]);
        if (!std::isfinite(loss_val)) fail_state("train: loss diverged (non-finite)");
        ema = step == 0 ? loss_val : 0.99 * ema + 0.01 * loss_val;
        if (step < 100) {
            first_sum += loss_val;
            ++first_n;
        }
        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            stats.loss_log.emplace_back(step, ema);
            if (progress) progress(step, ema);
        }
    }

    stats.first_window_mean = first_n ? first_sum / first_n : 0.0;
    stats.final_loss_ema = ema;
    net.set_tracked(false);
    return stats;
}

} // namespace uvdiff
