#include "uvdiff/inpaint.hpp"

#include <cmath>

#include "uvdiff/ops.hpp"
#include "uvdiff/tape.hpp"

namespace uvdiff {

std::string to_string(InpaintAlgo a) {
    switch (a) {
        case InpaintAlgo::score_sde: return "score_sde";
        case InpaintAlgo::repaint: return "repaint";
        case InpaintAlgo::mcg: return "mcg";
        case InpaintAlgo::mcg_ddim: return "mcg_ddim";
    }
    fail_arg("to_string: bad algorithm enum");
}

InpaintAlgo parse_algo(const std::string& name) {
    if (name == "score_sde") return InpaintAlgo::score_sde;
    if (name == "repaint") return InpaintAlgo::repaint;
    if (name == "mcg") return InpaintAlgo::mcg;
    if (name == "mcg_ddim") return InpaintAlgo::mcg_ddim;
    fail_arg("unknown inpainting algorithm '" + name +
             "' (expected score_sde|repaint|mcg|mcg_ddim)");
}

void Observation::validate() const {
    require(mask.rank() == 2 && mask.extent(0) == mask.extent(1),
            "observation: mask must be square [R,R]");
    require(known.rank() == 3 && known.extent(0) == 10 &&
                known.extent(1) == mask.extent(0) && known.extent(2) == mask.extent(1),
            "observation: known must be [10,R,R] matching the mask");
    for (std::size_t i = 0; i < mask.size(); ++i)
        require(mask[i] == 0.0f || mask[i] == 1.0f,
                "observation: mask values must be exactly 0 or 1");
}

double Observation::coverage() const {
    double s = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) s += mask[i];
    return mask.size() ? s / double(mask.size()) : 0.0;
}

namespace {

struct BatchState {
    std::size_t bsz = 0, res = 0, plane = 0;
    Tensor obs_tex;  // [B,3,R,R] observed texture (stacked encoding)
    Tensor mask3;    // [B,3,R,R] 0/1
    std::vector<const Observation*> obs;
    std::vector<std::uint64_t> seeds;
};

// Per-chain standard normal block [C,R,R] stacked into [B,C,R,R], each chain
// drawing from its own stream so batch composition never changes a chain's
// noise sequence.
Tensor batch_noise(const BatchState& st, std::size_t channels,
                   const std::function<Rng(std::uint64_t)>& stream_for) {
    Tensor out(Shape{st.bsz, channels, st.res, st.res});
    float* o = out.mutable_data();
    const std::size_t item = channels * st.plane;
    for (std::size_t b = 0; b < st.bsz; ++b) {
        Rng rng = stream_for(st.seeds[b]);
        rng.fill_normal(o + b * item, item);
    }
    return out;
}

// Forward-noise the observed texture to timestep t (exact copy at t == 0).
Tensor known_at(const BatchState& st, const NoiseSchedule& s, int t, int rep) {
    if (t == 0) return st.obs_tex;
    Tensor eps = batch_noise(st, 3, [&](std::uint64_t seed) {
        return known_stream(seed, t, rep);
    });
    return forward_sample(st.obs_tex, t, eps, s);
}

// Select-by-mask merge of the known texture into the texture channels; a
// plain bit copy so masked texels are exactly the known values, never the
// result of arithmetic that could perturb them.
void merge_known(Tensor& x, const BatchState& st, const Tensor& known_tex) {
    float* xp = x.mutable_data();
    const float* kp = known_tex.data();
    for (std::size_t b = 0; b < st.bsz; ++b) {
        const float* m = st.obs[b]->mask.data();
        for (std::size_t c = 0; c < 3; ++c) {
            float* xc = xp + (b * 10 + c) * st.plane;
            const float* kc = kp + (b * 3 + c) * st.plane;
            for (std::size_t i = 0; i < st.plane; ++i)
                if (m[i] == 1.0f) xc[i] = kc[i];
        }
    }
}

// Manifold-constrained gradient: d/dx_t || (predict_x0(x_t)[tex] - obs) * m ||^2,
// normalized to unit L2 per chain. Chains with ||g|| < 1e-12 (e.g. an empty
// mask) are skipped entirely so their update is bit-identical to the plain
// proposal.
void apply_mcg_update(Tensor& proposal, const Tensor& grad, double lambda,
                      const BatchState& st) {
    float* pp = proposal.mutable_data();
    const float* gp = grad.data();
    const std::size_t item = 10 * st.plane;
    for (std::size_t b = 0; b < st.bsz; ++b) {
        double norm_sq = 0;
        const float* gb = gp + b * item;
        for (std::size_t i = 0; i < item; ++i)
            norm_sq += double(gb[i]) * double(gb[i]);
        const double norm = std::sqrt(norm_sq);
        if (norm < 1e-12) continue;
        float* pb = pp + b * item;
        for (std::size_t i = 0; i < item; ++i)
            pb[i] = float(double(pb[i]) - lambda * double(gb[i]) / norm);
    }
}

void validate_config(const InpaintConfig& cfg, const NoiseSchedule& s) {
    require(cfg.repaint_n >= 1 && cfg.repaint_n < 64,
            "inpaint: repaint_n must be in [1, 63]");
    require(cfg.ddim_steps >= 1 && cfg.ddim_steps <= s.steps(),
            "inpaint: ddim_steps must be in [1, T]");
    require(cfg.eta >= 0.0, "inpaint: eta must be >= 0");
    require(cfg.mcg_scale >= 0.0, "inpaint: mcg_scale must be >= 0");
}

std::vector<InpaintResult> run_batch_impl(const ModelFn<float>& model,
                                          const std::vector<Observation>& observations,
                                          const NoiseSchedule& s,
                                          const InpaintConfig& cfg,
                                          const std::vector<std::uint64_t>& seeds) {
    require(!observations.empty(), "inpaint: empty batch");
    require(seeds.size() == observations.size(),
            "inpaint: need one seed per observation");
    validate_config(cfg, s);
    for (const Observation& o : observations) o.validate();

    BatchState st;
    st.bsz = observations.size();
    st.res = observations[0].resolution();
    st.plane = st.res * st.res;
    st.seeds = seeds;
    for (const Observation& o : observations) {
        require(o.resolution() == st.res, "inpaint: mixed resolutions in batch");
        st.obs.push_back(&o);
    }
    st.obs_tex = Tensor(Shape{st.bsz, 3, st.res, st.res});
    st.mask3 = Tensor(Shape{st.bsz, 3, st.res, st.res});
    {
        float* ot = st.obs_tex.mutable_data();
        float* m3 = st.mask3.mutable_data();
        for (std::size_t b = 0; b < st.bsz; ++b) {
            std::memcpy(ot + b * 3 * st.plane, observations[b].known.data(),
                        3 * st.plane * sizeof(float));
            for (std::size_t c = 0; c < 3; ++c)
                std::memcpy(m3 + (b * 3 + c) * st.plane, observations[b].mask.data(),
                            st.plane * sizeof(float));
        }
    }

    const bool mcg_family =
        cfg.algo == InpaintAlgo::mcg || cfg.algo == InpaintAlgo::mcg_ddim;
    const bool ddim = cfg.algo == InpaintAlgo::mcg_ddim;
    const double eta = ddim ? cfg.eta : 1.0;
    const int reps = cfg.algo == InpaintAlgo::repaint ? cfg.repaint_n : 1;

    // Timestep schedule: (t, t_prev) pairs, full chain or DDIM subsequence.
    std::vector<std::pair<int, int>> steps;
    if (ddim) {
        const std::vector<int> taus = ddim_timesteps(s.steps(), cfg.ddim_steps);
        for (std::size_t i = 0; i < taus.size(); ++i)
            steps.emplace_back(taus[i], i + 1 < taus.size() ? taus[i + 1] : 0);
    } else {
        for (int t = s.steps(); t >= 1; --t) steps.emplace_back(t, t - 1);
    }

    // x_T per chain from its init stream.
    Tensor x(Shape{st.bsz, 10, st.res, st.res});
    {
        float* xp = x.mutable_data();
        const std::size_t item = 10 * st.plane;
        for (std::size_t b = 0; b < st.bsz; ++b) {
            Rng init = init_stream(seeds[b]);
            init.fill_normal(xp + b * item, item);
        }
    }

    std::int64_t fwd = 0, bwd = 0;
    for (const auto& [t, t_prev] : steps) {
        for (int rep = 0; rep < reps; ++rep) {
            Tensor eps_hat;
            Tensor grad;
            if (mcg_family) {
                Tensor x_leaf = x;
                x_leaf.set_tracked(true);
                Tape tape;
                Tensor loss;
                {
                    TapeScope<float> scope(tape);
                    Tensor e = model(x_leaf, t);
                    ++fwd;
                    Tensor x0_hat = predict_x0_taped(x_leaf, e, t, s);
                    Tensor tex = ops::slice(x0_hat, 1, 0, 3);
                    Tensor diff = ops::mul(ops::sub(tex, st.obs_tex), st.mask3);
                    loss = ops::sum(ops::mul(diff, diff));
                    eps_hat = e.detached();
                }
                auto grads = tape.backward(loss);
                ++bwd;
                auto it = grads.find(x_leaf.uid());
                require(it != grads.end(), "inpaint: missing input gradient");
                grad = std::move(it->second);
            } else {
                eps_hat = model(x, t);
                ++fwd;
            }

            const double sigma = ddim_sigma(s, t, t_prev, eta);
            Tensor proposal;
            if (sigma > 0.0) {
                Tensor noise = batch_noise(st, 10, [&](std::uint64_t seed) {
                    return proposal_stream(seed, t, rep);
                });
                proposal = reverse_step_from_eps(x, eps_hat, t, t_prev, eta, s, &noise);
            } else {
                proposal = reverse_step_from_eps(x, eps_hat, t, t_prev, eta, s, nullptr);
            }
            if (mcg_family) apply_mcg_update(proposal, grad, cfg.mcg_scale, st);

            merge_known(proposal, st, known_at(st, s, t_prev, rep));

            if (rep + 1 < reps && t_prev == t - 1) {
                // RePaint resampling: one-step forward back to t.
                Tensor xi = batch_noise(st, 10, [&](std::uint64_t seed) {
                    return renoise_stream(seed, t, rep);
                });
                const double ca = std::sqrt(s.alpha(t));
                const double cb = std::sqrt(s.beta(t));
                Tensor renoised(proposal.shape());
                float* rp = renoised.mutable_data();
                const float *pp = proposal.data(), *np = xi.data();
                for (std::size_t i = 0; i < renoised.size(); ++i)
                    rp[i] = float(ca * double(pp[i]) + cb * double(np[i]));
                x = std::move(renoised);
            } else {
                x = std::move(proposal);
            }
        }
    }

    std::vector<InpaintResult> results(st.bsz);
    const float* xp = x.data();
    const std::size_t item = 10 * st.plane;
    for (std::size_t b = 0; b < st.bsz; ++b) {
        Tensor stacked = Tensor::from_data(
            Shape{10, st.res, st.res},
            std::vector<float>(xp + b * item, xp + (b + 1) * item));
        results[b].quad = unstack_quad(stacked);
        results[b].stacked = std::move(stacked);
        results[b].forward_evals = fwd;
        results[b].backward_evals = bwd;
    }
    return results;
}

InpaintResult run_single(const ModelFn<float>& model, const Observation& obs,
                         const NoiseSchedule& s, InpaintConfig cfg, InpaintAlgo algo) {
    cfg.algo = algo;
    auto r = run_batch_impl(model, {obs}, s, cfg, {cfg.seed});
    return std::move(r.front());
}

} // namespace

InpaintResult score_sde_inpaint(const ModelFn<float>& model, const Observation& obs,
                                const NoiseSchedule& s, const InpaintConfig& cfg) {
    return run_single(model, obs, s, cfg, InpaintAlgo::score_sde);
}

InpaintResult repaint_inpaint(const ModelFn<float>& model, const Observation& obs,
                              const NoiseSchedule& s, const InpaintConfig& cfg) {
    return run_single(model, obs, s, cfg, InpaintAlgo::repaint);
}

InpaintResult mcg_inpaint(const ModelFn<float>& model, const Observation& obs,
                          const NoiseSchedule& s, const InpaintConfig& cfg) {
    return run_single(model, obs, s, cfg, InpaintAlgo::mcg);
}

InpaintResult mcg_ddim_inpaint(const ModelFn<float>& model, const Observation& obs,
                               const NoiseSchedule& s, const InpaintConfig& cfg) {
    return run_single(model, obs, s, cfg, InpaintAlgo::mcg_ddim);
}

InpaintResult run_inpaint(const ModelFn<float>& model, const Observation& obs,
                          const NoiseSchedule& s, const InpaintConfig& cfg) {
    return run_single(model, obs, s, cfg, cfg.algo);
}

std::vector<InpaintResult> run_inpaint_batch(const ModelFn<float>& model,
                                             const std::vector<Observation>& obs,
                                             const NoiseSchedule& s,
                                             const InpaintConfig& cfg,
                                             const std::vector<std::uint64_t>& seeds) {
    return run_batch_impl(model, obs, s, cfg, seeds);
}

} // namespace uvdiff
