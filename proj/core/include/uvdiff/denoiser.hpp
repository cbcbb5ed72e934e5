#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uvdiff/diffusion.hpp"
#include "uvdiff/ndt_io.hpp"
#include "uvdiff/tensor.hpp"

namespace uvdiff {

// Compact UV-map U-Net. Three resolutions (R, R/2, R/4) with channel widths
// (w, 2w, 4w), stride-2 convolutions down, nearest-neighbour upsampling up,
// additive skip connections, and a sinusoidal time embedding injected after
// the first conv of each resolution stage. The output head is zero-
// initialized so an untrained model predicts eps = 0.
struct UNetConfig {
    int in_channels = 10;
    int base_width = 32;
    int time_dim = 64;
    int groups = 8; // group-norm groups; must divide every stage width
};

// [B, dim] embedding of integer timesteps: sin/cos pairs over a log-spaced
// frequency ladder (10000^(-i/half)). Constant w.r.t. the tape.
template <class T>
TensorT<T> timestep_embedding(std::span<const int> ts, int dim);

template <class T>
class UNetT {
public:
    UNetT() = default;
    // Fresh random weights drawn from the dedicated weight-init stream.
    UNetT(const UNetConfig& cfg, std::uint64_t seed);

    const UNetConfig& config() const { return cfg_; }

    // x [B,C,H,W] with H, W divisible by 4; ts holds one timestep per batch
    // item, or a single timestep broadcast to the whole batch.
    TensorT<T> forward(const TensorT<T>& x, std::span<const int> ts) const;

    TensorT<T> operator()(const TensorT<T>& x, int t) const {
        return forward(x, std::span<const int>(&t, 1));
    }

    // Snapshot of the current weights as a sampler-facing callable. Capture
    // is by value (cheap, copy-on-write), so later weight updates do not
    // affect an already-created model function.
    ModelFn<T> as_model() const;

    std::vector<std::pair<std::string, TensorT<T>*>> named_params();
    std::vector<std::pair<std::string, TensorT<T>>> named_params() const;
    std::size_t param_count() const;

    // Enables/disables weight-gradient tracking (training on/off). Input
    // gradients still flow when weights are untracked.
    void set_tracked(bool on);

    template <class U> UNetT<U> cast() const;

private:
    template <class U> friend class UNetT;

    struct Stage {
        TensorT<T> norm_gain, norm_bias;
        TensorT<T> conv_w, conv_b;
        TensorT<T> temb_w, temb_b; // undefined when the stage has no injection
        int stride = 1;
        bool upsample = false;
    };

    TensorT<T> run_stage(const Stage& st, const TensorT<T>& h,
                         const TensorT<T>* temb) const;
    void for_each_param(const std::function<void(const std::string&, TensorT<T>&)>& fn);

    UNetConfig cfg_;
    TensorT<T> stem_w_, stem_b_;
    TensorT<T> time_w_, time_b_;
    // d0a d0b | d1a d1b | d2a d2b | u1a u1b | u0a u0b | head
    std::vector<Stage> stages_;
};

using UNet = UNetT<float>;

// Checkpoint round trip (float weights). extra_meta is merged into the file
// header next to the architecture fields.
void save_denoiser(const std::string& path, const UNet& net,
                   const std::map<std::string, std::string>& extra_meta = {});
std::pair<UNet, std::map<std::string, std::string>> load_denoiser(const std::string& path);

} // namespace uvdiff
