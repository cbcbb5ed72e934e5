#include "uvdiff/denoiser.hpp"

#include <cmath>

#include "uvdiff/ops.hpp"

namespace uvdiff {

template <class T>
TensorT<T> timestep_embedding(std::span<const int> ts, int dim) {
    require(dim >= 2 && dim % 2 == 0, "timestep_embedding: dim must be even");
    const int half = dim / 2;
    TensorT<T> out(Shape{ts.size(), std::size_t(dim)});
    T* o = out.mutable_data();
    const double log_max = std::log(10000.0);
    for (std::size_t b = 0; b < ts.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            const double f = std::exp(-log_max * double(i) / double(half));
            const double a = double(ts[b]) * f;
            o[b * std::size_t(dim) + std::size_t(i)] = T(std::sin(a));
            o[b * std::size_t(dim) + std::size_t(half + i)] = T(std::cos(a));
        }
    }
    return out;
}

namespace {

template <class T>
TensorT<T> init_conv(std::size_t oc, std::size_t ic, int k, Rng& rng) {
    TensorT<T> w(Shape{oc, ic, std::size_t(k), std::size_t(k)});
    const double std_dev = std::sqrt(2.0 / (double(ic) * k * k));
    T* p = w.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) p[i] = T(rng.normal() * std_dev);
    return w;
}

template <class T>
TensorT<T> init_linear(std::size_t in, std::size_t out, Rng& rng) {
    TensorT<T> w(Shape{in, out});
    const double std_dev = std::sqrt(1.0 / double(in));
    T* p = w.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) p[i] = T(rng.normal() * std_dev);
    return w;
}

const char* kStageNames[] = {"d0a", "d0b", "d1a", "d1b", "d2a", "d2b",
                             "u1a", "u1b", "u0a", "u0b", "head"};

} // namespace

template <class T>
UNetT<T>::UNetT(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    const std::size_t w0 = std::size_t(cfg.base_width);
    const std::size_t w1 = 2 * w0, w2 = 4 * w0;
    const std::size_t td = std::size_t(cfg.time_dim);
    require(cfg.base_width >= cfg.groups && cfg.base_width % cfg.groups == 0,
            "UNet: groups must divide base_width");
    Rng rng = make_stream(seed, StreamDomain::weights, 0);

    stem_w_ = init_conv<T>(w0, std::size_t(cfg.in_channels), 3, rng);
    stem_b_ = TensorT<T>(Shape{w0});
    time_w_ = init_linear<T>(td, td, rng);
    time_b_ = TensorT<T>(Shape{td});

    struct Plan {
        std::size_t in, out;
        int stride;
        bool up, temb;
    };
    const Plan plan[] = {
        {w0, w0, 1, false, true},  // d0a
        {w0, w0, 1, false, false}, // d0b
        {w0, w1, 2, false, true},  // d1a
        {w1, w1, 1, false, false}, // d1b
        {w1, w2, 2, false, true},  // d2a
        {w2, w2, 1, false, false}, // d2b
        {w2, w1, 1, true, true},   // u1a
        {w1, w1, 1, false, false}, // u1b
        {w1, w0, 1, true, true},   // u0a
        {w0, w0, 1, false, false}, // u0b
        {w0, std::size_t(cfg.in_channels), 1, false, false}, // head
    };
    for (const Plan& p : plan) {
        Stage st;
        st.norm_gain = TensorT<T>::ones(Shape{p.in});
        st.norm_bias = TensorT<T>(Shape{p.in});
        st.conv_w = init_conv<T>(p.out, p.in, 3, rng);
        st.conv_b = TensorT<T>(Shape{p.out});
        if (p.temb) {
            st.temb_w = init_linear<T>(td, p.out, rng);
            st.temb_b = TensorT<T>(Shape{p.out});
        }
        st.stride = p.stride;
        st.upsample = p.up;
        stages_.push_back(std::move(st));
    }
    // Zero head: an untrained net predicts exactly zero noise.
    stages_.back().conv_w = TensorT<T>(stages_.back().conv_w.shape());
    stages_.back().conv_b = TensorT<T>(stages_.back().conv_b.shape());
}

template <class T>
TensorT<T> UNetT<T>::run_stage(const Stage& st, const TensorT<T>& h,
                               const TensorT<T>* temb) const {
    TensorT<T> g = ops::group_norm(h, cfg_.groups, st.norm_gain, st.norm_bias);
    g = ops::silu(g);
    if (st.upsample) g = ops::upsample_nearest2(g);
    TensorT<T> y = ops::conv2d(g, st.conv_w, &st.conv_b, st.stride, 1);
    if (temb && st.temb_w.defined()) {
        TensorT<T> v = ops::add_channel(ops::matmul(*temb, st.temb_w), st.temb_b);
        y = ops::add_channel(y, v);
    }
    return y;
}

template <class T>
TensorT<T> UNetT<T>::forward(const TensorT<T>& x, std::span<const int> ts) const {
    require(!stages_.empty(), "UNet: uninitialized model");
    require(x.rank() == 4, "UNet: input must be [B,C,H,W]");
    require(x.extent(1) == std::size_t(cfg_.in_channels),
            "UNet: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                std::to_string(x.extent(1)));
    require(x.extent(2) % 4 == 0 && x.extent(3) % 4 == 0,
            "UNet: H and W must be divisible by 4");
    const std::size_t bsz = x.extent(0);
    std::vector<int> ts_full;
    if (ts.size() == 1) {
        ts_full.assign(bsz, ts[0]);
    } else {
        require(ts.size() == bsz, "UNet: one timestep per batch item (or one total)");
        ts_full.assign(ts.begin(), ts.end());
    }
    for (int t : ts_full) require(t >= 1, "UNet: timesteps are 1-based");

    TensorT<T> temb0 = timestep_embedding<T>(ts_full, cfg_.time_dim);
    TensorT<T> temb =
        ops::silu(ops::add_channel(ops::matmul(temb0, time_w_), time_b_));

    // Same-width stride-1 stages act as residual corrections (h + f(h)); the
    // short path keeps near-identity maps learnable at high noise levels,
    // where eps is almost a rescaling of x_t.
    TensorT<T> h = ops::conv2d(x, stem_w_, &stem_b_, 1, 1);
    h = ops::add(h, run_stage(stages_[0], h, &temb));   // d0a
    h = ops::add(h, run_stage(stages_[1], h, nullptr)); // d0b
    TensorT<T> skip0 = h;
    h = run_stage(stages_[2], h, &temb); // d1a (stride 2)
    h = ops::add(h, run_stage(stages_[3], h, nullptr)); // d1b
    TensorT<T> skip1 = h;
    h = run_stage(stages_[4], h, &temb); // d2a (stride 2)
    h = ops::add(h, run_stage(stages_[5], h, nullptr)); // d2b
    h = run_stage(stages_[6], h, &temb); // u1a (upsample)
    h = ops::add(h, skip1);
    h = ops::add(h, run_stage(stages_[7], h, nullptr)); // u1b
    h = run_stage(stages_[8], h, &temb); // u0a (upsample)
    h = ops::add(h, skip0);
    h = ops::add(h, run_stage(stages_[9], h, nullptr)); // u0b
    return run_stage(stages_[10], h, nullptr); // head
}

template <class T>
ModelFn<T> UNetT<T>::as_model() const {
    UNetT<T> snapshot = *this;
    return [snapshot](const TensorT<T>& x, int t) { return snapshot(x, t); };
}

template <class T>
void UNetT<T>::for_each_param(
    const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    fn("stem.w", stem_w_);
    fn("stem.b", stem_b_);
    fn("time.w", time_w_);
    fn("time.b", time_b_);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        const std::string n = kStageNames[i];
        Stage& st = stages_[i];
        fn(n + ".norm.gain", st.norm_gain);
        fn(n + ".norm.bias", st.norm_bias);
        fn(n + ".conv.w", st.conv_w);
        fn(n + ".conv.b", st.conv_b);
        if (st.temb_w.defined()) {
            fn(n + ".temb.w", st.temb_w);
            fn(n + ".temb.b", st.temb_b);
        }
    }
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>*>> UNetT<T>::named_params() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    for_each_param([&](const std::string& n, TensorT<T>& t) { out.emplace_back(n, &t); });
    return out;
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>>> UNetT<T>::named_params() const {
    std::vector<std::pair<std::string, TensorT<T>>> out;
    const_cast<UNetT<T>*>(this)->for_each_param(
        [&](const std::string& n, TensorT<T>& t) { out.emplace_back(n, t); });
    return out;
}

template <class T>
std::size_t UNetT<T>::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_params()) n += t.size();
    return n;
}

template <class T>
void UNetT<T>::set_tracked(bool on) {
    for_each_param([on](const std::string&, TensorT<T>& t) { t.set_tracked(on); });
}

template <class T>
template <class U>
UNetT<U> UNetT<T>::cast() const {
    UNetT<U> out;
    out.cfg_ = cfg_;
    out.stem_w_ = stem_w_.template cast<U>();
    out.stem_b_ = stem_b_.template cast<U>();
    out.time_w_ = time_w_.template cast<U>();
    out.time_b_ = time_b_.template cast<U>();
    for (const Stage& st : stages_) {
        typename UNetT<U>::Stage os;
        os.norm_gain = st.norm_gain.template cast<U>();
        os.norm_bias = st.norm_bias.template cast<U>();
        os.conv_w = st.conv_w.template cast<U>();
        os.conv_b = st.conv_b.template cast<U>();
        if (st.temb_w.defined()) {
            os.temb_w = st.temb_w.template cast<U>();
            os.temb_b = st.temb_b.template cast<U>();
        }
        os.stride = st.stride;
        os.upsample = st.upsample;
        out.stages_.push_back(std::move(os));
    }
    return out;
}

void save_denoiser(const std::string& path, const UNet& net,
                   const std::map<std::string, std::string>& extra_meta) {
    Checkpoint ckpt;
    const UNetConfig& c = net.config();
    ckpt.meta["format"] = "uvdiff-denoiser";
    ckpt.meta["in_channels"] = std::to_string(c.in_channels);
    ckpt.meta["base_width"] = std::to_string(c.base_width);
    ckpt.meta["time_dim"] = std::to_string(c.time_dim);
    ckpt.meta["groups"] = std::to_string(c.groups);
    for (const auto& [k, v] : extra_meta) ckpt.meta[k] = v;
    ckpt.tensors = net.named_params();
    write_checkpoint(path, ckpt);
}

std::pair<UNet, std::map<std::string, std::string>> load_denoiser(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    auto need = [&](const char* k) {
        auto it = ckpt.meta.find(k);
        if (it == ckpt.meta.end())
            fail_state("load_denoiser: checkpoint missing meta key '" + std::string(k) + "'");
        return std::stoi(it->second);
    };
    UNetConfig cfg;
    cfg.in_channels = need("in_channels");
    cfg.base_width = need("base_width");
    cfg.time_dim = need("time_dim");
    cfg.groups = need("groups");
    UNet net(cfg, 0);
    std::map<std::string, Tensor> by_name(ckpt.tensors.begin(), ckpt.tensors.end());
    std::size_t assigned = 0;
    for (auto& [name, ptr] : net.named_params()) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            fail_state("load_denoiser: checkpoint missing tensor '" + name + "'");
        require(it->second.same_shape(*ptr),
                "load_denoiser: shape mismatch for '" + name + "'");
        *ptr = it->second;
        ++assigned;
    }
    if (assigned != ckpt.tensors.size())
        fail_state("load_denoiser: checkpoint holds unexpected extra tensors");
    return {std::move(net), std::move(ckpt.meta)};
}

template TensorT<float> timestep_embedding(std::span<const int>, int);
template TensorT<double> timestep_embedding(std::span<const int>, int);
template class UNetT<float>;
template class UNetT<double>;
template UNetT<double> UNetT<float>::cast<double>() const;
template UNetT<float> UNetT<double>::cast<float>() const;

} // namespace uvdiff
