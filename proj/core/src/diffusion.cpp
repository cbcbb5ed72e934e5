#include "uvdiff/diffusion.hpp"

#include <cmath>

#include "uvdiff/ops.hpp"

namespace uvdiff {

template <class T>
TensorT<T> forward_sample(const TensorT<T>& x0, int t, const TensorT<T>& eps,
                          const NoiseSchedule& s) {
    require(x0.same_shape(eps), "forward_sample: x0/eps shape mismatch");
    const double a = std::sqrt(s.alpha_bar(t));
    const double b = std::sqrt(1.0 - s.alpha_bar(t));
    TensorT<T> out(x0.shape());
    T* o = out.mutable_data();
    const T *p0 = x0.data(), *pe = eps.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        o[i] = T(a * double(p0[i]) + b * double(pe[i]));
    return out;
}

template <class T>
TensorT<T> predict_x0(const TensorT<T>& x_t, const TensorT<T>& eps_hat, int t,
                      const NoiseSchedule& s) {
    require(x_t.same_shape(eps_hat), "predict_x0: shape mismatch");
    const double abar = s.alpha_bar(t);
    const double c_eps = std::sqrt(1.0 - abar);
    const double inv_a = 1.0 / std::sqrt(abar);
    TensorT<T> out(x_t.shape());
    T* o = out.mutable_data();
    const T *px = x_t.data(), *pe = eps_hat.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        o[i] = T((double(px[i]) - c_eps * double(pe[i])) * inv_a);
    return out;
}

template <class T>
TensorT<T> predict_x0_taped(const TensorT<T>& x_t, const TensorT<T>& eps_hat, int t,
                            const NoiseSchedule& s) {
    const double abar = s.alpha_bar(t);
    const T c_eps = T(std::sqrt(1.0 - abar));
    const T inv_a = T(1.0 / std::sqrt(abar));
    return ops::scale(ops::sub(x_t, ops::scale(eps_hat, c_eps)), inv_a);
}

double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta) {
    require(t_prev >= 0 && t_prev < t, "ddim_sigma: need 0 <= t_prev < t");
    // t_prev == 0 would give zero via abar_prev == 1 anyway; return an exact
    // 0 so the final step is deterministic without relying on rounding.
    if (eta == 0.0 || t_prev == 0) return 0.0;
    const double abar_t = s.alpha_bar(t);
    const double abar_p = s.alpha_bar(t_prev);
    return eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) *
           std::sqrt(1.0 - abar_t / abar_p);
}

template <class T>
TensorT<T> reverse_step_from_eps(const TensorT<T>& x_t, const TensorT<T>& eps_hat,
                                 int t, int t_prev, double eta,
                                 const NoiseSchedule& s,
                                 std::type_identity_t<const TensorT<T>*> noise) {
    require(x_t.same_shape(eps_hat), "reverse_step: shape mismatch");
    const double abar_t = s.alpha_bar(t);
    const double abar_p = s.alpha_bar(t_prev);
    const double sigma = ddim_sigma(s, t, t_prev, eta);
    if (sigma > 0.0) {
        require(noise != nullptr, "reverse_step: sigma > 0 requires noise");
        require(noise->same_shape(x_t), "reverse_step: noise shape mismatch");
    }
    // Fused form of sqrt(abar_p) * x0_hat + dir * eps_hat:
    //   c_x = sqrt(abar_p / abar_t)
    //   c_e = sqrt(1 - abar_p - sigma^2) - sqrt(abar_p (1 - abar_t) / abar_t)
    const double c_x = std::sqrt(abar_p / abar_t);
    const double dir = std::sqrt(std::max(0.0, 1.0 - abar_p - sigma * sigma));
    const double c_e = dir - std::sqrt(abar_p * (1.0 - abar_t) / abar_t);
    TensorT<T> out(x_t.shape());
    T* o = out.mutable_data();
    const T *px = x_t.data(), *pe = eps_hat.data();
    if (sigma > 0.0) {
        const T* pn = noise->data();
        for (std::size_t i = 0; i < out.size(); ++i)
            o[i] = T(c_x * double(px[i]) + c_e * double(pe[i]) +
                     sigma * double(pn[i]));
    } else {
        for (std::size_t i = 0; i < out.size(); ++i)
            o[i] = T(c_x * double(px[i]) + c_e * double(pe[i]));
    }
    if (checked_mode() && !out.all_finite())
        fail_state("reverse_step: non-finite output");
    return out;
}

template <class T>
TensorT<T> ddpm_step(const ModelFn<T>& model, const TensorT<T>& x_t, int t,
                     const NoiseSchedule& s, Rng& rng) {
    TensorT<T> eps_hat = model(x_t, t);
    if (t == 1) return reverse_step_from_eps(x_t, eps_hat, t, 0, 1.0, s, nullptr);
    TensorT<T> noise(x_t.shape());
    rng.fill_normal(noise.mutable_data(), noise.size());
    return reverse_step_from_eps(x_t, eps_hat, t, t - 1, 1.0, s, &noise);
}

template <class T>
TensorT<T> ddim_step(const ModelFn<T>& model, const TensorT<T>& x_t, int t,
                     int t_prev, double eta, const NoiseSchedule& s, Rng* rng) {
    TensorT<T> eps_hat = model(x_t, t);
    if (ddim_sigma(s, t, t_prev, eta) == 0.0)
        return reverse_step_from_eps(x_t, eps_hat, t, t_prev, eta, s, nullptr);
    require(rng != nullptr, "ddim_step: eta > 0 requires an rng");
    TensorT<T> noise(x_t.shape());
    rng->fill_normal(noise.mutable_data(), noise.size());
    return reverse_step_from_eps(x_t, eps_hat, t, t_prev, eta, s, &noise);
}

std::vector<int> ddim_timesteps(int total_steps, int n) {
    require(n >= 1 && n <= total_steps, "ddim_timesteps: need 1 <= n <= T");
    std::vector<int> taus(static_cast<std::size_t>(n));
    if (n == 1) {
        taus[0] = total_steps;
    } else {
        for (int i = 0; i < n; ++i)
            taus[std::size_t(i)] =
                1 + int(std::llround(double(i) * double(total_steps - 1) / double(n - 1)));
    }
    // Descending for the sampling loop; rounding keeps values distinct
    // because the spacing is >= 1.
    std::vector<int> desc(taus.rbegin(), taus.rend());
    for (std::size_t i = 1; i < desc.size(); ++i)
        require(desc[i] < desc[i - 1], "ddim_timesteps: sequence not strictly decreasing");
    return desc;
}

template <class T>
TensorT<T> sample_ddpm(const ModelFn<T>& model, const Shape& shape,
                       const NoiseSchedule& s, std::uint64_t seed) {
    Rng init = init_stream(seed);
    TensorT<T> x(shape);
    init.fill_normal(x.mutable_data(), x.size());
    for (int t = s.steps(); t >= 1; --t) {
        Rng prop = proposal_stream(seed, t);
        x = ddpm_step(model, x, t, s, prop);
    }
    return x;
}

template <class T>
TensorT<T> sample_ddim(const ModelFn<T>& model, const Shape& shape,
                       const NoiseSchedule& s, int n, double eta,
                       std::uint64_t seed) {
    Rng init = init_stream(seed);
    TensorT<T> x(shape);
    init.fill_normal(x.mutable_data(), x.size());
    const std::vector<int> taus = ddim_timesteps(s.steps(), n);
    for (std::size_t i = 0; i < taus.size(); ++i) {
        const int t = taus[i];
        const int t_prev = i + 1 < taus.size() ? taus[i + 1] : 0;
        Rng prop = proposal_stream(seed, t);
        x = ddim_step(model, x, t, t_prev, eta, s, &prop);
    }
    return x;
}

#define UVDIFF_INSTANTIATE_DIFFUSION(T)                                          \
    template TensorT<T> forward_sample(const TensorT<T>&, int, const TensorT<T>&, \
                                       const NoiseSchedule&);                     \
    template TensorT<T> predict_x0(const TensorT<T>&, const TensorT<T>&, int,     \
                                   const NoiseSchedule&);                         \
    template TensorT<T> predict_x0_taped(const TensorT<T>&, const TensorT<T>&,    \
                                         int, const NoiseSchedule&);              \
    template TensorT<T> reverse_step_from_eps(const TensorT<T>&, const TensorT<T>&, \
                                              int, int, double,                  \
                                              const NoiseSchedule&,              \
                                              const TensorT<T>*);                \
    template TensorT<T> ddpm_step(const ModelFn<T>&, const TensorT<T>&, int,     \
                                  const NoiseSchedule&, Rng&);                    \
    template TensorT<T> ddim_step(const ModelFn<T>&, const TensorT<T>&, int, int, \
                                  double, const NoiseSchedule&, Rng*);            \
    template TensorT<T> sample_ddpm(const ModelFn<T>&, const Shape&,             \
                                    const NoiseSchedule&, std::uint64_t);         \
    template TensorT<T> sample_ddim(const ModelFn<T>&, const Shape&,             \
                                    const NoiseSchedule&, int, double,            \
                                    std::uint64_t);

UVDIFF_INSTANTIATE_DIFFUSION(float)
UVDIFF_INSTANTIATE_DIFFUSION(double)

} // namespace uvdiff
