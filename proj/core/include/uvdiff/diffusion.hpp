#pragma once

#include <functional>
#include <type_traits>

#include "uvdiff/rng.hpp"
#include "uvdiff/schedule.hpp"
#include "uvdiff/tensor.hpp"

namespace uvdiff {

// A denoiser under test: predicts the noise eps from (x_t, t). Samplers are
// written against this signature so tests can substitute closed-form models.
template <class T>
using ModelFn = std::function<TensorT<T>(const TensorT<T>& x, int t)>;

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class T>
TensorT<T> forward_sample(const TensorT<T>& x0, int t, const TensorT<T>& eps,
                          const NoiseSchedule& s);

// x0_hat = (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t). Elementwise math
// runs in double and is rounded once on store, which keeps the
// forward/predict roundtrip tight even for float tensors.
template <class T>
TensorT<T> predict_x0(const TensorT<T>& x_t, const TensorT<T>& eps_hat, int t,
                      const NoiseSchedule& s);

// Same formula built from autodiff ops; used where gradients must flow
// through the prediction (manifold-constrained guidance).
template <class T>
TensorT<T> predict_x0_taped(const TensorT<T>& x_t, const TensorT<T>& eps_hat, int t,
                            const NoiseSchedule& s);

// Noise level of the generalized (DDIM-family) reverse step from t to t_prev.
// eta = 1 with t_prev = t-1 recovers the ancestral DDPM step with posterior
// variance; eta = 0 is deterministic DDIM.
double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta);

// One generalized reverse step given a noise prediction:
//   x_{t_prev} = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps_hat
//              + sigma * noise.
// `noise` may be null when sigma == 0 (eta == 0 or t_prev == 0); it is an
// error to omit it otherwise. Every sampler in this library funnels through
// this one function so that trajectory equivalences between samplers hold
// bit-for-bit, not just in expectation. (type_identity keeps the pointer out
// of deduction so callers can pass a bare nullptr.)
template <class T>
TensorT<T> reverse_step_from_eps(const TensorT<T>& x_t, const TensorT<T>& eps_hat,
                                 int t, int t_prev, double eta,
                                 const NoiseSchedule& s,
                                 std::type_identity_t<const TensorT<T>*> noise);

// Ancestral step x_t -> x_{t-1}: evaluates the model, then applies
// reverse_step_from_eps at (t-1, eta=1) with noise drawn from `rng`
// (not consulted at t == 1, where the step is deterministic).
template <class T>
TensorT<T> ddpm_step(const ModelFn<T>& model, const TensorT<T>& x_t, int t,
                     const NoiseSchedule& s, Rng& rng);

// DDIM step x_t -> x_{t_prev}; rng may be null when eta == 0.
template <class T>
TensorT<T> ddim_step(const ModelFn<T>& model, const TensorT<T>& x_t, int t,
                     int t_prev, double eta, const NoiseSchedule& s, Rng* rng);

// Strictly decreasing timestep subsequence for DDIM: n values from T down
// to 1 (n == T gives T, T-1, ..., 1). The implied final hop is tau_1 -> 0.
std::vector<int> ddim_timesteps(int total_steps, int n);

// Per-(purpose, timestep, repetition) noise streams shared by all samplers.
// Keying noise by role rather than by draw order is what makes cross-sampler
// trajectory identities exact.
inline Rng init_stream(std::uint64_t seed) {
    return make_stream(seed, StreamDomain::init, 0);
}
inline std::uint32_t step_stream_index(int t, int rep) {
    return std::uint32_t(t) * 64u + std::uint32_t(rep); // rep < 64 by contract
}
inline Rng proposal_stream(std::uint64_t seed, int t, int rep = 0) {
    return make_stream(seed, StreamDomain::proposal, step_stream_index(t, rep));
}
inline Rng known_stream(std::uint64_t seed, int t, int rep = 0) {
    return make_stream(seed, StreamDomain::known, step_stream_index(t, rep));
}
inline Rng renoise_stream(std::uint64_t seed, int t, int rep = 0) {
    return make_stream(seed, StreamDomain::renoise, step_stream_index(t, rep));
}

// Unconditional ancestral sampling from pure noise; `shape` includes the
// batch dimension if any. All randomness derives from `seed` via the streams
// above, so results are reproducible and independent of call history.
template <class T>
TensorT<T> sample_ddpm(const ModelFn<T>& model, const Shape& shape,
                       const NoiseSchedule& s, std::uint64_t seed);

// Unconditional DDIM sampling over an n-step subsequence.
template <class T>
TensorT<T> sample_ddim(const ModelFn<T>& model, const Shape& shape,
                       const NoiseSchedule& s, int n, double eta,
                       std::uint64_t seed);

} // namespace uvdiff
