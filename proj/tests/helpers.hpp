#pragma once

#include <cmath>
#include <functional>

#include "uvdiff/denoiser.hpp"
#include "uvdiff/ops.hpp"
#include "uvdiff/tape.hpp"

namespace uvdiff::testing {

inline double rel_err(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
    return std::abs(got - want) / denom;
}

// Largest elementwise relative error, floored at an absolute scale of 1 so
// near-zero entries compare absolutely.
inline double max_rel_err(const Tensor64& got, const Tensor64& want) {
    require(got.shape() == want.shape(), "max_rel_err: shape mismatch");
    double worst = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max({std::abs(want.data()[i]), 1.0});
        worst = std::max(worst, std::abs(got.data()[i] - want.data()[i]) / denom);
    }
    return worst;
}

// Central-difference gradient of a scalar-valued function at x.
inline Tensor64 numeric_grad(const std::function<double(const Tensor64&)>& f,
                             const Tensor64& x, double h = 1e-3) {
    Tensor64 g(x.shape());
    double* gp = g.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor64 xp = x.clone();
        Tensor64 xm = x.clone();
        xp.mutable_data()[i] += h;
        xm.mutable_data()[i] -= h;
        gp[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

// Analytic gradient of `loss(x)` via the tape, where `loss` builds a scalar
// from tracked ops on its argument.
inline Tensor64 tape_grad(const std::function<Tensor64(const Tensor64&)>& loss,
                          const Tensor64& x) {
    Tensor64 leaf = x.clone();
    leaf.set_tracked(true);
    TapeT<double> tape;
    TapeScope<double> scope(tape);
    const Tensor64 out = loss(leaf);
    require(out.size() == 1, "tape_grad: loss must be scalar");
    auto grads = tape.backward(out);
    auto it = grads.find(leaf.uid());
    require(it != grads.end(), "tape_grad: no gradient reached the leaf");
    return it->second;
}

// Checks d(loss)/dx against central differences; returns the worst relative
// error so tests can report it.
inline double gradcheck(const std::function<Tensor64(const Tensor64&)>& loss,
                        const Tensor64& x, double h = 1e-3) {
    const Tensor64 analytic = tape_grad(loss, x);
    const Tensor64 numeric = numeric_grad(
        [&](const Tensor64& v) {
            const Tensor64 out = loss(v);
            return out.data()[0];
        },
        x, h);
    return max_rel_err(analytic, numeric);
}

// Small denoiser for fast tests. The production head is zero-initialized,
// which would hide gradient bugs behind exact zeros, so the head weights get
// a deterministic perturbation.
inline UNet make_test_net(int width = 16, int time_dim = 32, std::uint64_t seed = 99) {
    UNetConfig cfg;
    cfg.base_width = width;
    cfg.time_dim = time_dim;
    UNet net(cfg, seed);
    Rng rng = make_stream(seed, StreamDomain::misc, 1);
    for (auto& [name, param] : net.named_params())
        if (name.rfind("head.", 0) == 0) {
            float* p = param->mutable_data();
            for (std::size_t i = 0; i < param->size(); ++i)
                p[i] = float(0.05 * rng.normal());
        }
    return net;
}

} // namespace uvdiff::testing
