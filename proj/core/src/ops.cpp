#include "uvdiff/ops.hpp"

#include <cmath>
#include <memory>

namespace uvdiff::ops {

namespace {

template <class T>
void finish(const char* name, const TensorT<T>& out) {
    if (checked_mode() && !out.all_finite())
        fail_state(std::string(name) + ": non-finite value in output");
}

// Record iff a tape is active and some input is tracked; the output tensor's
// tracked flag mirrors that decision.
template <class T>
TapeT<T>* tape_for(std::initializer_list<bool> tracked) {
    TapeT<T>* tp = current_tape<T>();
    if (!tp) return nullptr;
    for (bool t : tracked)
        if (t) return tp;
    return nullptr;
}

template <class T>
void require_same_shape(const char* name, const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), std::string(name) + ": shape mismatch " +
                                 shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("add", a, b);
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] + pb[i];
    if (TapeT<T>* tp = tape_for<T>({a.tracked(), b.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), ub = b.uid(), uo = out.uid();
        bool ta = a.tracked(), tb = b.tracked();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            if (ta) t.accumulate(ua, *g);
            if (tb) t.accumulate(ub, *g);
        });
    }
    finish("add", out);
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("sub", a, b);
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] - pb[i];
    if (TapeT<T>* tp = tape_for<T>({a.tracked(), b.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), ub = b.uid(), uo = out.uid();
        bool ta = a.tracked(), tb = b.tracked();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            if (ta) t.accumulate(ua, *g);
            if (tb) {
                TensorT<T> ng(g->shape());
                T* n = ng.mutable_data();
                const T* gp = g->data();
                for (std::size_t i = 0; i < ng.size(); ++i) n[i] = -gp[i];
                t.accumulate(ub, ng);
            }
        });
    }
    finish("sub", out);
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape("mul", a, b);
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] * pb[i];
    if (TapeT<T>* tp = tape_for<T>({a.tracked(), b.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), ub = b.uid(), uo = out.uid();
        bool ta = a.tracked(), tb = b.tracked();
        TensorT<T> av = a, bv = b; // cheap CoW copies for the closure
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            const T* gp = g->data();
            if (ta) {
                TensorT<T> ga(av.shape());
                T* p = ga.mutable_data();
                const T* pb2 = bv.data();
                for (std::size_t i = 0; i < ga.size(); ++i) p[i] = gp[i] * pb2[i];
                t.accumulate(ua, ga);
            }
            if (tb) {
                TensorT<T> gb(bv.shape());
                T* p = gb.mutable_data();
                const T* pa2 = av.data();
                for (std::size_t i = 0; i < gb.size(); ++i) p[i] = gp[i] * pa2[i];
                t.accumulate(ub, gb);
            }
        });
    }
    finish("mul", out);
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] * s;
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            TensorT<T> ga(g->shape());
            T* p = ga.mutable_data();
            const T* gp = g->data();
            for (std::size_t i = 0; i < ga.size(); ++i) p[i] = gp[i] * s;
            t.accumulate(ua, ga);
        });
    }
    finish("scale", out);
    return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] + s;
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        tp->record(uo, [=](TapeT<T>& t) {
            if (const TensorT<T>* g = t.grad_of(uo)) t.accumulate(ua, *g);
        });
    }
    finish("add_scalar", out);
    return out;
}

template <class T>
TensorT<T> silu(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        T sig = T(1) / (T(1) + std::exp(-pa[i]));
        o[i] = pa[i] * sig;
    }
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        TensorT<T> av = a;
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            TensorT<T> ga(av.shape());
            T* p = ga.mutable_data();
            const T *gp = g->data(), *x = av.data();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                T sig = T(1) / (T(1) + std::exp(-x[i]));
                p[i] = gp[i] * sig * (T(1) + x[i] * (T(1) - sig));
            }
            t.accumulate(ua, ga);
        });
    }
    finish("silu", out);
    return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    T* o = out.mutable_data();
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) o[i] = pa[i] > T(0) ? pa[i] : T(0);
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        TensorT<T> av = a;
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            TensorT<T> ga(av.shape());
            T* p = ga.mutable_data();
            const T *gp = g->data(), *x = av.data();
            for (std::size_t i = 0; i < ga.size(); ++i)
                p[i] = x[i] > T(0) ? gp[i] : T(0);
            t.accumulate(ua, ga);
        });
    }
    finish("relu", out);
    return out;
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 tensors");
    require(a.extent(1) == b.extent(0),
            "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
    const int m = int(a.extent(0)), k = int(a.extent(1)), n = int(b.extent(1));
    TensorT<T> out(Shape{std::size_t(m), std::size_t(n)});
    detail::gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0,
                 out.mutable_data(), n);
    if (TapeT<T>* tp = tape_for<T>({a.tracked(), b.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), ub = b.uid(), uo = out.uid();
        bool ta = a.tracked(), tb = b.tracked();
        TensorT<T> av = a, bv = b;
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            if (ta) { // dA = G * B^T
                TensorT<T> ga(av.shape());
                detail::gemm(false, true, m, k, n, 1.0, g->data(), n, bv.data(), n,
                             0.0, ga.mutable_data(), k);
                t.accumulate(ua, ga);
            }
            if (tb) { // dB = A^T * G
                TensorT<T> gb(bv.shape());
                detail::gemm(true, false, k, n, m, 1.0, av.data(), k, g->data(), n,
                             0.0, gb.mutable_data(), n);
                t.accumulate(ub, gb);
            }
        });
    }
    finish("matmul", out);
    return out;
}

namespace {

// cols is [C*kh*kw, B*OH*OW] row-major: one row per kernel slot, one column
// per output position. This layout turns the convolution into a single
// [O, K] x [K, P] GEMM over all batch items.
template <class T>
void im2col(const T* x, std::size_t bsz, std::size_t c, std::size_t h, std::size_t w,
            int kh, int kw, int stride, int pad, std::size_t oh, std::size_t ow,
            T* cols) {
    const std::size_t p_total = bsz * oh * ow;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* row = cols + ((ch * kh + ky) * kw + kx) * p_total;
                for (std::size_t b = 0; b < bsz; ++b) {
                    const T* xc = x + (b * c + ch) * h * w;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = long(oy) * stride + ky - pad;
                        T* dst = row + (b * oh + oy) * ow;
                        if (iy < 0 || iy >= long(h)) {
                            for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] = T(0);
                            continue;
                        }
                        const T* src = xc + std::size_t(iy) * w;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = long(ox) * stride + kx - pad;
                            dst[ox] = (ix < 0 || ix >= long(w)) ? T(0) : src[ix];
                        }
                    }
                }
            }
}

template <class T>
void col2im(const T* cols, std::size_t bsz, std::size_t c, std::size_t h, std::size_t w,
            int kh, int kw, int stride, int pad, std::size_t oh, std::size_t ow,
            T* dx) {
    const std::size_t p_total = bsz * oh * ow;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = cols + ((ch * kh + ky) * kw + kx) * p_total;
                for (std::size_t b = 0; b < bsz; ++b) {
                    T* xc = dx + (b * c + ch) * h * w;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const long iy = long(oy) * stride + ky - pad;
                        if (iy < 0 || iy >= long(h)) continue;
                        const T* src = row + (b * oh + oy) * ow;
                        T* dst = xc + std::size_t(iy) * w;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long ix = long(ox) * stride + kx - pad;
                            if (ix >= 0 && ix < long(w)) dst[ix] += src[ox];
                        }
                    }
                }
            }
}

} // namespace

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  std::type_identity_t<const TensorT<T>*> bias, int stride, int pad) {
    require(x.rank() == 4, "conv2d: input must be [B,C,H,W]");
    require(w.rank() == 4, "conv2d: weight must be [O,C,kh,kw]");
    require(x.extent(1) == w.extent(1),
            "conv2d: channel mismatch, input " + shape_str(x.shape()) + " weight " +
                shape_str(w.shape()));
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    if (bias) {
        require(bias->rank() == 1 && bias->extent(0) == w.extent(0),
                "conv2d: bias must be [O]");
    }
    const std::size_t bsz = x.extent(0), c = x.extent(1), h = x.extent(2), wd = x.extent(3);
    const std::size_t oc = w.extent(0);
    const int kh = int(w.extent(2)), kw = int(w.extent(3));
    const long oh_l = (long(h) + 2 * pad - kh) / stride + 1;
    const long ow_l = (long(wd) + 2 * pad - kw) / stride + 1;
    require(oh_l >= 1 && ow_l >= 1, "conv2d: kernel larger than padded input");
    const std::size_t oh = std::size_t(oh_l), ow = std::size_t(ow_l);
    const std::size_t kdim = c * kh * kw, p_total = bsz * oh * ow;

    auto cols = std::make_shared<std::vector<T>>(kdim * p_total);
    im2col(x.data(), bsz, c, h, wd, kh, kw, stride, pad, oh, ow, cols->data());

    // out_mat [O, P], then re-strided into [B,O,OH,OW] with bias.
    std::vector<T> out_mat(oc * p_total);
    detail::gemm(false, false, int(oc), int(p_total), int(kdim), 1.0, w.data(),
                 int(kdim), cols->data(), int(p_total), 0.0, out_mat.data(),
                 int(p_total));
    TensorT<T> out(Shape{bsz, oc, oh, ow});
    T* yp = out.mutable_data();
    const std::size_t plane = oh * ow;
    for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t o = 0; o < oc; ++o) {
            const T* src = out_mat.data() + o * p_total + b * plane;
            T* dst = yp + (b * oc + o) * plane;
            const T bv = bias ? (*bias)[o] : T(0);
            for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] + bv;
        }

    bool track_bias = bias && bias->tracked();
    if (TapeT<T>* tp = tape_for<T>({x.tracked(), w.tracked(), track_bias})) {
        out.set_tracked(true);
        auto ux = x.uid(), uw = w.uid(), uo = out.uid();
        auto ubias = bias ? bias->uid() : 0;
        bool tx = x.tracked(), tw = w.tracked();
        TensorT<T> wv = w;
        Shape xshape = x.shape();
        // The column matrix is only needed for dW; drop it when weights are
        // frozen (sampling-time input gradients) to save memory.
        if (!tw) cols.reset();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            std::vector<T> g_mat(oc * p_total);
            const T* gp = g->data();
            for (std::size_t b = 0; b < bsz; ++b)
                for (std::size_t o = 0; o < oc; ++o)
                    std::memcpy(g_mat.data() + o * p_total + b * plane,
                                gp + (b * oc + o) * plane, plane * sizeof(T));
            if (tw) { // dW[O,K] = G * cols^T
                TensorT<T> gw(wv.shape());
                detail::gemm(false, true, int(oc), int(kdim), int(p_total), 1.0,
                             g_mat.data(), int(p_total), cols->data(), int(p_total),
                             0.0, gw.mutable_data(), int(kdim));
                t.accumulate(uw, gw);
            }
            if (tx) { // dcols[K,P] = W^T * G, then scatter back
                std::vector<T> dcols(kdim * p_total);
                detail::gemm(true, false, int(kdim), int(p_total), int(oc), 1.0,
                             wv.data(), int(kdim), g_mat.data(), int(p_total), 0.0,
                             dcols.data(), int(p_total));
                TensorT<T> gx(xshape);
                col2im(dcols.data(), bsz, c, h, wd, kh, kw, stride, pad, oh, ow,
                       gx.mutable_data());
                t.accumulate(ux, gx);
            }
            if (track_bias) {
                TensorT<T> gb(Shape{oc});
                T* gbp = gb.mutable_data();
                for (std::size_t o = 0; o < oc; ++o) {
                    double s = 0;
                    const T* r = g_mat.data() + o * p_total;
                    for (std::size_t j = 0; j < p_total; ++j) s += r[j];
                    gbp[o] = T(s);
                }
                t.accumulate(ubias, gb);
            }
        });
    }
    finish("conv2d", out);
    return out;
}

template <class T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps) {
    require(x.rank() == 4, "group_norm: input must be [B,C,H,W]");
    const std::size_t bsz = x.extent(0), c = x.extent(1), plane = x.extent(2) * x.extent(3);
    require(groups >= 1 && c % std::size_t(groups) == 0,
            "group_norm: groups must divide channels");
    require(gain.rank() == 1 && gain.extent(0) == c, "group_norm: gain must be [C]");
    require(bias.rank() == 1 && bias.extent(0) == c, "group_norm: bias must be [C]");
    const std::size_t cg = c / std::size_t(groups);
    const std::size_t m = cg * plane; // elements per (sample, group)

    TensorT<T> out(x.shape());
    T* o = out.mutable_data();
    const T *xp = x.data(), *gm = gain.data(), *bt = bias.data();
    std::vector<double> mu(bsz * groups), ivar(bsz * groups);
    for (std::size_t b = 0; b < bsz; ++b)
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = (b * c + std::size_t(g) * cg) * plane;
            double s = 0, s2 = 0;
            for (std::size_t i = 0; i < m; ++i) {
                double v = xp[base + i];
                s += v;
                s2 += v * v;
            }
            const double mean_g = s / double(m);
            const double var_g = std::max(0.0, s2 / double(m) - mean_g * mean_g);
            const double iv = 1.0 / std::sqrt(var_g + double(eps));
            mu[b * groups + g] = mean_g;
            ivar[b * groups + g] = iv;
            for (std::size_t cc = 0; cc < cg; ++cc) {
                const std::size_t ch = std::size_t(g) * cg + cc;
                const std::size_t off = (b * c + ch) * plane;
                const T gamma = gm[ch], beta = bt[ch];
                for (std::size_t j = 0; j < plane; ++j) {
                    const double xhat = (double(xp[off + j]) - mean_g) * iv;
                    o[off + j] = T(double(gamma) * xhat + double(beta));
                }
            }
        }

    if (TapeT<T>* tp = tape_for<T>({x.tracked(), gain.tracked(), bias.tracked()})) {
        out.set_tracked(true);
        auto ux = x.uid(), ug = gain.uid(), ub = bias.uid(), uo = out.uid();
        bool tx = x.tracked(), tg = gain.tracked(), tb = bias.tracked();
        TensorT<T> xv = x, gv = gain;
        tp->record(uo, [=, mu = std::move(mu), ivar = std::move(ivar)](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            const T *gp = g->data(), *xp2 = xv.data(), *gm2 = gv.data();
            TensorT<T> gx(xv.shape());
            TensorT<T> ggain(Shape{c}), gbias(Shape{c});
            T* gxp = tx ? gx.mutable_data() : nullptr;
            T* ggp = ggain.mutable_data();
            T* gbp = gbias.mutable_data();
            for (std::size_t b = 0; b < bsz; ++b)
                for (int gi = 0; gi < groups; ++gi) {
                    const double mean_g = mu[b * groups + gi];
                    const double iv = ivar[b * groups + gi];
                    // dxhat = g*gamma; dx = iv*(dxhat - (S1 + xhat*S2)/m)
                    double s1 = 0, s2 = 0;
                    for (std::size_t cc = 0; cc < cg; ++cc) {
                        const std::size_t ch = std::size_t(gi) * cg + cc;
                        const std::size_t off = (b * c + ch) * plane;
                        const double gamma = gm2[ch];
                        for (std::size_t j = 0; j < plane; ++j) {
                            const double xhat = (double(xp2[off + j]) - mean_g) * iv;
                            const double dxh = double(gp[off + j]) * gamma;
                            s1 += dxh;
                            s2 += dxh * xhat;
                        }
                    }
                    for (std::size_t cc = 0; cc < cg; ++cc) {
                        const std::size_t ch = std::size_t(gi) * cg + cc;
                        const std::size_t off = (b * c + ch) * plane;
                        const double gamma = gm2[ch];
                        double dgamma = 0, dbeta = 0;
                        for (std::size_t j = 0; j < plane; ++j) {
                            const double xhat = (double(xp2[off + j]) - mean_g) * iv;
                            const double gj = gp[off + j];
                            dgamma += gj * xhat;
                            dbeta += gj;
                            if (tx) {
                                const double dxh = gj * gamma;
                                gxp[off + j] =
                                    T(iv * (dxh - (s1 + xhat * s2) / double(m)));
                            }
                        }
                        ggp[ch] += T(dgamma);
                        gbp[ch] += T(dbeta);
                    }
                }
            if (tx) t.accumulate(ux, gx);
            if (tg) t.accumulate(ug, ggain);
            if (tb) t.accumulate(ub, gbias);
        });
    }
    finish("group_norm", out);
    return out;
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    TensorT<T> out = a.reshaped(std::move(shape));
    out.set_tracked(false);
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        Shape ashape = a.shape();
        tp->record(uo, [=](TapeT<T>& t) {
            if (const TensorT<T>* g = t.grad_of(uo))
                t.accumulate(ua, g->reshaped(ashape));
        });
    }
    finish("reshape", out);
    return out;
}

namespace {

// Decompose shape around an axis as [outer, axis extent, inner].
inline void axis_spans(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[std::size_t(i)];
    for (std::size_t i = std::size_t(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

} // namespace

template <class T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    require(!parts.empty(), "concat: needs at least one input");
    const Shape& s0 = parts[0].shape();
    require(axis >= 0 && std::size_t(axis) < s0.size(), "concat: axis out of range");
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        require(p.rank() == s0.size(), "concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != std::size_t(axis))
                require(p.extent(d) == s0[d], "concat: extent mismatch off-axis");
        total_axis += p.extent(std::size_t(axis));
    }
    Shape oshape = s0;
    oshape[std::size_t(axis)] = total_axis;
    TensorT<T> out(oshape);
    std::size_t outer, inner;
    axis_spans(oshape, axis, outer, inner);
    T* op = out.mutable_data();
    std::size_t axis_off = 0;
    for (const auto& p : parts) {
        const std::size_t ax = p.extent(std::size_t(axis));
        const T* pp = p.data();
        for (std::size_t ou = 0; ou < outer; ++ou)
            std::memcpy(op + (ou * total_axis + axis_off) * inner,
                        pp + ou * ax * inner, ax * inner * sizeof(T));
        axis_off += ax;
    }
    bool any_tracked = false;
    for (const auto& p : parts) any_tracked |= p.tracked();
    if (TapeT<T>* tp = tape_for<T>({any_tracked})) {
        out.set_tracked(true);
        auto uo = out.uid();
        std::vector<std::uint64_t> uids;
        std::vector<bool> tracked;
        std::vector<Shape> shapes;
        for (const auto& p : parts) {
            uids.push_back(p.uid());
            tracked.push_back(p.tracked());
            shapes.push_back(p.shape());
        }
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            const T* gp = g->data();
            std::size_t off = 0;
            for (std::size_t i = 0; i < uids.size(); ++i) {
                const std::size_t ax = shapes[i][std::size_t(axis)];
                if (tracked[i]) {
                    TensorT<T> gi(shapes[i]);
                    T* gip = gi.mutable_data();
                    for (std::size_t ou = 0; ou < outer; ++ou)
                        std::memcpy(gip + ou * ax * inner,
                                    gp + (ou * total_axis + off) * inner,
                                    ax * inner * sizeof(T));
                    t.accumulate(uids[i], gi);
                }
                off += ax;
            }
        });
    }
    finish("concat", out);
    return out;
}

template <class T>
TensorT<T> slice(const TensorT<T>& a, int axis, std::size_t start, std::size_t len) {
    require(axis >= 0 && std::size_t(axis) < a.rank(), "slice: axis out of range");
    require(start + len <= a.extent(std::size_t(axis)) && len > 0,
            "slice: range out of bounds");
    Shape oshape = a.shape();
    oshape[std::size_t(axis)] = len;
    TensorT<T> out(oshape);
    std::size_t outer, inner;
    axis_spans(a.shape(), axis, outer, inner);
    const std::size_t ax = a.extent(std::size_t(axis));
    T* op = out.mutable_data();
    const T* ap = a.data();
    for (std::size_t ou = 0; ou < outer; ++ou)
        std::memcpy(op + ou * len * inner, ap + (ou * ax + start) * inner,
                    len * inner * sizeof(T));
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        Shape ashape = a.shape();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            TensorT<T> ga(ashape); // zeros, then scatter the slice back
            T* gap = ga.mutable_data();
            const T* gp = g->data();
            for (std::size_t ou = 0; ou < outer; ++ou)
                std::memcpy(gap + (ou * ax + start) * inner, gp + ou * len * inner,
                            len * inner * sizeof(T));
            t.accumulate(ua, ga);
        });
    }
    finish("slice", out);
    return out;
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    double s = 0;
    const T* p = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += double(p[i]);
    TensorT<T> out = TensorT<T>::scalar(T(s));
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        Shape ashape = a.shape();
        tp->record(uo, [=](TapeT<T>& t) {
            if (const TensorT<T>* g = t.grad_of(uo))
                t.accumulate(ua, TensorT<T>::full(ashape, (*g)[0]));
        });
    }
    finish("sum", out);
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    require(a.size() > 0, "mean: empty tensor");
    double s = 0;
    const T* p = a.data();
    for (std::size_t i = 0; i < a.size(); ++i) s += double(p[i]);
    TensorT<T> out = TensorT<T>::scalar(T(s / double(a.size())));
    if (TapeT<T>* tp = tape_for<T>({a.tracked()})) {
        out.set_tracked(true);
        auto ua = a.uid(), uo = out.uid();
        Shape ashape = a.shape();
        const T inv = T(1.0 / double(a.size()));
        tp->record(uo, [=](TapeT<T>& t) {
            if (const TensorT<T>* g = t.grad_of(uo))
                t.accumulate(ua, TensorT<T>::full(ashape, (*g)[0] * inv));
        });
    }
    finish("mean", out);
    return out;
}

template <class T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    require(x.rank() == 4, "upsample_nearest2: input must be [B,C,H,W]");
    const std::size_t bsz = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    TensorT<T> out(Shape{bsz, c, 2 * h, 2 * w});
    T* o = out.mutable_data();
    const T* p = x.data();
    for (std::size_t bc = 0; bc < bsz * c; ++bc) {
        const T* src = p + bc * h * w;
        T* dst = o + bc * 4 * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const T v = src[y * w + xx];
                T* d = dst + (2 * y) * (2 * w) + 2 * xx;
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
    }
    if (TapeT<T>* tp = tape_for<T>({x.tracked()})) {
        out.set_tracked(true);
        auto ux = x.uid(), uo = out.uid();
        Shape xshape = x.shape();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            TensorT<T> gx(xshape);
            T* gp = gx.mutable_data();
            const T* gg = g->data();
            for (std::size_t bc = 0; bc < bsz * c; ++bc) {
                const T* src = gg + bc * 4 * h * w;
                T* dst = gp + bc * h * w;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const T* s = src + (2 * y) * (2 * w) + 2 * xx;
                        dst[y * w + xx] = s[0] + s[1] + s[2 * w] + s[2 * w + 1];
                    }
            }
            t.accumulate(ux, gx);
        });
    }
    finish("upsample_nearest2", out);
    return out;
}

template <class T>
TensorT<T> add_channel(const TensorT<T>& x, const TensorT<T>& v) {
    require(x.rank() == 4 || x.rank() == 2, "add_channel: x must be [B,C,H,W] or [B,C]");
    const std::size_t bsz = x.extent(0), c = x.extent(1);
    const std::size_t plane = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
    const bool per_sample = v.rank() == 2;
    if (per_sample)
        require(v.extent(0) == bsz && v.extent(1) == c, "add_channel: v must be [B,C]");
    else
        require(v.rank() == 1 && v.extent(0) == c, "add_channel: v must be [C]");

    TensorT<T> out(x.shape());
    T* o = out.mutable_data();
    const T *xp = x.data(), *vp = v.data();
    for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T add_v = per_sample ? vp[b * c + ch] : vp[ch];
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) o[off + j] = xp[off + j] + add_v;
        }
    if (TapeT<T>* tp = tape_for<T>({x.tracked(), v.tracked()})) {
        out.set_tracked(true);
        auto ux = x.uid(), uv = v.uid(), uo = out.uid();
        bool tx = x.tracked(), tv = v.tracked();
        Shape vshape = v.shape();
        tp->record(uo, [=](TapeT<T>& t) {
            const TensorT<T>* g = t.grad_of(uo);
            if (!g) return;
            if (tx) t.accumulate(ux, *g);
            if (tv) {
                TensorT<T> gv(vshape);
                T* gvp = gv.mutable_data();
                const T* gp = g->data();
                for (std::size_t b = 0; b < bsz; ++b)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double s = 0;
                        const std::size_t off = (b * c + ch) * plane;
                        for (std::size_t j = 0; j < plane; ++j) s += gp[off + j];
                        if (per_sample)
                            gvp[b * c + ch] = T(s);
                        else
                            gvp[ch] += T(s);
                    }
                t.accumulate(uv, gv);
            }
        });
    }
    finish("add_channel", out);
    return out;
}

// The op set is closed over float/double; instantiate both here so the
// public header stays declaration-only.
#define UVDIFF_INSTANTIATE_OPS(T)                                                  \
    template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                 \
    template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                 \
    template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                 \
    template TensorT<T> scale(const TensorT<T>&, T);                               \
    template TensorT<T> add_scalar(const TensorT<T>&, T);                          \
    template TensorT<T> silu(const TensorT<T>&);                                   \
    template TensorT<T> relu(const TensorT<T>&);                                   \
    template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);              \
    template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&,               \
                               const TensorT<T>*, int, int);                       \
    template TensorT<T> group_norm(const TensorT<T>&, int, const TensorT<T>&,      \
                                   const TensorT<T>&, T);                          \
    template TensorT<T> reshape(const TensorT<T>&, Shape);                         \
    template TensorT<T> concat(const std::vector<TensorT<T>>&, int);               \
    template TensorT<T> slice(const TensorT<T>&, int, std::size_t, std::size_t);   \
    template TensorT<T> sum(const TensorT<T>&);                                    \
    template TensorT<T> mean(const TensorT<T>&);                                   \
    template TensorT<T> upsample_nearest2(const TensorT<T>&);                      \
    template TensorT<T> add_channel(const TensorT<T>&, const TensorT<T>&);

UVDIFF_INSTANTIATE_OPS(float)
UVDIFF_INSTANTIATE_OPS(double)

} // namespace uvdiff::ops
