#pragma once

#include <type_traits>

#include "uvdiff/tape.hpp"
#include "uvdiff/tensor.hpp"

// Differentiable tensor ops. Every op validates shapes, computes its result,
// and — when a tape is active and any input is tracked — records a backward
// closure on the current thread's tape. With no active tape the same
// functions run as plain math. In checked mode each op additionally screens
// its output for NaN/Inf.
//
// Gradients flow only into tracked inputs; untracked operands (constants,
// frozen weights) are skipped, which the samplers use to avoid paying for
// weight gradients when only input gradients are needed.

namespace uvdiff::ops {

// Elementwise; shapes must match exactly (no implicit broadcasting).
template <class T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);

// a*s and a+s with a scalar; the scalar is not differentiated.
template <class T> TensorT<T> scale(const TensorT<T>& a, T s);
template <class T> TensorT<T> add_scalar(const TensorT<T>& a, T s);

template <class T> TensorT<T> silu(const TensorT<T>& a);
template <class T> TensorT<T> relu(const TensorT<T>& a);

// a [M,K] x b [K,N] -> [M,N], BLAS-backed.
template <class T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// x [B,C,H,W], w [O,C,kh,kw], optional bias [O]; symmetric zero padding.
// im2col + GEMM; the backward pass reuses the forward's column matrix when
// weight gradients are required.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  std::type_identity_t<const TensorT<T>*> bias, int stride, int pad);

// Per-(sample, group) normalization over (C/groups, H, W) with affine
// gain/bias per channel. x [B,C,H,W], gain/bias [C].
template <class T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps = T(1e-5));

template <class T> TensorT<T> reshape(const TensorT<T>& a, Shape shape);

template <class T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);

// Contiguous slice [start, start+len) along axis.
template <class T>
TensorT<T> slice(const TensorT<T>& a, int axis, std::size_t start, std::size_t len);

// Full reductions to a scalar tensor (shape []).
template <class T> TensorT<T> sum(const TensorT<T>& a);
template <class T> TensorT<T> mean(const TensorT<T>& a);

// Nearest-neighbour 2x upsampling, NCHW.
template <class T> TensorT<T> upsample_nearest2(const TensorT<T>& x);

// Broadcast-add a per-channel vector: x [B,C,H,W] or [B,C], v [C] or [B,C].
// Covers conv/linear bias and per-resolution time-embedding injection.
template <class T> TensorT<T> add_channel(const TensorT<T>& x, const TensorT<T>& v);

} // namespace uvdiff::ops

namespace uvdiff::detail {

// Row-major GEMM: C[M,N] = alpha * op(A)[M,K] * op(B)[K,N] + beta * C.
// Leading dimensions are the stored row lengths. Implemented over CBLAS.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const float* a, int lda, const float* b, int ldb, double beta,
          float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

// Pins the BLAS thread pool (no-op if the symbol is absent).
void set_blas_threads(int n);

} // namespace uvdiff::detail
