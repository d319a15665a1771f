#pragma once

#include <cstdint>

namespace seedstab::kern {

// OpenMP-parallel compute kernels. Every output element is produced by exactly
// one thread with a fixed-order inner loop, so results are bit-identical for
// any thread count. The serial reference implementations in kern::ref use the
// same accumulation order and must agree bit-for-bit; the unit tests and the
// bench_kernels tool compare the two.

// out[M,N] = a[M,K] * b[K,N]; accumulate adds into out instead of overwriting.
void matmul_nn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);

// out[M,N] = a[M,K] * b[N,K]^T  (the x * W^T pattern).
void matmul_nt(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);

// out[M,N] = a[K,M]^T * b[K,N]  (the dW = x^T * dy pattern).
void matmul_tn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);

// y[T,D] = layernorm(x) * w + b; caches per-row mean and reciprocal stddev.
void layernorm_forward(const float* x, const float* w, const float* b, float* y,
                       float* mean, float* rstd, int T, int D, float eps);

// Gradients for layernorm_forward; dx is overwritten, dw/db are accumulated.
void layernorm_backward(const float* dy, const float* x, const float* w,
                        const float* mean, const float* rstd, float* dx,
                        float* dw, float* db, int T, int D);

void gelu_forward(const float* x, float* y, int64_t n);
// dx is accumulated.
void gelu_backward(const float* x, const float* dy, float* dx, int64_t n);

// Causal row softmax over the first (row+1) entries of each row of a [T,T]
// matrix of scores; entries above the diagonal are set to exactly 0.
void causal_softmax(float* scores, int T);

// dscores = A o (dA - rowdot(dA, A)) restricted to the causal triangle.
void causal_softmax_backward(const float* probs, const float* dprobs,
                             float* dscores, int T);

void add_inplace(float* out, const float* x, int64_t n);
void add_bias_rows(float* out, const float* bias, int T, int D);
void scale_inplace(float* out, float s, int64_t n);

namespace ref {

// Serial reference implementations (no OpenMP), kept for testing and for the
// kernel benchmark.
void matmul_nn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);
void matmul_nt(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);
void matmul_tn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate = false);
void layernorm_forward(const float* x, const float* w, const float* b, float* y,
                       float* mean, float* rstd, int T, int D, float eps);
void causal_softmax(float* scores, int T);

}  // namespace ref

}  // namespace seedstab::kern
