#include "seedstab/kernels.hpp"

#include <cmath>

namespace seedstab::kern {

namespace {

// Row kernels shared by the parallel and serial entry points so both sides
// produce bit-identical results: the only difference is who iterates rows.

inline void row_nn(const float* a_row, const float* b, float* out_row, int K,
                   int N, bool accumulate) {
    if (!accumulate) {
        for (int n = 0; n < N; ++n) out_row[n] = 0.0f;
    }
    for (int k = 0; k < K; ++k) {
        const float av = a_row[k];
        const float* b_row = b + static_cast<int64_t>(k) * N;
        for (int n = 0; n < N; ++n) out_row[n] += av * b_row[n];
    }
}

inline float dot4(const float* x, const float* y, int n) {
    // Four fixed partial sums; the reassociation pattern is part of the
    // kernel contract so results do not depend on thread count.
    float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    for (; i < n; ++i) s0 += x[i] * y[i];
    return (s0 + s1) + (s2 + s3);
}

inline void row_nt(const float* a_row, const float* b, float* out_row, int K,
                   int N, bool accumulate) {
    for (int n = 0; n < N; ++n) {
        const float v = dot4(a_row, b + static_cast<int64_t>(n) * K, K);
        out_row[n] = accumulate ? out_row[n] + v : v;
    }
}

inline void row_tn(const float* a, const float* b, float* out_row, int m, int M,
                   int K, int N, bool accumulate) {
    if (!accumulate) {
        for (int n = 0; n < N; ++n) out_row[n] = 0.0f;
    }
    for (int k = 0; k < K; ++k) {
        const float av = a[static_cast<int64_t>(k) * M + m];
        const float* b_row = b + static_cast<int64_t>(k) * N;
        for (int n = 0; n < N; ++n) out_row[n] += av * b_row[n];
    }
}

inline void row_layernorm(const float* x_row, const float* w, const float* b,
                          float* y_row, float* mean, float* rstd, int D,
                          float eps) {
    float m = 0.0f;
    for (int d = 0; d < D; ++d) m += x_row[d];
    m /= static_cast<float>(D);
    float var = 0.0f;
    for (int d = 0; d < D; ++d) {
        const float c = x_row[d] - m;
        var += c * c;
    }
    var /= static_cast<float>(D);
    const float rs = 1.0f / std::sqrt(var + eps);
    for (int d = 0; d < D; ++d) y_row[d] = (x_row[d] - m) * rs * w[d] + b[d];
    *mean = m;
    *rstd = rs;
}

inline void row_causal_softmax(float* row, int i, int T) {
    float mx = row[0];
    for (int j = 1; j <= i; ++j) mx = row[j] > mx ? row[j] : mx;
    float sum = 0.0f;
    for (int j = 0; j <= i; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const float inv = 1.0f / sum;
    for (int j = 0; j <= i; ++j) row[j] *= inv;
    for (int j = i + 1; j < T; ++j) row[j] = 0.0f;
}

// Below this many scalar ops a kernel runs serially; the desk-scale models
// are small enough that fork/join overhead otherwise dominates.
constexpr int64_t kParallelCutoff = 4 * 1024 * 1024;

}  // namespace

void matmul_nn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    const int64_t work = static_cast<int64_t>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int m = 0; m < M; ++m) {
        row_nn(a + static_cast<int64_t>(m) * K, b,
               out + static_cast<int64_t>(m) * N, K, N, accumulate);
    }
}

void matmul_nt(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    const int64_t work = static_cast<int64_t>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int m = 0; m < M; ++m) {
        row_nt(a + static_cast<int64_t>(m) * K, b,
               out + static_cast<int64_t>(m) * N, K, N, accumulate);
    }
}

void matmul_tn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    const int64_t work = static_cast<int64_t>(M) * K * N;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int m = 0; m < M; ++m) {
        row_tn(a, b, out + static_cast<int64_t>(m) * N, m, M, K, N, accumulate);
    }
}

void layernorm_forward(const float* x, const float* w, const float* b, float* y,
                       float* mean, float* rstd, int T, int D, float eps) {
    const int64_t work = static_cast<int64_t>(T) * D;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
    for (int t = 0; t < T; ++t) {
        row_layernorm(x + static_cast<int64_t>(t) * D, w, b,
                      y + static_cast<int64_t>(t) * D, mean + t, rstd + t, D,
                      eps);
    }
}

void layernorm_backward(const float* dy, const float* x, const float* w,
                        const float* mean, const float* rstd, float* dx,
                        float* dw, float* db, int T, int D) {
    // dx rows are independent; dw/db accumulate over rows in row order
    // (serial) to keep the reduction deterministic.
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(T) * D > kParallelCutoff)
    for (int t = 0; t < T; ++t) {
        const float* dy_row = dy + static_cast<int64_t>(t) * D;
        const float* x_row = x + static_cast<int64_t>(t) * D;
        float* dx_row = dx + static_cast<int64_t>(t) * D;
        const float m = mean[t];
        const float rs = rstd[t];
        float sum_g = 0.0f, sum_gx = 0.0f;
        for (int d = 0; d < D; ++d) {
            const float xhat = (x_row[d] - m) * rs;
            const float g = dy_row[d] * w[d];
            sum_g += g;
            sum_gx += g * xhat;
        }
        const float inv_d = 1.0f / static_cast<float>(D);
        for (int d = 0; d < D; ++d) {
            const float xhat = (x_row[d] - m) * rs;
            const float g = dy_row[d] * w[d];
            dx_row[d] = (g - sum_g * inv_d - xhat * sum_gx * inv_d) * rs;
        }
    }
    for (int t = 0; t < T; ++t) {
        const float* dy_row = dy + static_cast<int64_t>(t) * D;
        const float* x_row = x + static_cast<int64_t>(t) * D;
        const float m = mean[t];
        const float rs = rstd[t];
        for (int d = 0; d < D; ++d) {
            dw[d] += dy_row[d] * (x_row[d] - m) * rs;
            db[d] += dy_row[d];
        }
    }
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

void gelu_forward(const float* x, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float u = kGeluC * (v + kGeluA * v * v * v);
        y[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
}

void gelu_backward(const float* x, const float* dy, float* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float u = kGeluC * (v + kGeluA * v * v * v);
        const float th = std::tanh(u);
        const float sech2 = 1.0f - th * th;
        const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
        dx[i] += dy[i] * (0.5f * (1.0f + th) + 0.5f * v * sech2 * du);
    }
}

void causal_softmax(float* scores, int T) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(T) * T > kParallelCutoff)
    for (int i = 0; i < T; ++i) {
        row_causal_softmax(scores + static_cast<int64_t>(i) * T, i, T);
    }
}

void causal_softmax_backward(const float* probs, const float* dprobs,
                             float* dscores, int T) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(T) * T > kParallelCutoff)
    for (int i = 0; i < T; ++i) {
        const float* p = probs + static_cast<int64_t>(i) * T;
        const float* dp = dprobs + static_cast<int64_t>(i) * T;
        float* ds = dscores + static_cast<int64_t>(i) * T;
        float inner = 0.0f;
        for (int j = 0; j <= i; ++j) inner += dp[j] * p[j];
        for (int j = 0; j <= i; ++j) ds[j] = p[j] * (dp[j] - inner);
        for (int j = i + 1; j < T; ++j) ds[j] = 0.0f;
    }
}

void add_inplace(float* out, const float* x, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) out[i] += x[i];
}

void add_bias_rows(float* out, const float* bias, int T, int D) {
    for (int t = 0; t < T; ++t) {
        float* row = out + static_cast<int64_t>(t) * D;
        for (int d = 0; d < D; ++d) row[d] += bias[d];
    }
}

void scale_inplace(float* out, float s, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
    for (int64_t i = 0; i < n; ++i) out[i] *= s;
}

namespace ref {

void matmul_nn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    for (int m = 0; m < M; ++m) {
        row_nn(a + static_cast<int64_t>(m) * K, b,
               out + static_cast<int64_t>(m) * N, K, N, accumulate);
    }
}

void matmul_nt(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    for (int m = 0; m < M; ++m) {
        row_nt(a + static_cast<int64_t>(m) * K, b,
               out + static_cast<int64_t>(m) * N, K, N, accumulate);
    }
}

void matmul_tn(const float* a, const float* b, float* out, int M, int K, int N,
               bool accumulate) {
    for (int m = 0; m < M; ++m) {
        row_tn(a, b, out + static_cast<int64_t>(m) * N, m, M, K, N, accumulate);
    }
}

void layernorm_forward(const float* x, const float* w, const float* b, float* y,
                       float* mean, float* rstd, int T, int D, float eps) {
    for (int t = 0; t < T; ++t) {
        row_layernorm(x + static_cast<int64_t>(t) * D, w, b,
                      y + static_cast<int64_t>(t) * D, mean + t, rstd + t, D,
                      eps);
    }
}

void causal_softmax(float* scores, int T) {
    for (int i = 0; i < T; ++i) {
        row_causal_softmax(scores + static_cast<int64_t>(i) * T, i, T);
    }
}

}  // namespace ref

}  // namespace seedstab::kern
