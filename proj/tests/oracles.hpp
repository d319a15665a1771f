// Test-only oracles, deliberately independent of the library kernels: a
// straight-line double-precision forward pass, finite differences on it, and
// exhaustive enumerators for the stability metrics. Everything here favors
// clarity over speed.
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "seedstab/model.hpp"
#include "seedstab/store.hpp"

namespace oracle {

using seedstab::ModelConfig;
using seedstab::Parameters;

using Mat = std::vector<std::vector<double>>;

inline Mat make_mat(int rows, int cols) {
    return Mat(static_cast<size_t>(rows), std::vector<double>(static_cast<size_t>(cols), 0.0));
}

// Reads the f32 parameter tensors into doubles on demand.
inline double pget(const seedstab::Tensor& t, int64_t idx) {
    return static_cast<double>(t.data[static_cast<size_t>(idx)]);
}

struct ForwardResult {
    Mat logits;                         // [T, V]
    std::vector<Mat> attention;        // per layer, [H] stacked: att[l][h*T+i][j]
    double nll_sum = 0.0;              // sum over scored positions
    int scored = 0;
};

// Straight-line recomputation of the model forward pass in doubles.
inline ForwardResult forward_double(const Parameters& params,
                                    const std::vector<int>& tokens) {
    const ModelConfig& cfg = params.cfg;
    const int T = static_cast<int>(tokens.size());
    const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head, V = cfg.d_vocab;

    Mat resid = make_mat(T, D);
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d)
            resid[t][d] = pget(params.wte, static_cast<int64_t>(tokens[t]) * D + d) +
                          pget(params.wpe, static_cast<int64_t>(t) * D + d);

    auto layernorm = [&](const Mat& x, const seedstab::Tensor& w,
                         const seedstab::Tensor& b) {
        Mat y = make_mat(T, D);
        for (int t = 0; t < T; ++t) {
            double mean = 0.0;
            for (int d = 0; d < D; ++d) mean += x[t][d];
            mean /= D;
            double var = 0.0;
            for (int d = 0; d < D; ++d) var += (x[t][d] - mean) * (x[t][d] - mean);
            var /= D;
            const double rstd = 1.0 / std::sqrt(var + static_cast<double>(cfg.layernorm_eps));
            for (int d = 0; d < D; ++d)
                y[t][d] = (x[t][d] - mean) * rstd * pget(w, d) + pget(b, d);
        }
        return y;
    };

    ForwardResult out;
    out.attention.resize(static_cast<size_t>(cfg.n_layers));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& lp = params.layers[static_cast<size_t>(l)];
        const Mat x1 = layernorm(resid, lp.ln1_w, lp.ln1_b);

        Mat attn_out = make_mat(T, D);
        Mat& att_all = out.attention[static_cast<size_t>(l)];
        att_all = make_mat(H * T, T);
        for (int h = 0; h < H; ++h) {
            Mat q = make_mat(T, dh), k = make_mat(T, dh), v = make_mat(T, dh);
            for (int t = 0; t < T; ++t) {
                for (int a = 0; a < dh; ++a) {
                    double sq = 0.0, sk = 0.0, sv = 0.0;
                    for (int d = 0; d < D; ++d) {
                        const int64_t w_idx =
                            (static_cast<int64_t>(h) * dh + a) * D + d;
                        sq += x1[t][d] * pget(lp.w_q, w_idx);
                        sk += x1[t][d] * pget(lp.w_k, w_idx);
                        sv += x1[t][d] * pget(lp.w_v, w_idx);
                    }
                    q[t][a] = sq + pget(lp.b_q, static_cast<int64_t>(h) * dh + a);
                    k[t][a] = sk + pget(lp.b_k, static_cast<int64_t>(h) * dh + a);
                    v[t][a] = sv + pget(lp.b_v, static_cast<int64_t>(h) * dh + a);
                }
            }
            for (int i = 0; i < T; ++i) {
                std::vector<double> row(static_cast<size_t>(T), 0.0);
                double mx = -1e300;
                for (int j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (int a = 0; a < dh; ++a) s += q[i][a] * k[j][a];
                    s /= static_cast<double>(cfg.attn_scale);
                    row[static_cast<size_t>(j)] = s;
                    mx = std::max(mx, s);
                }
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
                    sum += row[static_cast<size_t>(j)];
                }
                for (int j = 0; j <= i; ++j) row[static_cast<size_t>(j)] /= sum;
                for (int j = 0; j < T; ++j)
                    att_all[static_cast<size_t>(h) * T + i][static_cast<size_t>(j)] =
                        j <= i ? row[static_cast<size_t>(j)] : 0.0;
            }
            for (int i = 0; i < T; ++i) {
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int a = 0; a < dh; ++a) {
                        double ho = 0.0;
                        for (int j = 0; j <= i; ++j)
                            ho += att_all[static_cast<size_t>(h) * T + i][static_cast<size_t>(j)] * v[j][a];
                        acc += ho * pget(lp.w_o, (static_cast<int64_t>(h) * dh + a) * D + d);
                    }
                    attn_out[i][d] += acc;
                }
            }
        }
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d)
                resid[t][d] += attn_out[t][d] + pget(lp.b_o, d);

        if (!cfg.attn_only) {
            const Mat x2 = layernorm(resid, lp.ln2_w, lp.ln2_b);
            for (int t = 0; t < T; ++t) {
                std::vector<double> act(static_cast<size_t>(cfg.d_mlp), 0.0);
                for (int m = 0; m < cfg.d_mlp; ++m) {
                    double s = 0.0;
                    for (int d = 0; d < D; ++d)
                        s += x2[t][d] * pget(lp.w_in, static_cast<int64_t>(m) * D + d);
                    s += pget(lp.b_in, m);
                    const double u = 0.7978845608028654 * (s + 0.044715 * s * s * s);
                    act[static_cast<size_t>(m)] = 0.5 * s * (1.0 + std::tanh(u));
                }
                for (int d = 0; d < D; ++d) {
                    double s = 0.0;
                    for (int m = 0; m < cfg.d_mlp; ++m)
                        s += act[static_cast<size_t>(m)] *
                             pget(lp.w_out, static_cast<int64_t>(d) * cfg.d_mlp + m);
                    resid[t][d] += s + pget(lp.b_out, d);
                }
            }
        }
    }

    const Mat final_ln = [&] {
        Mat y = make_mat(T, D);
        for (int t = 0; t < T; ++t) {
            double mean = 0.0;
            for (int d = 0; d < D; ++d) mean += resid[t][d];
            mean /= D;
            double var = 0.0;
            for (int d = 0; d < D; ++d) var += (resid[t][d] - mean) * (resid[t][d] - mean);
            var /= D;
            const double rstd = 1.0 / std::sqrt(var + static_cast<double>(cfg.layernorm_eps));
            for (int d = 0; d < D; ++d)
                y[t][d] = (resid[t][d] - mean) * rstd * pget(params.lnf_w, d) +
                          pget(params.lnf_b, d);
        }
        return y;
    }();

    out.logits = make_mat(T, V);
    for (int t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
            double s = 0.0;
            for (int d = 0; d < D; ++d)
                s += final_ln[t][d] * pget(params.w_u, static_cast<int64_t>(d) * V + v);
            out.logits[t][v] = s + pget(params.b_u, v);
        }
    }

    for (int t = 0; t + 1 < T; ++t) {
        double mx = out.logits[t][0];
        for (int v = 1; v < V; ++v) mx = std::max(mx, out.logits[t][v]);
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(out.logits[t][v] - mx);
        out.nll_sum -= out.logits[t][tokens[static_cast<size_t>(t) + 1]] - mx - std::log(sum);
        out.scored += 1;
    }
    return out;
}

// Mean cross-entropy over a batch, recomputed independently in doubles.
inline double loss_double(const Parameters& params,
                          const std::vector<std::vector<int>>& batch) {
    double nll = 0.0;
    int scored = 0;
    for (const auto& seq : batch) {
        const ForwardResult r = forward_double(params, seq);
        nll += r.nll_sum;
        scored += r.scored;
    }
    return nll / scored;
}

// Central finite difference of loss_double w.r.t. one parameter component.
inline double fd_gradient(Parameters& params,
                          const std::vector<std::vector<int>>& batch,
                          seedstab::Tensor& tensor, int64_t index, float eps) {
    float& slot = tensor.data[static_cast<size_t>(index)];
    const float saved = slot;
    slot = saved + eps;
    const double up = loss_double(params, batch);
    slot = saved - eps;
    const double down = loss_double(params, batch);
    slot = saved;
    return (up - down) / (2.0 * static_cast<double>(eps));
}

// ---------------------------------------------------------------------------
// Exhaustive enumerators for the stability metrics (the brute-force oracle of
// the acceptance suite). These re-derive everything from the raw matrices.
// ---------------------------------------------------------------------------

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

inline std::vector<double> flatten_matrix(const seedstab::AttentionDump& d,
                                          int prompt, int layer, int head) {
    const int T = d.seq_lens[static_cast<size_t>(prompt)];
    const float* m = d.matrix(prompt, layer, head);
    std::vector<double> out(static_cast<size_t>(T) * T);
    for (size_t i = 0; i < out.size(); ++i) out[i] = m[i];
    return out;
}

inline double mean_prompt_sim(const seedstab::AttentionDump& anchor,
                              const seedstab::AttentionDump& pair, int al, int ah,
                              int pl, int ph) {
    double acc = 0.0;
    const int P = static_cast<int>(anchor.prompt_digests.size());
    for (int p = 0; p < P; ++p)
        acc += cosine(flatten_matrix(anchor, p, al, ah), flatten_matrix(pair, p, pl, ph));
    return acc / P;
}

struct BruteHead {
    std::vector<double> per_pair;
    std::vector<std::pair<int, int>> best;
    double overall = 0.0;
};

inline BruteHead brute_head_stability(
    const seedstab::AttentionDump& anchor,
    const std::vector<const seedstab::AttentionDump*>& pairs, int layer, int head,
    bool cross_layer) {
    BruteHead out;
    double total = 0.0;
    for (const auto* pair : pairs) {
        double best = -2.0;
        std::pair<int, int> best_ref{-1, -1};
        const int l_begin = cross_layer ? 0 : layer;
        const int l_end = cross_layer ? pair->n_layers : layer + 1;
        for (int l = l_begin; l < l_end; ++l) {
            for (int h = 0; h < pair->n_heads; ++h) {
                const double s = mean_prompt_sim(anchor, *pair, layer, head, l, h);
                if (s > best) {
                    best = s;
                    best_ref = {l, h};
                }
            }
        }
        out.per_pair.push_back(best);
        out.best.push_back(best_ref);
        total += best;
    }
    out.overall = total / static_cast<double>(pairs.size());
    return out;
}

}  // namespace oracle
