#include "seedstab/model.hpp"

#include <cmath>
#include <iostream>

#include "seedstab/kernels.hpp"

namespace seedstab {

Parameters Parameters::zeros_like(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.cfg = cfg;
    const int64_t D = cfg.d_model, V = cfg.d_vocab, H = cfg.n_heads,
                  dh = cfg.d_head;
    p.wte = Tensor::zeros({V, D});
    p.wpe = Tensor::zeros({cfg.n_ctx, D});
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
        l.ln1_w = Tensor::zeros({D});
        l.ln1_b = Tensor::zeros({D});
        l.w_q = Tensor::zeros({H, dh, D});
        l.b_q = Tensor::zeros({H, dh});
        l.w_k = Tensor::zeros({H, dh, D});
        l.b_k = Tensor::zeros({H, dh});
        l.w_v = Tensor::zeros({H, dh, D});
        l.b_v = Tensor::zeros({H, dh});
        l.w_o = Tensor::zeros({H, dh, D});
        l.b_o = Tensor::zeros({D});
        if (!cfg.attn_only) {
            l.ln2_w = Tensor::zeros({D});
            l.ln2_b = Tensor::zeros({D});
            l.w_in = Tensor::zeros({cfg.d_mlp, D});
            l.b_in = Tensor::zeros({cfg.d_mlp});
            l.w_out = Tensor::zeros({D, cfg.d_mlp});
            l.b_out = Tensor::zeros({D});
        }
    }
    p.lnf_w = Tensor::zeros({D});
    p.lnf_b = Tensor::zeros({D});
    p.w_u = Tensor::zeros({D, V});
    p.b_u = Tensor::zeros({V});
    return p;
}

void Parameters::for_each(
    const std::function<void(const std::string&, Tensor&)>& f) {
    f("wte", wte);
    f("wpe", wpe);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string base = "blocks." + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        f(base + "ln1.w", lp.ln1_w);
        f(base + "ln1.b", lp.ln1_b);
        f(base + "attn.w_q", lp.w_q);
        f(base + "attn.b_q", lp.b_q);
        f(base + "attn.w_k", lp.w_k);
        f(base + "attn.b_k", lp.b_k);
        f(base + "attn.w_v", lp.w_v);
        f(base + "attn.b_v", lp.b_v);
        f(base + "attn.w_o", lp.w_o);
        f(base + "attn.b_o", lp.b_o);
        if (!cfg.attn_only) {
            f(base + "ln2.w", lp.ln2_w);
            f(base + "ln2.b", lp.ln2_b);
            f(base + "mlp.w_in", lp.w_in);
            f(base + "mlp.b_in", lp.b_in);
            f(base + "mlp.w_out", lp.w_out);
            f(base + "mlp.b_out", lp.b_out);
        }
    }
    f("lnf.w", lnf_w);
    f("lnf.b", lnf_b);
    f("unembed.w_u", w_u);
    f("unembed.b_u", b_u);
}

void Parameters::for_each(
    const std::function<void(const std::string&, const Tensor&)>& f) const {
    const_cast<Parameters*>(this)->for_each(
        [&f](const std::string& name, Tensor& t) { f(name, t); });
}

HeadMask HeadMask::all_active(const ModelConfig& cfg) {
    HeadMask m;
    m.n_layers = cfg.n_layers;
    m.n_heads = cfg.n_heads;
    m.active.assign(static_cast<size_t>(cfg.n_layers) * cfg.n_heads, 1);
    return m;
}

HeadMask HeadMask::single_ablated(const ModelConfig& cfg, int layer, int head) {
    HeadMask m = all_active(cfg);
    m.set(layer, head, false);
    return m;
}

void HeadMask::validate_for(const ModelConfig& cfg) const {
    if (n_layers != cfg.n_layers || n_heads != cfg.n_heads)
        throw UsageError("HeadMask shape does not match ModelConfig");
}

Parameters init_params(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p = Parameters::zeros_like(cfg);
    GaussianRng rng(cfg.seed);
    // Weight matrices draw from the seeded stream in for_each order; LayerNorm
    // scales start at 1, every bias and shift at 0.
    p.for_each([&](const std::string& name, Tensor& t) {
        const bool is_weight = name == "wte" || name == "wpe" ||
                               name.find(".w_") != std::string::npos;
        const bool is_ln_scale = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0 &&
                                 name.find("ln") != std::string::npos;
        if (is_ln_scale) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else if (is_weight) {
            for (float& v : t.data) v = rng.normal_f32(cfg.init_range);
        }
        // biases and LN shifts stay zero
    });
    return p;
}

namespace {

// Per-sequence activation workspace; sized on first use and reused across
// sequences of the same length by the training loop.
struct Activations {
    int T = 0;
    Tensor embedded;  // [T, D]
    struct Layer {
        Tensor ln1_out, ln1_mean, ln1_rstd;
        Tensor q, k, v;          // [H, T, dh]
        Tensor att;              // [H, T, T]
        Tensor head_out;         // [H, T, dh]
        Tensor attn_proj;        // [T, D]
        Tensor resid_mid;        // [T, D]
        Tensor ln2_out, ln2_mean, ln2_rstd;
        Tensor mlp_pre, mlp_act;  // [T, d_mlp]
        Tensor resid_post;        // [T, D]
    };
    std::vector<Layer> layers;
    Tensor lnf_out, lnf_mean, lnf_rstd;
    Tensor logits;  // [T, V]

    void resize(const ModelConfig& cfg, int seq_len) {
        T = seq_len;
        const int64_t D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head;
        embedded = Tensor::zeros({T, D});
        layers.assign(static_cast<size_t>(cfg.n_layers), Layer{});
        for (auto& l : layers) {
            l.ln1_out = Tensor::zeros({T, D});
            l.ln1_mean = Tensor::zeros({T});
            l.ln1_rstd = Tensor::zeros({T});
            l.q = Tensor::zeros({H, T, dh});
            l.k = Tensor::zeros({H, T, dh});
            l.v = Tensor::zeros({H, T, dh});
            l.att = Tensor::zeros({H, T, T});
            l.head_out = Tensor::zeros({H, T, dh});
            l.attn_proj = Tensor::zeros({T, D});
            l.resid_mid = Tensor::zeros({T, D});
            if (!cfg.attn_only) {
                l.ln2_out = Tensor::zeros({T, D});
                l.ln2_mean = Tensor::zeros({T});
                l.ln2_rstd = Tensor::zeros({T});
                l.mlp_pre = Tensor::zeros({T, cfg.d_mlp});
                l.mlp_act = Tensor::zeros({T, cfg.d_mlp});
                l.resid_post = Tensor::zeros({T, D});
            }
        }
        lnf_out = Tensor::zeros({T, D});
        lnf_mean = Tensor::zeros({T});
        lnf_rstd = Tensor::zeros({T});
        logits = Tensor::zeros({T, cfg.d_vocab});
    }

    const Tensor& resid_pre(const ModelConfig& cfg, int layer) const {
        if (layer == 0) return embedded;
        const Layer& prev = layers[static_cast<size_t>(layer - 1)];
        return cfg.attn_only ? prev.resid_mid : prev.resid_post;
    }
    const Tensor& resid_final(const ModelConfig& cfg) const {
        const Layer& last = layers.back();
        return cfg.attn_only ? last.resid_mid : last.resid_post;
    }
};

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
    if (tokens.empty()) throw UsageError("token sequence is empty");
    if (static_cast<int>(tokens.size()) > cfg.n_ctx)
        throw LengthError("sequence of length " + std::to_string(tokens.size()) +
                          " exceeds n_ctx " + std::to_string(cfg.n_ctx));
    for (int t : tokens) {
        if (t < 0 || t >= cfg.d_vocab)
            throw VocabularyError("token id " + std::to_string(t) +
                                  " outside vocabulary of size " +
                                  std::to_string(cfg.d_vocab));
    }
}

void forward_seq(const Parameters& params, const std::vector<int>& tokens,
                 const HeadMask& mask, Activations& acts) {
    const ModelConfig& cfg = params.cfg;
    const int T = static_cast<int>(tokens.size());
    const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head;
    if (acts.T != T) acts.resize(cfg, T);

    for (int t = 0; t < T; ++t) {
        const float* te = params.wte.ptr() + static_cast<int64_t>(tokens[static_cast<size_t>(t)]) * D;
        const float* pe = params.wpe.ptr() + static_cast<int64_t>(t) * D;
        float* out = acts.embedded.ptr() + static_cast<int64_t>(t) * D;
        for (int d = 0; d < D; ++d) out[d] = te[d] + pe[d];
    }

    const float inv_scale = 1.0f / cfg.attn_scale;
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& A = acts.layers[static_cast<size_t>(l)];
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        const Tensor& x = acts.resid_pre(cfg, l);

        kern::layernorm_forward(x.ptr(), lp.ln1_w.ptr(), lp.ln1_b.ptr(),
                                A.ln1_out.ptr(), A.ln1_mean.ptr(),
                                A.ln1_rstd.ptr(), T, D, cfg.layernorm_eps);

        A.attn_proj.zero();
        for (int h = 0; h < H; ++h) {
            const int64_t head_td = static_cast<int64_t>(h) * T * dh;
            float* q = A.q.ptr() + head_td;
            float* k = A.k.ptr() + head_td;
            float* v = A.v.ptr() + head_td;
            kern::matmul_nt(A.ln1_out.ptr(), params.head_slice(lp.w_q, h), q, T, D, dh);
            kern::matmul_nt(A.ln1_out.ptr(), params.head_slice(lp.w_k, h), k, T, D, dh);
            kern::matmul_nt(A.ln1_out.ptr(), params.head_slice(lp.w_v, h), v, T, D, dh);
            kern::add_bias_rows(q, lp.b_q.ptr() + static_cast<int64_t>(h) * dh, T, dh);
            kern::add_bias_rows(k, lp.b_k.ptr() + static_cast<int64_t>(h) * dh, T, dh);
            kern::add_bias_rows(v, lp.b_v.ptr() + static_cast<int64_t>(h) * dh, T, dh);

            float* att = A.att.ptr() + static_cast<int64_t>(h) * T * T;
            kern::matmul_nt(q, k, att, T, dh, T);
            kern::scale_inplace(att, inv_scale, static_cast<int64_t>(T) * T);
            kern::causal_softmax(att, T);

            float* ho = A.head_out.ptr() + head_td;
            kern::matmul_nn(att, v, ho, T, T, dh);
            if (!mask.is_active(l, h)) {
                std::fill(ho, ho + static_cast<int64_t>(T) * dh, 0.0f);
            }
            kern::matmul_nn(ho, params.head_slice(lp.w_o, h), A.attn_proj.ptr(),
                            T, dh, D, /*accumulate=*/true);
        }
        kern::add_bias_rows(A.attn_proj.ptr(), lp.b_o.ptr(), T, D);

        for (int64_t i = 0; i < static_cast<int64_t>(T) * D; ++i)
            A.resid_mid.data[static_cast<size_t>(i)] =
                x.data[static_cast<size_t>(i)] + A.attn_proj.data[static_cast<size_t>(i)];

        if (!cfg.attn_only) {
            kern::layernorm_forward(A.resid_mid.ptr(), lp.ln2_w.ptr(),
                                    lp.ln2_b.ptr(), A.ln2_out.ptr(),
                                    A.ln2_mean.ptr(), A.ln2_rstd.ptr(), T, D,
                                    cfg.layernorm_eps);
            kern::matmul_nt(A.ln2_out.ptr(), lp.w_in.ptr(), A.mlp_pre.ptr(), T, D,
                            cfg.d_mlp);
            kern::add_bias_rows(A.mlp_pre.ptr(), lp.b_in.ptr(), T, cfg.d_mlp);
            kern::gelu_forward(A.mlp_pre.ptr(), A.mlp_act.ptr(),
                               static_cast<int64_t>(T) * cfg.d_mlp);
            kern::matmul_nt(A.mlp_act.ptr(), lp.w_out.ptr(), A.resid_post.ptr(),
                            T, cfg.d_mlp, D);
            kern::add_bias_rows(A.resid_post.ptr(), lp.b_out.ptr(), T, D);
            kern::add_inplace(A.resid_post.ptr(), A.resid_mid.ptr(),
                              static_cast<int64_t>(T) * D);
        }
    }

    const Tensor& final_resid = acts.resid_final(cfg);
    kern::layernorm_forward(final_resid.ptr(), params.lnf_w.ptr(),
                            params.lnf_b.ptr(), acts.lnf_out.ptr(),
                            acts.lnf_mean.ptr(), acts.lnf_rstd.ptr(), T, D,
                            cfg.layernorm_eps);
    kern::matmul_nn(acts.lnf_out.ptr(), params.w_u.ptr(), acts.logits.ptr(), T, D,
                    cfg.d_vocab);
    kern::add_bias_rows(acts.logits.ptr(), params.b_u.ptr(), T, cfg.d_vocab);
}

// Gradient workspace for one sequence.
struct BackwardScratch {
    Tensor d_resid, d_tmp, d_ln;       // [T, D]
    Tensor d_head_out, d_q, d_k, d_v;  // [T, dh]
    Tensor d_att, d_scores;            // [T, T]
    Tensor d_mlp_act, d_mlp_pre;       // [T, d_mlp]
    Tensor d_lnf;                      // [T, D]

    void resize(const ModelConfig& cfg, int T) {
        const int64_t D = cfg.d_model, dh = cfg.d_head;
        d_resid = Tensor::zeros({T, D});
        d_tmp = Tensor::zeros({T, D});
        d_ln = Tensor::zeros({T, D});
        d_head_out = Tensor::zeros({T, dh});
        d_q = Tensor::zeros({T, dh});
        d_k = Tensor::zeros({T, dh});
        d_v = Tensor::zeros({T, dh});
        d_att = Tensor::zeros({T, T});
        d_scores = Tensor::zeros({T, T});
        if (!cfg.attn_only) {
            d_mlp_act = Tensor::zeros({T, cfg.d_mlp});
            d_mlp_pre = Tensor::zeros({T, cfg.d_mlp});
        }
        d_lnf = Tensor::zeros({T, D});
    }
};

void column_sums_add(const float* x, float* out, int T, int D) {
    for (int t = 0; t < T; ++t) {
        const float* row = x + static_cast<int64_t>(t) * D;
        for (int d = 0; d < D; ++d) out[d] += row[d];
    }
}

// Backpropagates d_logits through the whole network, accumulating raw
// gradient sums into grads.
void backward_seq(const Parameters& params, const std::vector<int>& tokens,
                  const HeadMask& mask, const Activations& acts,
                  const Tensor& d_logits, Parameters& grads,
                  BackwardScratch& ws) {
    const ModelConfig& cfg = params.cfg;
    const int T = static_cast<int>(tokens.size());
    const int D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head;
    if (ws.d_resid.numel() != static_cast<int64_t>(T) * D) ws.resize(cfg, T);

    // unembed
    kern::matmul_tn(acts.lnf_out.ptr(), d_logits.ptr(), grads.w_u.ptr(), D, T,
                    cfg.d_vocab, /*accumulate=*/true);
    column_sums_add(d_logits.ptr(), grads.b_u.ptr(), T, cfg.d_vocab);
    kern::matmul_nt(d_logits.ptr(), params.w_u.ptr(), ws.d_lnf.ptr(), T,
                    cfg.d_vocab, D);

    // final layernorm
    const Tensor& final_resid = acts.resid_final(cfg);
    kern::layernorm_backward(ws.d_lnf.ptr(), final_resid.ptr(), params.lnf_w.ptr(),
                             acts.lnf_mean.ptr(), acts.lnf_rstd.ptr(),
                             ws.d_resid.ptr(), grads.lnf_w.ptr(),
                             grads.lnf_b.ptr(), T, D);

    const float inv_scale = 1.0f / cfg.attn_scale;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& A = acts.layers[static_cast<size_t>(l)];
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        LayerParams& gl = grads.layers[static_cast<size_t>(l)];

        if (!cfg.attn_only) {
            // resid_post = resid_mid + mlp(ln2(resid_mid)); d_resid currently
            // holds d(resid_post).
            kern::matmul_nn(ws.d_resid.ptr(), lp.w_out.ptr(), ws.d_mlp_act.ptr(),
                            T, D, cfg.d_mlp);
            kern::matmul_tn(ws.d_resid.ptr(), A.mlp_act.ptr(), gl.w_out.ptr(), D,
                            T, cfg.d_mlp, /*accumulate=*/true);
            column_sums_add(ws.d_resid.ptr(), gl.b_out.ptr(), T, D);

            ws.d_mlp_pre.zero();
            kern::gelu_backward(A.mlp_pre.ptr(), ws.d_mlp_act.ptr(),
                                ws.d_mlp_pre.ptr(),
                                static_cast<int64_t>(T) * cfg.d_mlp);

            kern::matmul_nn(ws.d_mlp_pre.ptr(), lp.w_in.ptr(), ws.d_ln.ptr(), T,
                            cfg.d_mlp, D);
            kern::matmul_tn(ws.d_mlp_pre.ptr(), A.ln2_out.ptr(), gl.w_in.ptr(),
                            cfg.d_mlp, T, D, /*accumulate=*/true);
            column_sums_add(ws.d_mlp_pre.ptr(), gl.b_in.ptr(), T, cfg.d_mlp);

            kern::layernorm_backward(ws.d_ln.ptr(), A.resid_mid.ptr(),
                                     lp.ln2_w.ptr(), A.ln2_mean.ptr(),
                                     A.ln2_rstd.ptr(), ws.d_tmp.ptr(),
                                     gl.ln2_w.ptr(), gl.ln2_b.ptr(), T, D);
            kern::add_inplace(ws.d_resid.ptr(), ws.d_tmp.ptr(),
                              static_cast<int64_t>(T) * D);
        }

        // d_resid holds d(resid_mid) = d(attn_proj) + d(resid_pre residual).
        column_sums_add(ws.d_resid.ptr(), gl.b_o.ptr(), T, D);
        ws.d_ln.zero();
        for (int h = 0; h < H; ++h) {
            const int64_t head_td = static_cast<int64_t>(h) * T * dh;
            const float* q = A.q.ptr() + head_td;
            const float* k = A.k.ptr() + head_td;
            const float* v = A.v.ptr() + head_td;
            const float* att = A.att.ptr() + static_cast<int64_t>(h) * T * T;
            const float* ho = A.head_out.ptr() + head_td;

            kern::matmul_nt(ws.d_resid.ptr(), params.head_slice(lp.w_o, h),
                            ws.d_head_out.ptr(), T, D, dh);
            kern::matmul_tn(ho, ws.d_resid.ptr(),
                            gl.w_o.ptr() + static_cast<int64_t>(h) * dh * D, dh,
                            T, D, /*accumulate=*/true);
            if (!mask.is_active(l, h)) {
                ws.d_head_out.zero();
            }

            kern::matmul_nt(ws.d_head_out.ptr(), v, ws.d_att.ptr(), T, dh, T);
            kern::matmul_tn(att, ws.d_head_out.ptr(), ws.d_v.ptr(), T, T, dh);

            kern::causal_softmax_backward(att, ws.d_att.ptr(), ws.d_scores.ptr(), T);
            kern::scale_inplace(ws.d_scores.ptr(), inv_scale,
                                static_cast<int64_t>(T) * T);

            kern::matmul_nn(ws.d_scores.ptr(), k, ws.d_q.ptr(), T, T, dh);
            kern::matmul_tn(ws.d_scores.ptr(), q, ws.d_k.ptr(), T, T, dh);

            auto head_grad = [&](Tensor& gw, Tensor& gb, const Tensor& d_proj) {
                kern::matmul_tn(d_proj.ptr(), A.ln1_out.ptr(),
                                gw.ptr() + static_cast<int64_t>(h) * dh * D, dh,
                                T, D, /*accumulate=*/true);
                column_sums_add(d_proj.ptr(),
                                gb.ptr() + static_cast<int64_t>(h) * dh, T, dh);
            };
            head_grad(gl.w_q, gl.b_q, ws.d_q);
            head_grad(gl.w_k, gl.b_k, ws.d_k);
            head_grad(gl.w_v, gl.b_v, ws.d_v);

            kern::matmul_nn(ws.d_q.ptr(), params.head_slice(lp.w_q, h), ws.d_ln.ptr(),
                            T, dh, D, /*accumulate=*/true);
            kern::matmul_nn(ws.d_k.ptr(), params.head_slice(lp.w_k, h), ws.d_ln.ptr(),
                            T, dh, D, /*accumulate=*/true);
            kern::matmul_nn(ws.d_v.ptr(), params.head_slice(lp.w_v, h), ws.d_ln.ptr(),
                            T, dh, D, /*accumulate=*/true);
        }

        const Tensor& x = acts.resid_pre(cfg, l);
        kern::layernorm_backward(ws.d_ln.ptr(), x.ptr(), lp.ln1_w.ptr(),
                                 A.ln1_mean.ptr(), A.ln1_rstd.ptr(),
                                 ws.d_tmp.ptr(), gl.ln1_w.ptr(), gl.ln1_b.ptr(),
                                 T, D);
        kern::add_inplace(ws.d_resid.ptr(), ws.d_tmp.ptr(),
                          static_cast<int64_t>(T) * D);
    }

    // embeddings; the token scatter runs serially in position order so the
    // accumulation is deterministic.
    for (int t = 0; t < T; ++t) {
        const float* src = ws.d_resid.ptr() + static_cast<int64_t>(t) * D;
        float* g_tok = grads.wte.ptr() + static_cast<int64_t>(tokens[static_cast<size_t>(t)]) * D;
        float* g_pos = grads.wpe.ptr() + static_cast<int64_t>(t) * D;
        for (int d = 0; d < D; ++d) {
            g_tok[d] += src[d];
            g_pos[d] += src[d];
        }
    }
}

// Softmax + NLL for the scored positions of one sequence; d_logits receives
// (p - onehot) rows (unscaled) and the f64 NLL sum is returned.
double nll_and_dlogits(const ModelConfig& cfg, const Activations& acts,
                       const std::vector<int>& tokens, Tensor* d_logits) {
    const int T = static_cast<int>(tokens.size());
    const int V = cfg.d_vocab;
    double nll_sum = 0.0;
    if (d_logits) {
        if (d_logits->numel() != static_cast<int64_t>(T) * V)
            *d_logits = Tensor::zeros({T, V});
        else
            d_logits->zero();
    }
    for (int t = 0; t + 1 < T; ++t) {
        const float* row = acts.logits.ptr() + static_cast<int64_t>(t) * V;
        float mx = row[0];
        for (int v = 1; v < V; ++v) mx = row[v] > mx ? row[v] : mx;
        double sum = 0.0;
        for (int v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
        const int target = tokens[static_cast<size_t>(t) + 1];
        const double logp = static_cast<double>(row[target]) - mx - std::log(sum);
        nll_sum -= logp;
        if (d_logits) {
            float* drow = d_logits->ptr() + static_cast<int64_t>(t) * V;
            const float inv_sum = static_cast<float>(1.0 / sum);
            for (int v = 0; v < V; ++v)
                drow[v] = std::exp(row[v] - mx) * inv_sum;
            drow[target] -= 1.0f;
        }
    }
    return nll_sum;
}

}  // namespace

ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens,
                     const HeadMask& mask) {
    const ModelConfig& cfg = params.cfg;
    check_tokens(cfg, tokens);
    mask.validate_for(cfg);

    Activations acts;
    forward_seq(params, tokens, mask, acts);

    ForwardTrace trace;
    trace.seq_len = static_cast<int>(tokens.size());
    trace.attention.reserve(static_cast<size_t>(cfg.n_layers));
    trace.head_outputs.reserve(static_cast<size_t>(cfg.n_layers));
    trace.resid_post_attn.reserve(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& A = acts.layers[static_cast<size_t>(l)];
        trace.attention.push_back(std::move(A.att));
        trace.head_outputs.push_back(std::move(A.head_out));
        trace.resid_post_attn.push_back(std::move(A.resid_mid));
    }
    trace.logits = std::move(acts.logits);
    return trace;
}

ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens) {
    return forward(params, tokens, HeadMask::all_active(params.cfg));
}

double loss_and_grads(const Parameters& params,
                      const std::vector<std::vector<int>>& batch,
                      Parameters& grads) {
    const ModelConfig& cfg = params.cfg;
    if (batch.empty()) throw UsageError("loss_and_grads: batch is empty");
    for (const auto& seq : batch) {
        check_tokens(cfg, seq);
        if (seq.size() < 2)
            throw UsageError("loss_and_grads: sequences need at least 2 tokens");
    }
    grads = Parameters::zeros_like(cfg);
    const HeadMask mask = HeadMask::all_active(cfg);

    Activations acts;
    BackwardScratch ws;
    Tensor d_logits;
    // Per-sequence gradients land in a scratch accumulator that is summed
    // into the batch total afterwards; identical sequences then contribute
    // bit-identical addends.
    Parameters seq_grads = Parameters::zeros_like(cfg);
    double nll_sum = 0.0;
    int64_t scored = 0;
    for (const auto& seq : batch) {
        forward_seq(params, seq, mask, acts);
        nll_sum += nll_and_dlogits(cfg, acts, seq, &d_logits);
        scored += static_cast<int64_t>(seq.size()) - 1;
        seq_grads.for_each([](const std::string&, Tensor& t) { t.zero(); });
        backward_seq(params, seq, mask, acts, d_logits, seq_grads, ws);
        std::vector<Tensor*> dst;
        grads.for_each([&](const std::string&, Tensor& t) { dst.push_back(&t); });
        size_t i = 0;
        seq_grads.for_each([&](const std::string&, Tensor& t) {
            kern::add_inplace(dst[i++]->ptr(), t.ptr(), t.numel());
        });
    }
    const float inv_scored = 1.0f / static_cast<float>(scored);
    grads.for_each([&](const std::string&, Tensor& t) {
        kern::scale_inplace(t.ptr(), inv_scored, t.numel());
    });
    return nll_sum / static_cast<double>(scored);
}

double perplexity_tokens(const Parameters& params,
                         const std::vector<std::vector<int>>& sequences,
                         const HeadMask& mask) {
    const ModelConfig& cfg = params.cfg;
    if (sequences.empty()) throw UsageError("perplexity: no sequences");
    mask.validate_for(cfg);
    Activations acts;
    double nll_sum = 0.0;
    int64_t scored = 0;
    size_t skipped = 0;
    for (const auto& seq : sequences) {
        if (seq.size() < 2) {
            ++skipped;
            std::cerr << "warning: perplexity skipping sequence with fewer than 2 tokens\n";
            continue;
        }
        check_tokens(cfg, seq);
        forward_seq(params, seq, mask, acts);
        nll_sum += nll_and_dlogits(cfg, acts, seq, nullptr);
        scored += static_cast<int64_t>(seq.size()) - 1;
    }
    if (scored == 0)
        throw UsageError("perplexity: every sequence was skipped as too short");
    (void)skipped;
    return std::exp(nll_sum / static_cast<double>(scored));
}

std::vector<int> tokenize_prompt(const ModelConfig& cfg, const std::string& prompt) {
    Tokenizer tok{cfg.d_vocab};
    return tok.encode(prompt, /*prepend_bos=*/true);
}

double perplexity(const Parameters& params, const PromptSet& prompts,
                  const HeadMask& mask) {
    if (prompts.prompts.empty()) throw UsageError("perplexity: empty prompt set");
    std::vector<std::vector<int>> seqs;
    seqs.reserve(prompts.size());
    for (const auto& p : prompts.prompts)
        seqs.push_back(tokenize_prompt(params.cfg, p));
    return perplexity_tokens(params, seqs, mask);
}

std::vector<double> query_norms(const Parameters& params) {
    const ModelConfig& cfg = params.cfg;
    std::vector<double> out(static_cast<size_t>(cfg.n_layers) * cfg.n_heads, 0.0);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const float* w = params.head_slice(params.layers[static_cast<size_t>(l)].w_q, h);
            double ss = 0.0;
            const int64_t n = static_cast<int64_t>(cfg.d_head) * cfg.d_model;
            for (int64_t i = 0; i < n; ++i)
                ss += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            out[static_cast<size_t>(l) * cfg.n_heads + static_cast<size_t>(h)] = std::sqrt(ss);
        }
    }
    return out;
}

std::vector<double> head_output_norms(const Parameters& params,
                                      const PromptSet& prompts) {
    const ModelConfig& cfg = params.cfg;
    if (prompts.prompts.empty())
        throw UsageError("head_output_norms: empty prompt set");
    const HeadMask mask = HeadMask::all_active(cfg);
    std::vector<double> sums(static_cast<size_t>(cfg.n_layers) * cfg.n_heads, 0.0);
    int64_t positions = 0;
    for (const auto& p : prompts.prompts) {
        const auto tokens = tokenize_prompt(cfg, p);
        const ForwardTrace trace = forward(params, tokens, mask);
        const int T = trace.seq_len;
        positions += T;
        for (int l = 0; l < cfg.n_layers; ++l) {
            const Tensor& ho = trace.head_outputs[static_cast<size_t>(l)];
            for (int h = 0; h < cfg.n_heads; ++h) {
                const float* base = ho.ptr() + static_cast<int64_t>(h) * T * cfg.d_head;
                double acc = 0.0;
                for (int t = 0; t < T; ++t) {
                    double ss = 0.0;
                    const float* vec = base + static_cast<int64_t>(t) * cfg.d_head;
                    for (int d = 0; d < cfg.d_head; ++d)
                        ss += static_cast<double>(vec[d]) * static_cast<double>(vec[d]);
                    acc += std::sqrt(ss);
                }
                sums[static_cast<size_t>(l) * cfg.n_heads + static_cast<size_t>(h)] += acc;
            }
        }
    }
    for (double& v : sums) v /= static_cast<double>(positions);
    return sums;
}

}  // namespace seedstab
