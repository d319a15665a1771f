#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seedstab/config.hpp"
#include "seedstab/corpus.hpp"
#include "seedstab/tensor.hpp"

namespace seedstab {

struct LengthError : UsageError {
    using UsageError::UsageError;
};
struct VocabularyError : UsageError {
    using UsageError::UsageError;
};

// Attention weights are stored per head: w_q/w_k/w_v/w_o are [H, d_head,
// d_model], so each head's slice is directly addressable for the norm
// statistics and per-head ablation.
struct LayerParams {
    Tensor ln1_w, ln1_b;        // [D]
    Tensor w_q, b_q;            // [H, dh, D], [H, dh]
    Tensor w_k, b_k;
    Tensor w_v, b_v;
    Tensor w_o, b_o;            // [H, dh, D], [D]
    Tensor ln2_w, ln2_b;        // [D]; empty when attn_only
    Tensor w_in, b_in;          // [d_mlp, D], [d_mlp]; empty when attn_only
    Tensor w_out, b_out;        // [D, d_mlp], [D]; empty when attn_only
};

struct Parameters {
    ModelConfig cfg;
    Tensor wte;                 // [V, D]
    Tensor wpe;                 // [n_ctx, D]
    std::vector<LayerParams> layers;
    Tensor lnf_w, lnf_b;        // [D]
    Tensor w_u, b_u;            // [D, V], [V]

    static Parameters zeros_like(const ModelConfig& cfg);

    // Visits every tensor in a fixed order shared by init, the optimizer
    // state and serialization.
    void for_each(const std::function<void(const std::string&, Tensor&)>& f);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& f) const;

    const float* head_slice(const Tensor& t, int head) const {
        return t.ptr() + static_cast<int64_t>(head) * cfg.d_head * cfg.d_model;
    }
};

struct HeadMask {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<uint8_t> active;  // row-major [n_layers, n_heads]

    static HeadMask all_active(const ModelConfig& cfg);
    static HeadMask single_ablated(const ModelConfig& cfg, int layer, int head);

    bool is_active(int layer, int head) const {
        return active[static_cast<size_t>(layer) * static_cast<size_t>(n_heads) +
                      static_cast<size_t>(head)] != 0;
    }
    void set(int layer, int head, bool on) {
        active[static_cast<size_t>(layer) * static_cast<size_t>(n_heads) +
               static_cast<size_t>(head)] = on ? 1 : 0;
    }
    void validate_for(const ModelConfig& cfg) const;
};

// Instrumented single-sequence forward output.
struct ForwardTrace {
    int seq_len = 0;
    std::vector<Tensor> attention;        // per layer [H, T, T], post-softmax
    std::vector<Tensor> head_outputs;     // per layer [H, T, dh], pre-w_o
    std::vector<Tensor> resid_post_attn;  // per layer [T, D]
    Tensor logits;                        // [T, V]
};

Parameters init_params(const ModelConfig& cfg);

ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens,
                     const HeadMask& mask);
ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens);

// Mean next-token cross-entropy (nats) over all scored positions of the
// batch; grads is overwritten with the matching gradient.
double loss_and_grads(const Parameters& params,
                      const std::vector<std::vector<int>>& batch,
                      Parameters& grads);

// exp(mean token-level cross-entropy) over all scored positions. Sequences
// shorter than 2 tokens are skipped with a warning on stderr.
double perplexity_tokens(const Parameters& params,
                         const std::vector<std::vector<int>>& sequences,
                         const HeadMask& mask);

// Prompt-set wrapper: byte-tokenizes each prompt with a prepended BOS.
double perplexity(const Parameters& params, const PromptSet& prompts,
                  const HeadMask& mask);

std::vector<int> tokenize_prompt(const ModelConfig& cfg, const std::string& prompt);

// Frobenius norm of each head's query-weight slice; row-major [L, H].
std::vector<double> query_norms(const Parameters& params);

// Mean l2 norm of each head's output vectors over all prompts and positions;
// row-major [L, H].
std::vector<double> head_output_norms(const Parameters& params,
                                      const PromptSet& prompts);

}  // namespace seedstab
