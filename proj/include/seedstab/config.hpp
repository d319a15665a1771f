#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "seedstab/common.hpp"

namespace seedstab {

// Architecture hyperparameters of one decoder-only transformer.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;  // d_model / n_heads
    int d_mlp = 0;
    bool attn_only = false;
    int n_ctx = 0;
    int d_vocab = 0;
    float attn_scale = 0.0f;      // sqrt(d_head)
    float layernorm_eps = 1e-5f;
    float init_range = 0.0f;      // Gaussian init stddev, default 0.8/sqrt(d_model)
    uint64_t seed = 0;

    // Fills the derived fields (d_head, attn_scale, default init_range).
    static ModelConfig make(int n_layers, int n_heads, int d_model, int d_mlp,
                            bool attn_only, int n_ctx, int d_vocab,
                            uint64_t seed);

    void validate() const;  // throws ConfigError

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);

    // Stable architecture fingerprint: hash of every field except the seed.
    uint64_t arch_id() const;
};

enum class OptimizerKind { adam, adamw };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

// Optimizer and schedule hyperparameters for one refit.
struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-3;
    std::optional<double> weight_decay;  // present iff optimizer == adamw
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 8;
    int max_steps = 1000;
    int checkpoint_every = 500;
    int n_ctx_train = 128;  // training window length

    void validate() const;  // throws ConfigError

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

}  // namespace seedstab
