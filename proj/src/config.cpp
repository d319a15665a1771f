#include "seedstab/config.hpp"

#include <cmath>

namespace seedstab {

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

ModelConfig ModelConfig::make(int n_layers, int n_heads, int d_model, int d_mlp,
                              bool attn_only, int n_ctx, int d_vocab,
                              uint64_t seed) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_model = d_model;
    c.d_head = n_heads > 0 ? d_model / n_heads : 0;
    c.d_mlp = d_mlp;
    c.attn_only = attn_only;
    c.n_ctx = n_ctx;
    c.d_vocab = d_vocab;
    c.attn_scale = std::sqrt(static_cast<float>(c.d_head));
    c.layernorm_eps = 1e-5f;
    c.init_range = 0.8f / std::sqrt(static_cast<float>(d_model));
    c.seed = seed;
    c.validate();
    return c;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("ModelConfig: " + msg); };
    if (n_layers <= 0) fail("n_layers must be positive");
    if (n_heads <= 0) fail("n_heads must be positive");
    if (d_model <= 0) fail("d_model must be positive");
    if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    if (d_head != d_model / n_heads) fail("d_head must equal d_model / n_heads");
    if (!attn_only && d_mlp <= 0) fail("d_mlp must be positive");
    if (n_ctx <= 0) fail("n_ctx must be positive");
    if (d_vocab <= 0) fail("d_vocab must be positive");
    if (!(attn_scale > 0.0f)) fail("attn_scale must be positive");
    const float want_scale = std::sqrt(static_cast<float>(d_head));
    if (std::fabs(attn_scale - want_scale) > 1e-4f * want_scale)
        fail("attn_scale must equal sqrt(d_head)");
    if (!(layernorm_eps > 0.0f)) fail("layernorm_eps must be positive");
    if (!(init_range > 0.0f)) fail("init_range must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{
        {"n_layers", n_layers},     {"n_heads", n_heads},
        {"d_model", d_model},       {"d_head", d_head},
        {"d_mlp", d_mlp},           {"attn_only", attn_only},
        {"n_ctx", n_ctx},           {"d_vocab", d_vocab},
        {"attn_scale", attn_scale}, {"layernorm_eps", layernorm_eps},
        {"init_range", init_range}, {"seed", seed},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.attn_only = j.at("attn_only").get<bool>();
    c.n_ctx = j.at("n_ctx").get<int>();
    c.d_vocab = j.at("d_vocab").get<int>();
    c.attn_scale = j.at("attn_scale").get<float>();
    c.layernorm_eps = j.at("layernorm_eps").get<float>();
    c.init_range = j.at("init_range").get<float>();
    c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
}

uint64_t ModelConfig::arch_id() const {
    nlohmann::json j = to_json();
    j.erase("seed");
    return fnv1a64(j.dump());
}

std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "adamw";
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam" || name == "Adam") return OptimizerKind::adam;
    if (name == "adamw" || name == "AdamW") return OptimizerKind::adamw;
    throw ConfigError("unknown optimizer '" + name + "' (expected adam or adamw)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("TrainConfig: " + msg); };
    if (!(lr > 0.0)) fail("lr must be positive");
    if (optimizer == OptimizerKind::adam && weight_decay.has_value())
        fail("weight_decay must be absent for adam");
    if (optimizer == OptimizerKind::adamw && !weight_decay.has_value())
        fail("weight_decay must be present for adamw");
    if (weight_decay.has_value() && *weight_decay < 0.0)
        fail("weight_decay must be nonnegative");
    if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2 must lie in (0,1)");
    if (!(eps > 0.0)) fail("eps must be positive");
    if (batch_size <= 0) fail("batch_size must be positive");
    if (max_steps < 0) fail("max_steps must be nonnegative");
    if (checkpoint_every <= 0) fail("checkpoint_every must be positive");
    if (n_ctx_train <= 1) fail("n_ctx_train must exceed 1");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j{
        {"optimizer", optimizer_name(optimizer)},
        {"lr", lr},
        {"beta1", beta1},
        {"beta2", beta2},
        {"eps", eps},
        {"batch_size", batch_size},
        {"max_steps", max_steps},
        {"checkpoint_every", checkpoint_every},
        {"n_ctx_train", n_ctx_train},
    };
    if (weight_decay.has_value()) j["weight_decay"] = *weight_decay;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
    c.lr = j.at("lr").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_steps = j.at("max_steps").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.n_ctx_train = j.at("n_ctx_train").get<int>();
    c.validate();
    return c;
}

}  // namespace seedstab
