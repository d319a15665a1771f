#include "seedstab/optim.hpp"

#include <cmath>

namespace seedstab {

void optimizer_step(Parameters& params, const Parameters& grads,
                    OptimState& state, const TrainConfig& cfg) {
    cfg.validate();
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const float bias1 = static_cast<float>(1.0 - std::pow(cfg.beta1, t));
    const float bias2 = static_cast<float>(1.0 - std::pow(cfg.beta2, t));
    const float beta1 = static_cast<float>(cfg.beta1);
    const float beta2 = static_cast<float>(cfg.beta2);
    const float lr = static_cast<float>(cfg.lr);
    const float eps = static_cast<float>(cfg.eps);
    const float decay_factor =
        cfg.optimizer == OptimizerKind::adamw
            ? 1.0f - static_cast<float>(cfg.lr * *cfg.weight_decay)
            : 1.0f;

    struct Slot {
        std::string name;
        Tensor* p;
        const Tensor* g;
        Tensor* m;
        Tensor* v;
    };
    std::vector<Slot> slots;
    params.for_each([&](const std::string& name, Tensor& tns) {
        slots.push_back({name, &tns, nullptr, nullptr, nullptr});
    });
    size_t i = 0;
    grads.for_each([&](const std::string&, const Tensor& tns) { slots[i++].g = &tns; });
    i = 0;
    state.m.for_each([&](const std::string&, Tensor& tns) { slots[i++].m = &tns; });
    i = 0;
    state.v.for_each([&](const std::string&, Tensor& tns) { slots[i++].v = &tns; });

    // Validate every gradient before touching any parameter so a divergence
    // leaves params untouched.
    for (const auto& s : slots) {
        const float* g = s.g->ptr();
        const int64_t n = s.g->numel();
        for (int64_t k = 0; k < n; ++k) {
            if (!std::isfinite(g[k]))
                throw DivergenceError("non-finite gradient in tensor " + s.name);
        }
    }

    for (auto& s : slots) {
        const int64_t n = s.p->numel();
        const float* g = s.g->ptr();
        float* p = s.p->ptr();
        float* m = s.m->ptr();
        float* v = s.v->ptr();
        for (int64_t k = 0; k < n; ++k) {
            m[k] = beta1 * m[k] + (1.0f - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0f - beta2) * g[k] * g[k];
            const float mhat = m[k] / bias1;
            const float vhat = v[k] / bias2;
            p[k] = p[k] * decay_factor - lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

Checkpoint train_refit(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const TokenCorpus& corpus, const ProgressFn& progress) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_cfg.n_ctx_train > model_cfg.n_ctx)
        throw ConfigError("n_ctx_train exceeds model n_ctx");

    const size_t needed = static_cast<size_t>(train_cfg.max_steps) *
                          static_cast<size_t>(train_cfg.batch_size);
    const size_t have = corpus.train_window_count(train_cfg.n_ctx_train);
    if (have < needed)
        throw UsageError("corpus provides " + std::to_string(have) +
                         " training windows but the run needs " +
                         std::to_string(needed));

    Checkpoint ckpt;
    ckpt.model_cfg = model_cfg;
    ckpt.train_cfg = train_cfg;
    ckpt.seed = model_cfg.seed;
    ckpt.params = init_params(model_cfg);
    ckpt.loss_history.reserve(static_cast<size_t>(train_cfg.max_steps));

    const auto order =
        corpus.shuffled_train_windows(model_cfg.seed, train_cfg.n_ctx_train);
    OptimState state = OptimState::zeros_like(model_cfg);
    Parameters grads;

    std::vector<std::vector<int>> batch(static_cast<size_t>(train_cfg.batch_size));
    for (int step = 0; step < train_cfg.max_steps; ++step) {
        const size_t base = static_cast<size_t>(step) *
                            static_cast<size_t>(train_cfg.batch_size);
        for (int b = 0; b < train_cfg.batch_size; ++b)
            batch[static_cast<size_t>(b)] =
                corpus.train_window(order[base + static_cast<size_t>(b)],
                                    train_cfg.n_ctx_train);

        const double loss = loss_and_grads(ckpt.params, batch, grads);
        if (!std::isfinite(loss)) {
            ckpt.diverged = true;
            break;
        }
        try {
            optimizer_step(ckpt.params, grads, state, train_cfg);
        } catch (const DivergenceError&) {
            ckpt.diverged = true;
            break;
        }
        ckpt.loss_history.push_back(loss);
        ckpt.step = step + 1;
        if (progress && ((step + 1) % train_cfg.checkpoint_every == 0 ||
                         step + 1 == train_cfg.max_steps))
            progress(step + 1, loss);
    }
    return ckpt;
}

}  // namespace seedstab
