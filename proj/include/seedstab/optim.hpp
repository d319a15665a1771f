#pragma once

#include <functional>
#include <vector>

#include "seedstab/config.hpp"
#include "seedstab/corpus.hpp"
#include "seedstab/model.hpp"

namespace seedstab {

struct OptimState {
    int64_t step = 0;
    Parameters m;  // first-moment accumulator
    Parameters v;  // second-moment accumulator

    static OptimState zeros_like(const ModelConfig& cfg) {
        OptimState s;
        s.m = Parameters::zeros_like(cfg);
        s.v = Parameters::zeros_like(cfg);
        return s;
    }
};

// One bias-corrected Adam/AdamW update. AdamW applies the decoupled decay
// p *= (1 - lr*wd) on top of the identical moment update. Throws
// DivergenceError naming the offending tensor on non-finite gradients.
void optimizer_step(Parameters& params, const Parameters& grads,
                    OptimState& state, const TrainConfig& cfg);

// Final state of one trained refit plus everything needed to reproduce it.
struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    uint64_t seed = 0;
    int64_t step = 0;
    Parameters params;
    std::vector<double> loss_history;
    bool diverged = false;
};

using ProgressFn = std::function<void(int step, double loss)>;

// Runs max_steps deterministic updates over seeded-shuffled contiguous
// corpus windows. On divergence the last finite parameters are returned with
// the diverged flag set.
Checkpoint train_refit(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const TokenCorpus& corpus,
                       const ProgressFn& progress = nullptr);

}  // namespace seedstab
