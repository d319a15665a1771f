#pragma once

#include <optional>
#include <vector>

#include "seedstab/stability.hpp"

namespace seedstab {

struct AblationRecord {
    int layer = 0;
    int head = 0;
    double ppl_baseline = 0.0;
    double ppl_ablated = 0.0;
    double delta_ppl = 0.0;  // ppl_ablated - ppl_baseline; may be negative
};

// One perplexity run per head with exactly that head's output zeroed; the
// baseline is computed once and shared bit-identically by every record.
std::vector<AblationRecord> ablate_all_heads(const Parameters& params,
                                             const PromptSet& prompts);

// Per layer: Pearson r over heads of (stability, delta perplexity); layers
// with degenerate variance come back as nullopt.
std::vector<std::optional<double>> stability_ablation_correlation(
    const std::vector<AblationRecord>& records,
    const std::vector<HeadStability>& stabilities, int n_layers, int n_heads);

}  // namespace seedstab
