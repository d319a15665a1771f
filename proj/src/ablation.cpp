#include "seedstab/ablation.hpp"

namespace seedstab {

std::vector<AblationRecord> ablate_all_heads(const Parameters& params,
                                             const PromptSet& prompts) {
    if (prompts.prompts.empty()) throw UsageError("ablate_all_heads: empty prompt set");
    const ModelConfig& cfg = params.cfg;
    const double baseline =
        perplexity(params, prompts, HeadMask::all_active(cfg));

    const int total = cfg.n_layers * cfg.n_heads;
    std::vector<AblationRecord> records(static_cast<size_t>(total));
#pragma omp parallel for schedule(dynamic)
    for (int idx = 0; idx < total; ++idx) {
        const int l = idx / cfg.n_heads;
        const int h = idx % cfg.n_heads;
        const double ablated =
            perplexity(params, prompts, HeadMask::single_ablated(cfg, l, h));
        records[static_cast<size_t>(idx)] =
            AblationRecord{l, h, baseline, ablated, ablated - baseline};
    }
    return records;
}

std::vector<std::optional<double>> stability_ablation_correlation(
    const std::vector<AblationRecord>& records,
    const std::vector<HeadStability>& stabilities, int n_layers, int n_heads) {
    if (n_heads < 3)
        throw UsageError("stability_ablation_correlation needs >= 3 heads per layer");
    std::vector<double> s_table(static_cast<size_t>(n_layers) * n_heads, 0.0);
    std::vector<uint8_t> have(static_cast<size_t>(n_layers) * n_heads, 0);
    for (const auto& hs : stabilities) {
        const size_t idx = static_cast<size_t>(hs.head.layer) * n_heads +
                           static_cast<size_t>(hs.head.head);
        s_table[idx] = hs.overall;
        have[idx] = 1;
    }
    std::vector<double> d_table(static_cast<size_t>(n_layers) * n_heads, 0.0);
    std::vector<uint8_t> have_d(static_cast<size_t>(n_layers) * n_heads, 0);
    for (const auto& r : records) {
        const size_t idx = static_cast<size_t>(r.layer) * n_heads +
                           static_cast<size_t>(r.head);
        d_table[idx] = r.delta_ppl;
        have_d[idx] = 1;
    }

    std::vector<std::optional<double>> out(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        std::vector<double> xs, ys;
        xs.reserve(static_cast<size_t>(n_heads));
        ys.reserve(static_cast<size_t>(n_heads));
        for (int h = 0; h < n_heads; ++h) {
            const size_t idx = static_cast<size_t>(l) * n_heads + static_cast<size_t>(h);
            if (!have[idx] || !have_d[idx])
                throw UsageError("stability_ablation_correlation: missing head (" +
                                 std::to_string(l) + "," + std::to_string(h) + ")");
            xs.push_back(s_table[idx]);
            ys.push_back(d_table[idx]);
        }
        try {
            out[static_cast<size_t>(l)] = pearson(xs, ys);
        } catch (const DegenerateError&) {
            out[static_cast<size_t>(l)] = std::nullopt;  // reported as missing
        }
    }
    return out;
}

}  // namespace seedstab
