#pragma once

#include <map>
#include <optional>
#include <vector>

#include "seedstab/store.hpp"

namespace seedstab {

struct HeadRef {
    int layer = 0;
    int head = 0;

    friend bool operator==(const HeadRef& a, const HeadRef& b) {
        return a.layer == b.layer && a.head == b.head;
    }
    friend bool operator<(const HeadRef& a, const HeadRef& b) {
        return a.layer != b.layer ? a.layer < b.layer : a.head < b.head;
    }
};

enum class MatchMode { same_layer, cross_layer };

// Cosine similarity of two flattened score matrices of identical shape.
double prompt_similarity(const float* a, const float* b, int64_t n);
double prompt_similarity(const Tensor& a, const Tensor& b);

// Mean over prompts of the per-prompt cosine similarity between head
// anchor_head of the anchor dump and head pair_head of the pair dump.
double head_pair_similarity(const AttentionDump& anchor,
                            const AttentionDump& pair, HeadRef anchor_head,
                            HeadRef pair_head);

// Stability of one anchor head against a set of pair refits.
struct HeadStability {
    HeadRef head;
    MatchMode mode = MatchMode::same_layer;
    std::vector<uint64_t> pair_seeds;
    std::vector<double> per_pair;       // best-match similarity per pair refit
    std::vector<HeadRef> best_match;    // argmax per pair refit
    double overall = 0.0;               // mean of per_pair
};

HeadStability head_stability(const AttentionDump& anchor,
                             const std::vector<const AttentionDump*>& pairs,
                             HeadRef head, MatchMode mode);

// All heads of the anchor refit; parallel across heads, deterministic.
std::vector<HeadStability> all_head_stabilities(
    const AttentionDump& anchor, const std::vector<const AttentionDump*>& pairs,
    MatchMode mode);

// Layer aggregation. l_max / l_min are 1-based layer indices as in the
// relative-depth convention r_l = l / L with r in (0, 1].
struct LayerStabilityProfile {
    std::vector<double> layer_stability;  // index 0 = layer 1
    int l_max = 0;
    int l_min = 0;
    double delta_s = 0.0;
    double r_lmax = 0.0;
    double r_lmin = 0.0;
};

LayerStabilityProfile layer_profile(const std::vector<HeadStability>& heads,
                                    int n_layers, int n_heads);

// Row-normalized distribution of best-match layers per anchor layer.
struct AlignmentMap {
    int n_layers = 0;
    std::vector<double> rows;  // row-major [L, L]

    double at(int i, int j) const {
        return rows[static_cast<size_t>(i) * n_layers + static_cast<size_t>(j)];
    }
};

AlignmentMap alignment_map(const std::vector<HeadStability>& heads, int n_layers);

// Within-layer commonness: mean similarity of each head to its same-layer
// peers (self excluded), plus the layer mean.
struct CommonnessProfile {
    int layer = 0;
    std::vector<double> per_head;
    double layer_mean = 0.0;
};

CommonnessProfile commonness(const AttentionDump& dump, int layer);

// Sample Pearson correlation. Throws UsageError for fewer than 3 points and
// DegenerateError for zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// One same-layer profile per sweep prompt-set length.
std::map<int, LayerStabilityProfile> prompt_length_sweep(
    const std::map<int, const AttentionDump*>& anchors_by_length,
    const std::map<int, std::vector<const AttentionDump*>>& pairs_by_length);

// Pearson over layers of (mean per-layer query norm, layer stability).
double norm_stability_correlation(const LayerStabilityProfile& profile,
                                  const std::vector<double>& query_norms_lh,
                                  int n_layers, int n_heads);

}  // namespace seedstab
