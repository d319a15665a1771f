#include "seedstab/stability.hpp"

#include <algorithm>
#include <cmath>

namespace seedstab {

double prompt_similarity(const float* a, const float* b, int64_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double x = a[i];
        const double y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

double prompt_similarity(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw UsageError("prompt_similarity: shape mismatch");
    return prompt_similarity(a.ptr(), b.ptr(), a.numel());
}

namespace {

void check_prompt_coverage(const AttentionDump& anchor, const AttentionDump& pair) {
    if (anchor.prompt_digests != pair.prompt_digests ||
        anchor.seq_lens != pair.seq_lens)
        throw UsageError("attention dumps do not cover the same prompt set");
}

}  // namespace

double head_pair_similarity(const AttentionDump& anchor,
                            const AttentionDump& pair, HeadRef anchor_head,
                            HeadRef pair_head) {
    check_prompt_coverage(anchor, pair);
    const size_t P = anchor.prompt_digests.size();
    double acc = 0.0;
    for (size_t p = 0; p < P; ++p) {
        const int T = anchor.seq_lens[p];
        acc += prompt_similarity(
            anchor.matrix(static_cast<int>(p), anchor_head.layer, anchor_head.head),
            pair.matrix(static_cast<int>(p), pair_head.layer, pair_head.head),
            static_cast<int64_t>(T) * T);
    }
    return acc / static_cast<double>(P);
}

HeadStability head_stability(const AttentionDump& anchor,
                             const std::vector<const AttentionDump*>& pairs,
                             HeadRef head, MatchMode mode) {
    if (pairs.empty()) throw UsageError("head_stability: no pair refits");
    if (head.layer < 0 || head.layer >= anchor.n_layers || head.head < 0 ||
        head.head >= anchor.n_heads)
        throw UsageError("head_stability: head index out of range");

    HeadStability result;
    result.head = head;
    result.mode = mode;
    double total = 0.0;
    for (const AttentionDump* pair : pairs) {
        if (mode == MatchMode::same_layer && pair->n_layers <= head.layer)
            throw UsageError("head_stability: pair refit lacks anchor layer");
        if (pair->n_heads <= 0 || pair->n_layers <= 0)
            throw UsageError("head_stability: empty candidate set");

        const int layer_begin = mode == MatchMode::same_layer ? head.layer : 0;
        const int layer_end =
            mode == MatchMode::same_layer ? head.layer + 1 : pair->n_layers;
        double best = 0.0;
        HeadRef best_ref{layer_begin, 0};
        bool first = true;
        for (int l = layer_begin; l < layer_end; ++l) {
            for (int h = 0; h < pair->n_heads; ++h) {
                const double s = head_pair_similarity(anchor, *pair, head, {l, h});
                // Ties break toward the lowest (layer, head) index; the scan
                // order makes strict > sufficient.
                if (first || s > best) {
                    best = s;
                    best_ref = {l, h};
                    first = false;
                }
            }
        }
        result.pair_seeds.push_back(pair->seed);
        result.per_pair.push_back(best);
        result.best_match.push_back(best_ref);
        total += best;
    }
    result.overall = total / static_cast<double>(result.per_pair.size());
    return result;
}

std::vector<HeadStability> all_head_stabilities(
    const AttentionDump& anchor, const std::vector<const AttentionDump*>& pairs,
    MatchMode mode) {
    const int L = anchor.n_layers, H = anchor.n_heads;
    std::vector<HeadStability> out(static_cast<size_t>(L) * H);
#pragma omp parallel for schedule(dynamic)
    for (int idx = 0; idx < L * H; ++idx) {
        const HeadRef head{idx / H, idx % H};
        out[static_cast<size_t>(idx)] = head_stability(anchor, pairs, head, mode);
    }
    return out;
}

LayerStabilityProfile layer_profile(const std::vector<HeadStability>& heads,
                                    int n_layers, int n_heads) {
    if (n_layers <= 0 || n_heads <= 0)
        throw UsageError("layer_profile: invalid dimensions");
    std::vector<int> counts(static_cast<size_t>(n_layers), 0);
    std::vector<double> sums(static_cast<size_t>(n_layers), 0.0);
    std::vector<uint8_t> seen(static_cast<size_t>(n_layers) * n_heads, 0);
    for (const auto& hs : heads) {
        if (hs.head.layer < 0 || hs.head.layer >= n_layers || hs.head.head < 0 ||
            hs.head.head >= n_heads)
            throw UsageError("layer_profile: head index out of range");
        uint8_t& flag = seen[static_cast<size_t>(hs.head.layer) * n_heads +
                             static_cast<size_t>(hs.head.head)];
        if (flag) throw UsageError("layer_profile: duplicate head entry");
        flag = 1;
        sums[static_cast<size_t>(hs.head.layer)] += hs.overall;
        counts[static_cast<size_t>(hs.head.layer)] += 1;
    }
    for (int l = 0; l < n_layers; ++l) {
        if (counts[static_cast<size_t>(l)] != n_heads)
            throw UsageError("layer_profile: missing heads in layer " +
                             std::to_string(l));
    }

    LayerStabilityProfile prof;
    prof.layer_stability.resize(static_cast<size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l)
        prof.layer_stability[static_cast<size_t>(l)] =
            sums[static_cast<size_t>(l)] / static_cast<double>(n_heads);

    int arg_max = 0, arg_min = 0;
    for (int l = 1; l < n_layers; ++l) {
        if (prof.layer_stability[static_cast<size_t>(l)] >
            prof.layer_stability[static_cast<size_t>(arg_max)])
            arg_max = l;
        if (prof.layer_stability[static_cast<size_t>(l)] <
            prof.layer_stability[static_cast<size_t>(arg_min)])
            arg_min = l;
    }
    prof.l_max = arg_max + 1;
    prof.l_min = arg_min + 1;
    prof.delta_s = prof.layer_stability[static_cast<size_t>(arg_max)] -
                   prof.layer_stability[static_cast<size_t>(arg_min)];
    prof.r_lmax = static_cast<double>(prof.l_max) / static_cast<double>(n_layers);
    prof.r_lmin = static_cast<double>(prof.l_min) / static_cast<double>(n_layers);
    return prof;
}

AlignmentMap alignment_map(const std::vector<HeadStability>& heads, int n_layers) {
    if (heads.empty()) throw UsageError("alignment_map: no head stabilities");
    AlignmentMap map;
    map.n_layers = n_layers;
    map.rows.assign(static_cast<size_t>(n_layers) * n_layers, 0.0);
    std::vector<int64_t> row_counts(static_cast<size_t>(n_layers), 0);
    for (const auto& hs : heads) {
        if (hs.mode != MatchMode::cross_layer)
            throw UsageError("alignment_map requires cross_layer head stabilities");
        for (const auto& bm : hs.best_match) {
            if (bm.layer < 0 || bm.layer >= n_layers)
                throw UsageError("alignment_map: best-match layer out of range");
            map.rows[static_cast<size_t>(hs.head.layer) * n_layers +
                     static_cast<size_t>(bm.layer)] += 1.0;
            row_counts[static_cast<size_t>(hs.head.layer)] += 1;
        }
    }
    for (int i = 0; i < n_layers; ++i) {
        if (row_counts[static_cast<size_t>(i)] == 0)
            throw UsageError("alignment_map: layer " + std::to_string(i) +
                             " has no best-match entries");
        const double inv = 1.0 / static_cast<double>(row_counts[static_cast<size_t>(i)]);
        for (int j = 0; j < n_layers; ++j)
            map.rows[static_cast<size_t>(i) * n_layers + static_cast<size_t>(j)] *= inv;
    }
    return map;
}

CommonnessProfile commonness(const AttentionDump& dump, int layer) {
    if (layer < 0 || layer >= dump.n_layers)
        throw UsageError("commonness: layer out of range");
    const int H = dump.n_heads;
    if (H < 2)
        throw UsageError("commonness requires at least 2 heads in the layer");

    CommonnessProfile prof;
    prof.layer = layer;
    prof.per_head.resize(static_cast<size_t>(H));
    // Pairwise prompt-averaged similarities; self excluded, divide by H-1.
    std::vector<double> pairwise(static_cast<size_t>(H) * H, 0.0);
    for (int i = 0; i < H; ++i) {
        for (int j = i + 1; j < H; ++j) {
            const double s =
                head_pair_similarity(dump, dump, {layer, i}, {layer, j});
            pairwise[static_cast<size_t>(i) * H + static_cast<size_t>(j)] = s;
            pairwise[static_cast<size_t>(j) * H + static_cast<size_t>(i)] = s;
        }
    }
    double layer_sum = 0.0;
    for (int i = 0; i < H; ++i) {
        double acc = 0.0;
        for (int j = 0; j < H; ++j) {
            if (j != i) acc += pairwise[static_cast<size_t>(i) * H + static_cast<size_t>(j)];
        }
        prof.per_head[static_cast<size_t>(i)] = acc / static_cast<double>(H - 1);
        layer_sum += prof.per_head[static_cast<size_t>(i)];
    }
    prof.layer_mean = layer_sum / static_cast<double>(H);
    return prof;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size())
        throw UsageError("pearson: size mismatch");
    const size_t n = x.size();
    if (n < 3) throw UsageError("pearson requires at least 3 points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateError("pearson: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

std::map<int, LayerStabilityProfile> prompt_length_sweep(
    const std::map<int, const AttentionDump*>& anchors_by_length,
    const std::map<int, std::vector<const AttentionDump*>>& pairs_by_length) {
    std::map<int, LayerStabilityProfile> out;
    for (const auto& [length, anchor] : anchors_by_length) {
        auto it = pairs_by_length.find(length);
        if (it == pairs_by_length.end() || it->second.empty())
            throw UsageError("prompt_length_sweep: missing pair dumps for length " +
                             std::to_string(length));
        const auto heads =
            all_head_stabilities(*anchor, it->second, MatchMode::same_layer);
        out[length] = layer_profile(heads, anchor->n_layers, anchor->n_heads);
    }
    return out;
}

double norm_stability_correlation(const LayerStabilityProfile& profile,
                                  const std::vector<double>& query_norms_lh,
                                  int n_layers, int n_heads) {
    if (n_layers < 3)
        throw UsageError("norm_stability_correlation requires at least 3 layers");
    if (query_norms_lh.size() != static_cast<size_t>(n_layers) * n_heads)
        throw UsageError("norm_stability_correlation: norm table shape mismatch");
    std::vector<double> mean_norm(static_cast<size_t>(n_layers), 0.0);
    for (int l = 0; l < n_layers; ++l) {
        double acc = 0.0;
        for (int h = 0; h < n_heads; ++h)
            acc += query_norms_lh[static_cast<size_t>(l) * n_heads + static_cast<size_t>(h)];
        mean_norm[static_cast<size_t>(l)] = acc / static_cast<double>(n_heads);
    }
    return pearson(mean_norm, profile.layer_stability);
}

}  // namespace seedstab
