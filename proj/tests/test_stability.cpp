#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "seedstab/stability.hpp"

using namespace seedstab;

namespace {

// Synthetic dump with valid (causal, row-stochastic) random attention.
AttentionDump make_dump(int L, int H, int P, int T, uint64_t seed) {
    AttentionDump d;
    d.n_layers = L;
    d.n_heads = H;
    d.seed = seed;
    d.arch_id = 42;
    d.prompt_set = "synthetic";
    GaussianRng rng(seed);
    for (int p = 0; p < P; ++p) {
        d.prompt_digests.push_back(1000 + static_cast<uint64_t>(p));
        d.seq_lens.push_back(T);
        Tensor scores = Tensor::zeros({L, H, T, T});
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                float* m = scores.ptr() + ((static_cast<int64_t>(l) * H + h) * T * T);
                for (int i = 0; i < T; ++i) {
                    double sum = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        const double v = std::exp(rng.normal());
                        m[static_cast<int64_t>(i) * T + j] = static_cast<float>(v);
                        sum += v;
                    }
                    for (int j = 0; j <= i; ++j)
                        m[static_cast<int64_t>(i) * T + j] =
                            static_cast<float>(m[static_cast<int64_t>(i) * T + j] / sum);
                }
            }
        }
        d.scores.push_back(std::move(scores));
    }
    return d;
}

AttentionDump permute_heads_within_layers(const AttentionDump& src, uint64_t seed) {
    AttentionDump out = src;
    GaussianRng rng(seed);
    const int T_max = 0;
    (void)T_max;
    for (int l = 0; l < src.n_layers; ++l) {
        std::vector<int> perm(static_cast<size_t>(src.n_heads));
        for (int h = 0; h < src.n_heads; ++h) perm[static_cast<size_t>(h)] = h;
        for (int h = src.n_heads; h > 1; --h)
            std::swap(perm[static_cast<size_t>(h - 1)],
                      perm[static_cast<size_t>(rng.engine()() % static_cast<uint64_t>(h))]);
        for (size_t p = 0; p < src.scores.size(); ++p) {
            const int T = src.seq_lens[p];
            for (int h = 0; h < src.n_heads; ++h) {
                const float* from = src.matrix(static_cast<int>(p), l, h);
                float* to = out.scores[p].ptr() +
                            ((static_cast<int64_t>(l) * src.n_heads + perm[static_cast<size_t>(h)]) *
                             static_cast<int64_t>(T) * T);
                std::copy(from, from + static_cast<int64_t>(T) * T, to);
            }
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("stability") {

TEST_CASE("prompt similarity: identity, frozen hand value, orthogonal supports") {
    Tensor a = Tensor::zeros({2, 2});
    a.data = {1.0f, 0.0f, 0.5f, 0.5f};
    CHECK(prompt_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor b = Tensor::zeros({2, 2});
    b.data = {1.0f, 0.0f, 0.0f, 1.0f};
    // dot = 1.5, |a| = sqrt(1.5), |b| = sqrt(2): 1.5/sqrt(3)
    CHECK(prompt_similarity(a, b) ==
          doctest::Approx(1.5 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(prompt_similarity(a, b) == doctest::Approx(0.8660254037844386).epsilon(1e-12));

    Tensor c = Tensor::zeros({2, 2});
    c.data = {0.0f, 1.0f, 0.0f, 0.0f};
    Tensor d = Tensor::zeros({2, 2});
    d.data = {1.0f, 0.0f, 0.0f, 0.0f};
    CHECK(prompt_similarity(c, d) == 0.0);

    Tensor zero = Tensor::zeros({2, 2});
    CHECK(prompt_similarity(zero, zero) == 0.0);  // zero-norm guard

    Tensor wrong = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(prompt_similarity(a, wrong), UsageError);
}

TEST_CASE("head pair similarity averages per-prompt cosines") {
    const AttentionDump a = make_dump(1, 2, 3, 4, 1);
    const AttentionDump b = make_dump(1, 2, 3, 4, 2);
    CHECK(head_pair_similarity(a, a, {0, 0}, {0, 0}) ==
          doctest::Approx(1.0).epsilon(1e-9));

    const double got = head_pair_similarity(a, b, {0, 0}, {0, 1});
    double want = 0.0;
    for (int p = 0; p < 3; ++p)
        want += prompt_similarity(a.matrix(p, 0, 0), b.matrix(p, 0, 1), 16);
    want /= 3.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-15));

    AttentionDump mismatched = b;
    mismatched.prompt_digests[0] = 9999;
    CHECK_THROWS_AS(head_pair_similarity(a, mismatched, {0, 0}, {0, 0}), UsageError);
}

TEST_CASE("self-match stability is exactly 1 with identity best-match") {
    const AttentionDump a = make_dump(2, 3, 3, 5, 3);
    for (int l = 0; l < 2; ++l) {
        for (int h = 0; h < 3; ++h) {
            const HeadStability hs = head_stability(a, {&a}, {l, h}, MatchMode::same_layer);
            CHECK(hs.overall == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(hs.best_match[0] == HeadRef{l, h});
            const HeadStability cross =
                head_stability(a, {&a}, {l, h}, MatchMode::cross_layer);
            CHECK(cross.overall == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(cross.best_match[0] == HeadRef{l, h});
        }
    }
}

TEST_CASE("head permutation within layers changes argmax labels only") {
    const AttentionDump anchor = make_dump(2, 4, 3, 5, 10);
    const AttentionDump pair = make_dump(2, 4, 3, 5, 11);
    const AttentionDump permuted = permute_heads_within_layers(pair, 77);

    for (int l = 0; l < 2; ++l) {
        for (int h = 0; h < 4; ++h) {
            const HeadStability s1 =
                head_stability(anchor, {&pair}, {l, h}, MatchMode::same_layer);
            const HeadStability s2 =
                head_stability(anchor, {&permuted}, {l, h}, MatchMode::same_layer);
            CHECK(s1.overall == s2.overall);  // max is permutation-invariant
        }
    }
}

TEST_CASE("cross-layer stability dominates same-layer stability") {
    const AttentionDump anchor = make_dump(3, 2, 4, 6, 20);
    const AttentionDump p1 = make_dump(3, 2, 4, 6, 21);
    const AttentionDump p2 = make_dump(3, 2, 4, 6, 22);
    const std::vector<const AttentionDump*> pairs{&p1, &p2};
    for (int l = 0; l < 3; ++l) {
        for (int h = 0; h < 2; ++h) {
            const double same =
                head_stability(anchor, pairs, {l, h}, MatchMode::same_layer).overall;
            const double cross =
                head_stability(anchor, pairs, {l, h}, MatchMode::cross_layer).overall;
            CHECK(cross >= same);
            CHECK(same >= 0.0);
            CHECK(cross <= 1.0);
        }
    }
}

TEST_CASE("brute-force enumeration matches bit-for-bit on synthetic dumps") {
    const AttentionDump anchor = make_dump(2, 4, 3, 4, 30);
    const AttentionDump p1 = make_dump(2, 4, 3, 4, 31);
    const AttentionDump p2 = make_dump(2, 4, 3, 4, 32);
    const std::vector<const AttentionDump*> pairs{&p1, &p2};

    for (int l = 0; l < 2; ++l) {
        for (int h = 0; h < 4; ++h) {
            for (const bool cross : {false, true}) {
                const HeadStability got = head_stability(
                    anchor, pairs, {l, h},
                    cross ? MatchMode::cross_layer : MatchMode::same_layer);
                const oracle::BruteHead want =
                    oracle::brute_head_stability(anchor, pairs, l, h, cross);
                CHECK(got.overall == want.overall);
                for (size_t i = 0; i < pairs.size(); ++i) {
                    CHECK(got.per_pair[i] == want.per_pair[i]);
                    CHECK(got.best_match[i].layer == want.best[i].first);
                    CHECK(got.best_match[i].head == want.best[i].second);
                }
            }
        }
    }
}

TEST_CASE("layer profile aggregates, ties break to the shallower layer") {
    std::vector<HeadStability> heads;
    auto push = [&](int l, int h, double s) {
        HeadStability hs;
        hs.head = {l, h};
        hs.overall = s;
        heads.push_back(hs);
    };
    push(0, 0, 1.0);
    push(0, 1, 1.0);
    push(1, 0, 1.0);
    push(1, 1, 1.0);
    LayerStabilityProfile prof = layer_profile(heads, 2, 2);
    CHECK(prof.l_max == 1);
    CHECK(prof.l_min == 1);
    CHECK(prof.delta_s == 0.0);

    heads.clear();
    push(0, 0, 0.9);
    push(0, 1, 0.9);
    push(1, 0, 0.7);
    push(1, 1, 0.7);
    prof = layer_profile(heads, 2, 2);
    CHECK(prof.delta_s == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(prof.l_max == 1);
    CHECK(prof.l_min == 2);
    CHECK(prof.r_lmax == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(prof.r_lmin == doctest::Approx(1.0).epsilon(1e-12));

    // L=8, least-stable layer 5 (1-based) -> r = 0.625
    heads.clear();
    for (int l = 0; l < 8; ++l) push(l, 0, l == 4 ? 0.5 : 0.9);
    prof = layer_profile(heads, 8, 1);
    CHECK(prof.l_min == 5);
    CHECK(prof.r_lmin == doctest::Approx(0.625).epsilon(1e-12));

    heads.pop_back();
    CHECK_THROWS_AS(layer_profile(heads, 8, 1), UsageError);
}

TEST_CASE("alignment map: identity on self-match, rows sum to one") {
    const AttentionDump a = make_dump(3, 2, 3, 4, 40);
    const auto self_heads = all_head_stabilities(a, {&a}, MatchMode::cross_layer);
    const AlignmentMap map = alignment_map(self_heads, 3);
    for (int i = 0; i < 3; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < 3; ++j) {
            row_sum += map.at(i, j);
            CHECK(map.at(i, j) == (i == j ? 1.0 : 0.0));
        }
        CHECK(std::fabs(row_sum - 1.0) < 1e-9);
    }

    // same_layer input is rejected
    const auto same = all_head_stabilities(a, {&a}, MatchMode::same_layer);
    CHECK_THROWS_AS(alignment_map(same, 3), UsageError);
}

TEST_CASE("alignment map counts best-match landings like a hand tally") {
    const AttentionDump anchor = make_dump(2, 2, 3, 4, 50);
    const AttentionDump p1 = make_dump(2, 2, 3, 4, 51);
    const AttentionDump p2 = make_dump(2, 2, 3, 4, 52);
    const std::vector<const AttentionDump*> pairs{&p1, &p2};
    const auto heads = all_head_stabilities(anchor, pairs, MatchMode::cross_layer);
    const AlignmentMap map = alignment_map(heads, 2);

    std::vector<double> tally(4, 0.0);
    for (const auto& hs : heads)
        for (const auto& bm : hs.best_match)
            tally[static_cast<size_t>(hs.head.layer) * 2 + static_cast<size_t>(bm.layer)] += 1.0;
    for (int i = 0; i < 2; ++i) {
        const double row_total = tally[static_cast<size_t>(i) * 2] + tally[static_cast<size_t>(i) * 2 + 1];
        for (int j = 0; j < 2; ++j)
            CHECK(map.at(i, j) == doctest::Approx(tally[static_cast<size_t>(i) * 2 + static_cast<size_t>(j)] / row_total).epsilon(1e-15));
    }
    double row_sum = map.at(0, 0) + map.at(0, 1);
    CHECK(std::fabs(row_sum - 1.0) < 1e-9);
}

TEST_CASE("commonness: identical heads give 1, two-head layer mirrors the pair sim") {
    AttentionDump d = make_dump(1, 3, 2, 4, 60);
    // make all heads identical
    for (size_t p = 0; p < d.scores.size(); ++p) {
        const int T = d.seq_lens[p];
        for (int h = 1; h < 3; ++h) {
            float* dst = d.scores[p].ptr() + static_cast<int64_t>(h) * T * T;
            std::copy(d.scores[p].ptr(), d.scores[p].ptr() + static_cast<int64_t>(T) * T, dst);
        }
    }
    const CommonnessProfile prof = commonness(d, 0);
    for (double c : prof.per_head) CHECK(c == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(prof.layer_mean == doctest::Approx(1.0).epsilon(1e-9));

    const AttentionDump two = make_dump(1, 2, 3, 4, 61);
    const CommonnessProfile p2 = commonness(two, 0);
    const double pair_sim = head_pair_similarity(two, two, {0, 0}, {0, 1});
    CHECK(p2.per_head[0] == doctest::Approx(pair_sim).epsilon(1e-15));
    CHECK(p2.per_head[1] == doctest::Approx(pair_sim).epsilon(1e-15));

    const AttentionDump single = make_dump(1, 1, 2, 3, 62);
    CHECK_THROWS_AS(commonness(single, 0), UsageError);
}

TEST_CASE("four-head commonness equals the brute-force pairwise table mean") {
    const AttentionDump d = make_dump(1, 4, 3, 5, 70);
    const CommonnessProfile prof = commonness(d, 0);
    for (int i = 0; i < 4; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) {
            if (j == i) continue;
            acc += oracle::mean_prompt_sim(d, d, 0, i, 0, j);
        }
        CHECK(prof.per_head[static_cast<size_t>(i)] == doctest::Approx(acc / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("pearson: perfect correlations and error paths") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pearson({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2}), UsageError);
    CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), DegenerateError);

    GaussianRng rng(5);
    std::vector<double> x(10), y(10);
    for (int i = 0; i < 10; ++i) {
        x[static_cast<size_t>(i)] = rng.normal();
        y[static_cast<size_t>(i)] = rng.normal();
    }
    // two-pass covariance definition, 64-bit
    double mx = 0, my = 0;
    for (int i = 0; i < 10; ++i) {
        mx += x[static_cast<size_t>(i)];
        my += y[static_cast<size_t>(i)];
    }
    mx /= 10;
    my /= 10;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < 10; ++i) {
        sxy += (x[static_cast<size_t>(i)] - mx) * (y[static_cast<size_t>(i)] - my);
        sxx += (x[static_cast<size_t>(i)] - mx) * (x[static_cast<size_t>(i)] - mx);
        syy += (y[static_cast<size_t>(i)] - my) * (y[static_cast<size_t>(i)] - my);
    }
    CHECK(pearson(x, y) == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-12));
}

TEST_CASE("prompt length sweep emits one profile per length") {
    const AttentionDump a5 = make_dump(2, 2, 3, 5, 80);
    const AttentionDump a10 = make_dump(2, 2, 3, 10, 81);
    std::map<int, const AttentionDump*> anchors{{5, &a5}, {10, &a10}};
    std::map<int, std::vector<const AttentionDump*>> pairs{{5, {&a5}}, {10, {&a10}}};
    const auto table = prompt_length_sweep(anchors, pairs);
    REQUIRE(table.size() == 2);
    // identical refits -> S_l = 1 for every layer and length
    for (const auto& [len, prof] : table)
        for (double s : prof.layer_stability) CHECK(s == doctest::Approx(1.0).epsilon(1e-9));

    std::map<int, std::vector<const AttentionDump*>> missing{{5, {&a5}}};
    CHECK_THROWS_AS(prompt_length_sweep(anchors, missing), UsageError);
}

TEST_CASE("norm/stability correlation: hand-built anticorrelation and degenerate input") {
    LayerStabilityProfile prof;
    prof.layer_stability = {0.9, 0.8, 0.7};
    const std::vector<double> norms = {1.0, 1.0, 2.0, 2.0, 3.0, 3.0};  // 3 layers x 2 heads
    CHECK(norm_stability_correlation(prof, norms, 3, 2) ==
          doctest::Approx(-1.0).epsilon(1e-12));

    LayerStabilityProfile flat;
    flat.layer_stability = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(norm_stability_correlation(flat, norms, 3, 2), DegenerateError);
    CHECK_THROWS_AS(norm_stability_correlation(prof, norms, 2, 3), UsageError);
}

}  // TEST_SUITE
