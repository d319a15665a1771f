#include <doctest.h>

#include <cmath>

#include "seedstab/ablation.hpp"

using namespace seedstab;

namespace {

ModelConfig small_cfg(uint64_t seed) {
    return ModelConfig::make(2, 3, 12, 48, false, 64, 257, seed);
}

PromptSet small_prompts() {
    PromptSet p;
    p.name = "ablate";
    p.prompts = {"the cat sat", "on a mat", "dogs run far"};
    return p;
}

}  // namespace

TEST_SUITE("ablation") {

TEST_CASE("record count and baseline consistency") {
    const Parameters params = init_params(small_cfg(1));
    const auto records = ablate_all_heads(params, small_prompts());
    CHECK(records.size() == 6);  // 2 layers x 3 heads
    for (const auto& r : records) {
        CHECK(r.ppl_baseline == records.front().ppl_baseline);  // bit-equal
        CHECK(r.delta_ppl == r.ppl_ablated - r.ppl_baseline);
    }
}

TEST_CASE("a head with zeroed value and output paths has zero delta ppl") {
    Parameters params = init_params(small_cfg(2));
    const int l = 1, h = 2;
    const ModelConfig& cfg = params.cfg;
    auto zero_head = [&](Tensor& t) {
        float* base = t.ptr() + static_cast<int64_t>(h) * cfg.d_head * cfg.d_model;
        std::fill(base, base + static_cast<int64_t>(cfg.d_head) * cfg.d_model, 0.0f);
    };
    zero_head(params.layers[l].w_v);
    zero_head(params.layers[l].w_o);
    // biases of that head's value path as well
    float* bv = params.layers[l].b_v.ptr() + static_cast<int64_t>(h) * cfg.d_head;
    std::fill(bv, bv + cfg.d_head, 0.0f);

    const auto records = ablate_all_heads(params, small_prompts());
    for (const auto& r : records) {
        if (r.layer == l && r.head == h) CHECK(std::fabs(r.delta_ppl) < 1e-6);
    }
}

TEST_CASE("delta ppl equals an explicit two-run difference") {
    const Parameters params = init_params(small_cfg(3));
    const PromptSet prompts = small_prompts();
    const auto records = ablate_all_heads(params, prompts);

    const double baseline = perplexity(params, prompts, HeadMask::all_active(params.cfg));
    const double ablated =
        perplexity(params, prompts, HeadMask::single_ablated(params.cfg, 0, 0));
    for (const auto& r : records) {
        if (r.layer == 0 && r.head == 0) {
            CHECK(r.ppl_baseline == baseline);
            CHECK(r.ppl_ablated == ablated);
            CHECK(r.delta_ppl == ablated - baseline);
        }
    }
}

TEST_CASE("mask locality: layers before the ablated one are bit-identical") {
    const Parameters params = init_params(small_cfg(4));
    const auto tokens = tokenize_prompt(params.cfg, "locality probe");
    const ForwardTrace base = forward(params, tokens);
    const ForwardTrace ablated =
        forward(params, tokens, HeadMask::single_ablated(params.cfg, 1, 0));
    CHECK(base.attention[0].data == ablated.attention[0].data);
    CHECK(base.head_outputs[0].data == ablated.head_outputs[0].data);
    // The ablated layer's attention scores are also unchanged (only the
    // output is zeroed), but downstream logits differ.
    CHECK(base.attention[1].data == ablated.attention[1].data);
    CHECK(base.logits.data != ablated.logits.data);
}

TEST_CASE("per-layer correlation: synthetic layers, degenerate reported missing") {
    std::vector<AblationRecord> records;
    std::vector<HeadStability> stabilities;
    auto add = [&](int l, int h, double s, double dppl) {
        AblationRecord r;
        r.layer = l;
        r.head = h;
        r.ppl_baseline = 10.0;
        r.ppl_ablated = 10.0 + dppl;
        r.delta_ppl = dppl;
        records.push_back(r);
        HeadStability hs;
        hs.head = {l, h};
        hs.overall = s;
        stabilities.push_back(hs);
    };
    // layer 0: perfect anticorrelation; layer 1: constant delta (degenerate)
    add(0, 0, 0.9, 1.0);
    add(0, 1, 0.8, 2.0);
    add(0, 2, 0.7, 3.0);
    add(1, 0, 0.9, 5.0);
    add(1, 1, 0.5, 5.0);
    add(1, 2, 0.1, 5.0);

    const auto corr = stability_ablation_correlation(records, stabilities, 2, 3);
    REQUIRE(corr.size() == 2);
    REQUIRE(corr[0].has_value());
    CHECK(*corr[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(!corr[1].has_value());

    records.pop_back();
    CHECK_THROWS_AS(stability_ablation_correlation(records, stabilities, 2, 3),
                    UsageError);
}

}  // TEST_SUITE
