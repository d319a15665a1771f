#include <doctest.h>

#include <cmath>

#include "seedstab/metasne.hpp"

using namespace seedstab;

namespace {

HeadSignatureDump make_sig_dump(int L, int H, int P, int dh, uint64_t seed) {
    HeadSignatureDump d;
    d.n_layers = L;
    d.n_heads = H;
    d.d_head = dh;
    d.seed = seed;
    d.arch_id = 7;
    d.prompt_set = "sig";
    for (int p = 0; p < P; ++p) d.prompt_digests.push_back(static_cast<uint64_t>(p));
    d.signatures = Tensor::zeros({L, H, P, dh});
    GaussianRng rng(seed);
    for (float& v : d.signatures.data) v = rng.normal_f32(1.0f);
    return d;
}

std::vector<std::vector<double>> gaussian_features(int n, int dim, uint64_t seed) {
    GaussianRng rng(seed);
    std::vector<std::vector<double>> f(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(dim)));
    for (auto& row : f)
        for (double& v : row) v = rng.normal();
    return f;
}

}  // namespace

TEST_SUITE("metasne") {

TEST_CASE("distance matrix: zeros for identical signatures, 3-4-5 triangle") {
    HeadSignatureDump d = make_sig_dump(1, 1, 3, 2, 1);
    std::fill(d.signatures.data.begin(), d.signatures.data.end(), 0.25f);
    const HeadGeometry geom = head_distance_matrix(d, 0, 0);
    for (double v : geom.d) CHECK(v == 0.0);

    HeadSignatureDump e = make_sig_dump(1, 1, 2, 2, 2);
    e.signatures.data = {0.0f, 0.0f, 3.0f, 4.0f};
    const HeadGeometry g2 = head_distance_matrix(e, 0, 0);
    CHECK(g2.d[1] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(g2.d[2] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(g2.d[0] == 0.0);
    CHECK(g2.d[3] == 0.0);
}

TEST_CASE("distance matrix matches elementwise recomputation on 4 prompts") {
    const HeadSignatureDump d = make_sig_dump(2, 2, 4, 3, 3);
    const HeadGeometry geom = head_distance_matrix(d, 1, 0);
    CHECK(geom.relative_depth == doctest::Approx(1.0).epsilon(1e-12));
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            double ss = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff =
                    static_cast<double>(d.signature(1, 0, a)[k]) - d.signature(1, 0, b)[k];
                ss += diff * diff;
            }
            CHECK(geom.d[static_cast<size_t>(a) * 4 + static_cast<size_t>(b)] ==
                  doctest::Approx(std::sqrt(ss)).epsilon(1e-12));
        }
    }
}

TEST_CASE("meta feature is the upper triangle and is isometry-invariant") {
    HeadGeometry geom;
    geom.n = 3;
    geom.d = {0, 1, 2, 1, 0, 3, 2, 3, 0};
    const auto f = meta_feature(geom);
    REQUIRE(f.size() == 3);
    CHECK(f == std::vector<double>{1, 2, 3});

    // Rotating the signature cloud leaves distances, hence features, identical.
    HeadSignatureDump d = make_sig_dump(1, 1, 5, 2, 4);
    HeadSignatureDump rotated = d;
    const float c = std::cos(0.7f), s = std::sin(0.7f);
    for (int p = 0; p < 5; ++p) {
        float* row = rotated.signatures.ptr() + static_cast<int64_t>(p) * 2;
        const float x = row[0], y = row[1];
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
    const auto f1 = meta_feature(head_distance_matrix(d, 0, 0));
    const auto f2 = meta_feature(head_distance_matrix(rotated, 0, 0));
    for (size_t i = 0; i < f1.size(); ++i) CHECK(std::fabs(f1[i] - f2[i]) < 1e-6);
}

TEST_CASE("P matrix rows hit the target perplexity within the entropy tolerance") {
    const auto features = gaussian_features(24, 6, 5);
    const int n = 24;
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            double d2 = 0.0;
            for (int k = 0; k < 6; ++k) {
                const double diff = features[static_cast<size_t>(a)][static_cast<size_t>(k)] -
                                    features[static_cast<size_t>(b)][static_cast<size_t>(k)];
                d2 += diff * diff;
            }
            sq[static_cast<size_t>(a) * n + static_cast<size_t>(b)] = d2;
        }
    const double perplexity = 6.0;
    const PMatrix pm = perplexity_calibrated_p(sq, n, perplexity);
    const double target = std::log(perplexity);
    for (int i = 0; i < n; ++i)
        CHECK(std::fabs(pm.row_entropy[static_cast<size_t>(i)] - target) < 1e-5);

    // P is a valid distribution after symmetrization.
    double total = 0.0;
    for (double v : pm.p) total += v;
    CHECK(std::fabs(total - 1.0) < 1e-9);
}

TEST_CASE("tsne output is finite, deterministic, and KL decreases after exaggeration") {
    const auto features = gaussian_features(30, 8, 6);
    const Embedding2D a = tsne(features, 5.0, 1000, 11);
    const Embedding2D b = tsne(features, 5.0, 1000, 11);
    REQUIRE(a.points.size() == 30);
    for (const auto& pt : a.points) {
        CHECK(std::isfinite(pt[0]));
        CHECK(std::isfinite(pt[1]));
    }
    CHECK(a.points == b.points);
    CHECK(a.kl_final < a.kl_at_50);
    CHECK(a.kl_final <= a.kl_after_exaggeration);
    CHECK(a.kl_final > 0.0);
}

TEST_CASE("precondition checks: point count and perplexity bound") {
    const auto features = gaussian_features(10, 4, 7);
    CHECK_THROWS_AS(tsne({features[0], features[1], features[2]}, 1.0, 100, 1),
                    UsageError);
    CHECK_THROWS_AS(tsne(features, 3.0, 100, 1), UsageError);  // 3 >= (10-1)/3
}

TEST_CASE("duplicate inputs embed closer than any third point in >=95% of seeds") {
    auto features = gaussian_features(20, 5, 8);
    features[7] = features[3];  // exact duplicate pair

    int successes = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        const Embedding2D emb = tsne(features, 4.0, 1000, 100 + static_cast<uint64_t>(t));
        const auto& p3 = emb.points[3];
        const auto& p7 = emb.points[7];
        const double pair_d = std::hypot(p3[0] - p7[0], p3[1] - p7[1]);
        double min_other = 1e300;
        for (size_t i = 0; i < emb.points.size(); ++i) {
            if (i == 3 || i == 7) continue;
            min_other = std::min(min_other,
                                 std::hypot(p3[0] - emb.points[i][0], p3[1] - emb.points[i][1]));
            min_other = std::min(min_other,
                                 std::hypot(p7[0] - emb.points[i][0], p7[1] - emb.points[i][1]));
        }
        if (pair_d < min_other) ++successes;
    }
    CHECK(successes >= 19);  // 95% of 20
}

}  // TEST_SUITE
