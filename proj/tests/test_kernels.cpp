#include <doctest.h>

#include <omp.h>

#include <vector>

#include "seedstab/common.hpp"
#include "seedstab/kernels.hpp"

using namespace seedstab;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed) {
    GaussianRng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = rng.normal_f32(1.0f);
    return v;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("matmul variants agree bit-exactly with the serial reference") {
    const int M = 33, K = 47, N = 29;
    const auto a = random_vec(static_cast<size_t>(M) * K, 1);
    const auto b_nn = random_vec(static_cast<size_t>(K) * N, 2);
    const auto b_nt = random_vec(static_cast<size_t>(N) * K, 3);
    const auto a_tn = random_vec(static_cast<size_t>(K) * M, 4);

    std::vector<float> out(static_cast<size_t>(M) * N, 0.0f);
    std::vector<float> want(out);

    kern::matmul_nn(a.data(), b_nn.data(), out.data(), M, K, N);
    kern::ref::matmul_nn(a.data(), b_nn.data(), want.data(), M, K, N);
    CHECK(out == want);

    kern::matmul_nt(a.data(), b_nt.data(), out.data(), M, K, N);
    kern::ref::matmul_nt(a.data(), b_nt.data(), want.data(), M, K, N);
    CHECK(out == want);

    kern::matmul_tn(a_tn.data(), b_nn.data(), out.data(), M, K, N);
    kern::ref::matmul_tn(a_tn.data(), b_nn.data(), want.data(), M, K, N);
    CHECK(out == want);
}

TEST_CASE("matmul results do not depend on the thread count") {
    const int M = 64, K = 64, N = 64;  // above the parallel cutoff
    const auto a = random_vec(static_cast<size_t>(M) * K, 7);
    const auto b = random_vec(static_cast<size_t>(K) * N, 8);
    std::vector<float> one(static_cast<size_t>(M) * N), two(one);

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kern::matmul_nn(a.data(), b.data(), one.data(), M, K, N);
    omp_set_num_threads(2);
    kern::matmul_nn(a.data(), b.data(), two.data(), M, K, N);
    omp_set_num_threads(saved);
    CHECK(one == two);
}

TEST_CASE("accumulate flag adds instead of overwriting") {
    const int M = 4, K = 5, N = 3;
    const auto a = random_vec(static_cast<size_t>(M) * K, 11);
    const auto b = random_vec(static_cast<size_t>(K) * N, 12);
    std::vector<float> base(static_cast<size_t>(M) * N, 1.0f);
    std::vector<float> once(static_cast<size_t>(M) * N, 0.0f);
    kern::matmul_nn(a.data(), b.data(), once.data(), M, K, N);
    kern::matmul_nn(a.data(), b.data(), base.data(), M, K, N, /*accumulate=*/true);
    for (size_t i = 0; i < base.size(); ++i)
        CHECK(base[i] == doctest::Approx(1.0f + once[i]).epsilon(1e-6));
}

TEST_CASE("causal softmax rows are stochastic and upper triangle is exact zero") {
    const int T = 9;
    auto scores = random_vec(static_cast<size_t>(T) * T, 21);
    kern::causal_softmax(scores.data(), T);
    for (int i = 0; i < T; ++i) {
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
            const float v = scores[static_cast<size_t>(i) * T + static_cast<size_t>(j)];
            if (j > i) CHECK(v == 0.0f);
            CHECK(v >= 0.0f);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-5);
    }

    auto again = random_vec(static_cast<size_t>(T) * T, 21);
    kern::ref::causal_softmax(again.data(), T);
    CHECK(scores == again);
}

TEST_CASE("layernorm forward matches reference and normalizes rows") {
    const int T = 6, D = 16;
    const auto x = random_vec(static_cast<size_t>(T) * D, 31);
    std::vector<float> w(static_cast<size_t>(D), 1.0f), b(static_cast<size_t>(D), 0.0f);
    std::vector<float> y(static_cast<size_t>(T) * D), yr(y);
    std::vector<float> mean(static_cast<size_t>(T)), rstd(mean), mean_r(mean), rstd_r(mean);

    kern::layernorm_forward(x.data(), w.data(), b.data(), y.data(), mean.data(),
                            rstd.data(), T, D, 1e-5f);
    kern::ref::layernorm_forward(x.data(), w.data(), b.data(), yr.data(),
                                 mean_r.data(), rstd_r.data(), T, D, 1e-5f);
    CHECK(y == yr);

    for (int t = 0; t < T; ++t) {
        double s = 0.0;
        for (int d = 0; d < D; ++d) s += y[static_cast<size_t>(t) * D + static_cast<size_t>(d)];
        CHECK(std::fabs(s) < 1e-3);
    }
}

TEST_CASE("gelu derivative matches finite differences") {
    const float xs[] = {-3.0f, -1.0f, -0.1f, 0.0f, 0.2f, 1.5f, 4.0f};
    for (const float x : xs) {
        float up = 0.0f, down = 0.0f;
        const float eps = 1e-3f;
        float xp = x + eps, xm = x - eps;
        kern::gelu_forward(&xp, &up, 1);
        kern::gelu_forward(&xm, &down, 1);
        const double numeric = (static_cast<double>(up) - down) / (2.0 * eps);
        float dy = 1.0f, dx = 0.0f;
        kern::gelu_backward(&x, &dy, &dx, 1);
        CHECK(dx == doctest::Approx(numeric).epsilon(1e-3));
    }
}

}  // TEST_SUITE
