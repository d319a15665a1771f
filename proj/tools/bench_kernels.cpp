// Compares the OpenMP kernels against their serial reference implementations
// and reports throughput plus a max-abs agreement check.

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "seedstab/common.hpp"
#include "seedstab/kernels.hpp"

using namespace seedstab;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed) {
    GaussianRng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = rng.normal_f32(1.0f);
    return v;
}

double time_it(const std::function<void()>& fn, int reps) {
    fn();  // warmup
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

void bench_matmul(int M, int K, int N, int reps) {
    const auto a = random_vec(static_cast<size_t>(M) * K, 1);
    const auto b = random_vec(static_cast<size_t>(K) * N, 2);
    std::vector<float> out_par(static_cast<size_t>(M) * N);
    std::vector<float> out_ref(out_par);

    const double serial = time_it(
        [&] { kern::ref::matmul_nn(a.data(), b.data(), out_ref.data(), M, K, N); },
        reps);
    const double parallel = time_it(
        [&] { kern::matmul_nn(a.data(), b.data(), out_par.data(), M, K, N); }, reps);
    const double flops = 2.0 * M * K * N;
    std::printf("matmul_nn %4dx%4dx%4d  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  speedup %.2fx  maxdiff %.3g\n",
                M, K, N, serial * 1e3, flops / serial / 1e9, parallel * 1e3,
                flops / parallel / 1e9, serial / parallel,
                max_abs_diff(out_par, out_ref));
}

void bench_softmax(int T, int reps) {
    auto base = random_vec(static_cast<size_t>(T) * T, 3);
    auto par = base;
    auto ref = base;
    const double serial = time_it(
        [&] {
            ref = base;
            kern::ref::causal_softmax(ref.data(), T);
        },
        reps);
    const double parallel = time_it(
        [&] {
            par = base;
            kern::causal_softmax(par.data(), T);
        },
        reps);
    std::printf("causal_softmax T=%5d       serial %8.3f ms              omp %8.3f ms              speedup %.2fx  maxdiff %.3g\n",
                T, serial * 1e3, parallel * 1e3, serial / parallel,
                max_abs_diff(par, ref));
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    if (argc > 1) reps = std::atoi(argv[1]);
    std::printf("threads: %d\n", omp_get_max_threads());

    bench_matmul(128, 32, 257, reps * 4);    // unembedding at desk scale
    bench_matmul(256, 256, 256, reps);
    bench_matmul(512, 512, 512, reps);
    bench_matmul(1024, 1024, 1024, std::max(1, reps / 2));
    bench_softmax(512, reps);
    bench_softmax(2048, std::max(1, reps / 2));
    return 0;
}
