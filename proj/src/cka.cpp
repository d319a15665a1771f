#include "seedstab/cka.hpp"

#include <algorithm>
#include <cmath>

namespace seedstab {

ResidualPointCloud residual_point_cloud(const ResidualDump& dump, int layer) {
    if (layer < 0 || layer >= dump.n_layers)
        throw UsageError("residual_point_cloud: layer out of range");
    ResidualPointCloud cloud;
    cloud.n_rows = static_cast<int>(dump.resid.size());
    cloud.dim = dump.d_model;
    cloud.x.assign(static_cast<size_t>(cloud.n_rows) * cloud.dim, 0.0);
    for (int p = 0; p < cloud.n_rows; ++p) {
        const int T = dump.seq_lens[static_cast<size_t>(p)];
        const float* base = dump.resid[static_cast<size_t>(p)].ptr() +
                            static_cast<int64_t>(layer) * T * dump.d_model;
        double* row = cloud.x.data() + static_cast<size_t>(p) * cloud.dim;
        for (int t = 0; t < T; ++t) {
            const float* vec = base + static_cast<int64_t>(t) * dump.d_model;
            for (int d = 0; d < dump.d_model; ++d) row[d] += vec[d];
        }
        const double inv = 1.0 / static_cast<double>(T);
        for (int d = 0; d < dump.d_model; ++d) row[d] *= inv;
    }
    return cloud;
}

GramMatrix rbf_gram(const ResidualPointCloud& cloud, double threshold) {
    const int n = cloud.n_rows;
    if (n < 2) throw UsageError("rbf_gram requires at least 2 rows");
    if (!(threshold > 0.0)) throw UsageError("rbf_gram threshold must be positive");

    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> offdiag;
    offdiag.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            const double* xa = cloud.x.data() + static_cast<size_t>(a) * cloud.dim;
            const double* xb = cloud.x.data() + static_cast<size_t>(b) * cloud.dim;
            double d2 = 0.0;
            for (int d = 0; d < cloud.dim; ++d) {
                const double diff = xa[d] - xb[d];
                d2 += diff * diff;
            }
            sq[static_cast<size_t>(a) * n + static_cast<size_t>(b)] = d2;
            sq[static_cast<size_t>(b) * n + static_cast<size_t>(a)] = d2;
            offdiag.push_back(std::sqrt(d2));
        }
    }
    std::sort(offdiag.begin(), offdiag.end());
    const size_t m = offdiag.size();
    const double median = m % 2 == 1
                              ? offdiag[m / 2]
                              : 0.5 * (offdiag[m / 2 - 1] + offdiag[m / 2]);
    if (median == 0.0)
        throw DegenerateError("rbf_gram: zero median pairwise distance");

    GramMatrix gram;
    gram.n = n;
    gram.threshold = threshold;
    gram.sigma = threshold * median;
    gram.k.assign(static_cast<size_t>(n) * n, 1.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * gram.sigma * gram.sigma);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            if (a == b) continue;
            gram.k[static_cast<size_t>(a) * n + static_cast<size_t>(b)] =
                std::exp(-sq[static_cast<size_t>(a) * n + static_cast<size_t>(b)] *
                         inv_two_sigma2);
        }
    }
    return gram;
}

namespace {

// Sum with the addends sorted first. All CKA reductions go through this so
// that permuting the prompt order permutes addends only: the sorted sum, and
// with it the final CKA value, stays bit-identical.
double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

// Double-centered copy: Kc = H K H with H = I - 11^T/n.
std::vector<double> center(const GramMatrix& g) {
    const int n = g.n;
    std::vector<double> row_mean(static_cast<size_t>(n), 0.0);
    std::vector<double> row_buf(static_cast<size_t>(n), 0.0);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) row_buf[static_cast<size_t>(b)] = g.at(a, b);
        row_mean[static_cast<size_t>(a)] = sorted_sum(row_buf) / static_cast<double>(n);
    }
    const double total = sorted_sum(row_mean) / static_cast<double>(n);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            out[static_cast<size_t>(a) * n + static_cast<size_t>(b)] =
                g.at(a, b) - row_mean[static_cast<size_t>(a)] -
                row_mean[static_cast<size_t>(b)] + total;
        }
    }
    return out;
}

double frobenius_inner(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> products(a.size());
    for (size_t i = 0; i < a.size(); ++i) products[i] = a[i] * b[i];
    return sorted_sum(std::move(products));
}

}  // namespace

double cka(const GramMatrix& k1, const GramMatrix& k2) {
    if (k1.n != k2.n) throw UsageError("cka: gram matrices differ in size");
    const auto c1 = center(k1);
    const auto c2 = center(k2);
    const double hsic12 = frobenius_inner(c1, c2);
    const double hsic11 = frobenius_inner(c1, c1);
    const double hsic22 = frobenius_inner(c2, c2);
    if (hsic11 <= 0.0 || hsic22 <= 0.0)
        throw DegenerateError("cka: zero self-HSIC");
    return hsic12 / std::sqrt(hsic11 * hsic22);
}

std::vector<double> residual_stability(const ResidualDump& anchor,
                                       const std::vector<const ResidualDump*>& pairs,
                                       double threshold) {
    if (pairs.empty()) throw UsageError("residual_stability: no pair refits");
    for (const ResidualDump* p : pairs) {
        if (p->n_layers != anchor.n_layers)
            throw UsageError("residual_stability: layer count mismatch");
        if (p->prompt_digests != anchor.prompt_digests)
            throw UsageError("residual_stability: prompt set mismatch");
    }
    std::vector<double> out(static_cast<size_t>(anchor.n_layers), 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int l = 0; l < anchor.n_layers; ++l) {
        const GramMatrix anchor_gram =
            rbf_gram(residual_point_cloud(anchor, l), threshold);
        double acc = 0.0;
        for (const ResidualDump* p : pairs) {
            const GramMatrix pair_gram =
                rbf_gram(residual_point_cloud(*p, l), threshold);
            acc += cka(anchor_gram, pair_gram);
        }
        out[static_cast<size_t>(l)] = acc / static_cast<double>(pairs.size());
    }
    return out;
}

}  // namespace seedstab
