#include "seedstab/metasne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace seedstab {

HeadGeometry head_distance_matrix(const HeadSignatureDump& dump, int layer,
                                  int head) {
    if (layer < 0 || layer >= dump.n_layers || head < 0 || head >= dump.n_heads)
        throw UsageError("head_distance_matrix: head index out of range");
    const int P = static_cast<int>(dump.prompt_digests.size());
    if (P == 0) throw UsageError("head_distance_matrix: no prompts in dump");

    HeadGeometry geom;
    geom.layer = layer;
    geom.head = head;
    geom.relative_depth =
        static_cast<double>(layer + 1) / static_cast<double>(dump.n_layers);
    geom.n = P;
    geom.d.assign(static_cast<size_t>(P) * P, 0.0);
    for (int a = 0; a < P; ++a) {
        const float* xa = dump.signature(layer, head, a);
        for (int b = a + 1; b < P; ++b) {
            const float* xb = dump.signature(layer, head, b);
            double d2 = 0.0;
            for (int k = 0; k < dump.d_head; ++k) {
                const double diff = static_cast<double>(xa[k]) - xb[k];
                d2 += diff * diff;
            }
            const double dist = std::sqrt(d2);
            geom.d[static_cast<size_t>(a) * P + static_cast<size_t>(b)] = dist;
            geom.d[static_cast<size_t>(b) * P + static_cast<size_t>(a)] = dist;
        }
    }
    return geom;
}

std::vector<double> meta_feature(const HeadGeometry& geom) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(geom.n) * (geom.n - 1) / 2);
    for (int a = 0; a < geom.n; ++a) {
        for (int b = a + 1; b < geom.n; ++b)
            out.push_back(geom.d[static_cast<size_t>(a) * geom.n + static_cast<size_t>(b)]);
    }
    return out;
}

namespace {

// Shannon entropy (nats) and probabilities of row i's conditional Gaussian at
// precision beta. Returns the entropy; fills probs when non-null.
double row_entropy_at(const std::vector<double>& sq, int n, int i, double beta,
                      double* probs) {
    const double* row = sq.data() + static_cast<size_t>(i) * n;
    double sum = 0.0;
    double weighted = 0.0;
    for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double p = std::exp(-beta * row[j]);
        sum += p;
        weighted += beta * row[j] * p;
    }
    if (sum <= 0.0) return 0.0;
    const double entropy = std::log(sum) + weighted / sum;
    if (probs) {
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j)
            probs[j] = (j == i) ? 0.0 : std::exp(-beta * row[j]) * inv;
    }
    return entropy;
}

}  // namespace

PMatrix perplexity_calibrated_p(const std::vector<double>& sq_dists, int n,
                                double perplexity) {
    if (n < 2) throw UsageError("perplexity_calibrated_p: need at least 2 points");
    if (!(perplexity > 0.0)) throw UsageError("perplexity must be positive");
    const double target_entropy = std::log(perplexity);
    constexpr double kTol = 1e-5;
    constexpr int kMaxBisect = 200;

    PMatrix result;
    result.n = n;
    result.p.assign(static_cast<size_t>(n) * n, 0.0);
    result.betas.assign(static_cast<size_t>(n), 0.0);
    result.row_entropy.assign(static_cast<size_t>(n), 0.0);

    std::vector<double> cond(static_cast<size_t>(n) * n, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        double beta = 1.0;
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double entropy = 0.0;
        for (int it = 0; it < kMaxBisect; ++it) {
            entropy = row_entropy_at(sq_dists, n, i, beta, nullptr);
            const double diff = entropy - target_entropy;
            if (std::fabs(diff) < kTol) break;
            if (diff > 0.0) {
                // Entropy too high -> sharpen the kernel.
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        result.betas[static_cast<size_t>(i)] = beta;
        result.row_entropy[static_cast<size_t>(i)] =
            row_entropy_at(sq_dists, n, i, beta,
                           cond.data() + static_cast<size_t>(i) * n);
    }

    // Symmetrize: p_ij = (p_j|i + p_i|j) / 2n, floored away from zero.
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double v = (cond[static_cast<size_t>(i) * n + static_cast<size_t>(j)] +
                              cond[static_cast<size_t>(j) * n + static_cast<size_t>(i)]) /
                             (2.0 * static_cast<double>(n));
            result.p[static_cast<size_t>(i) * n + static_cast<size_t>(j)] =
                std::max(v, 1e-12);
        }
    }
    return result;
}

Embedding2D tsne(const std::vector<std::vector<double>>& features,
                 double perplexity, int iters, uint64_t seed) {
    const int n = static_cast<int>(features.size());
    if (n < 4) throw UsageError("tsne: need at least 4 points");
    const size_t dim = features.front().size();
    for (const auto& f : features) {
        if (f.size() != dim) throw UsageError("tsne: ragged feature matrix");
    }
    if (!(perplexity < (static_cast<double>(n) - 1.0) / 3.0))
        throw UsageError("tsne: perplexity must be below (N-1)/3");

    // Pairwise squared distances between meta-features.
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            const double* xa = features[static_cast<size_t>(a)].data();
            const double* xb = features[static_cast<size_t>(b)].data();
            double d2 = 0.0;
            for (size_t k = 0; k < dim; ++k) {
                const double diff = xa[k] - xb[k];
                d2 += diff * diff;
            }
            sq[static_cast<size_t>(a) * n + static_cast<size_t>(b)] = d2;
            sq[static_cast<size_t>(b) * n + static_cast<size_t>(a)] = d2;
        }
    }

    PMatrix pm = perplexity_calibrated_p(sq, n, perplexity);

    constexpr double kExaggeration = 12.0;
    constexpr int kExaggerationIters = 250;
    const double eta = static_cast<double>(n) / kExaggeration;
    constexpr double kMomentumEarly = 0.5;
    constexpr double kMomentumLate = 0.8;

    std::vector<double> p = pm.p;
    for (double& v : p) v *= kExaggeration;

    GaussianRng rng(seed);
    std::vector<std::array<double, 2>> y(static_cast<size_t>(n));
    for (auto& pt : y) {
        pt[0] = rng.normal() * 1e-4;
        pt[1] = rng.normal() * 1e-4;
    }
    std::vector<std::array<double, 2>> velocity(static_cast<size_t>(n), {0.0, 0.0});
    std::vector<std::array<double, 2>> gains(static_cast<size_t>(n), {1.0, 1.0});
    std::vector<double> qnum(static_cast<size_t>(n) * n, 0.0);
    std::vector<std::array<double, 2>> grad(static_cast<size_t>(n));

    Embedding2D out;
    double kl = 0.0;
    for (int iter = 0; iter < iters; ++iter) {
        if (iter == kExaggerationIters) {
            for (double& v : p) v /= kExaggeration;
        }
        // Student-t numerators and their total.
        double qsum = 0.0;
        for (int a = 0; a < n; ++a) {
            for (int b = a + 1; b < n; ++b) {
                const double dx = y[static_cast<size_t>(a)][0] - y[static_cast<size_t>(b)][0];
                const double dy = y[static_cast<size_t>(a)][1] - y[static_cast<size_t>(b)][1];
                const double num = 1.0 / (1.0 + dx * dx + dy * dy);
                qnum[static_cast<size_t>(a) * n + static_cast<size_t>(b)] = num;
                qnum[static_cast<size_t>(b) * n + static_cast<size_t>(a)] = num;
                qsum += 2.0 * num;
            }
        }

        for (int a = 0; a < n; ++a) {
            double gx = 0.0, gy = 0.0;
            for (int b = 0; b < n; ++b) {
                if (b == a) continue;
                const size_t idx = static_cast<size_t>(a) * n + static_cast<size_t>(b);
                const double q = std::max(qnum[idx] / qsum, 1e-12);
                const double mult = (p[idx] - q) * qnum[idx];
                gx += mult * (y[static_cast<size_t>(a)][0] - y[static_cast<size_t>(b)][0]);
                gy += mult * (y[static_cast<size_t>(a)][1] - y[static_cast<size_t>(b)][1]);
            }
            grad[static_cast<size_t>(a)] = {4.0 * gx, 4.0 * gy};
        }

        const double momentum =
            iter < kExaggerationIters ? kMomentumEarly : kMomentumLate;
        for (int a = 0; a < n; ++a) {
            for (int c = 0; c < 2; ++c) {
                double& g = grad[static_cast<size_t>(a)][c];
                double& gain = gains[static_cast<size_t>(a)][c];
                double& vel = velocity[static_cast<size_t>(a)][c];
                const bool same_sign = (g > 0.0) == (vel > 0.0);
                gain = same_sign ? gain * 0.8 : gain + 0.2;
                if (gain < 0.01) gain = 0.01;
                vel = momentum * vel - eta * gain * g;
                y[static_cast<size_t>(a)][c] += vel;
            }
        }

        // KL(P||Q) against the un-exaggerated P.
        const bool record_kl =
            iter == kExaggerationIters || iter == iters - 1 || iter == 49;
        if (record_kl) {
            kl = 0.0;
            for (int a = 0; a < n; ++a) {
                for (int b = 0; b < n; ++b) {
                    if (a == b) continue;
                    const size_t idx = static_cast<size_t>(a) * n + static_cast<size_t>(b);
                    const double pv = pm.p[idx];
                    if (pv <= 1e-12) continue;
                    const double q = std::max(qnum[idx] / qsum, 1e-12);
                    kl += pv * std::log(pv / q);
                }
            }
            if (iter == 49) out.kl_at_50 = kl;
            if (iter == kExaggerationIters) out.kl_after_exaggeration = kl;
        }
    }
    out.kl_final = kl;
    out.points = std::move(y);
    for (const auto& pt : out.points) {
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1]))
            throw DivergenceError("tsne produced non-finite coordinates");
    }
    return out;
}

}  // namespace seedstab
