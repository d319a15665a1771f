#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "seedstab/store.hpp"

namespace seedstab {

// Pairwise Euclidean distance matrix over one head's per-prompt signature
// vectors.
struct HeadGeometry {
    int layer = 0;
    int head = 0;
    double relative_depth = 0.0;  // (layer+1) / n_layers
    int n = 0;                    // number of prompts
    std::vector<double> d;        // row-major [n, n], symmetric, zero diagonal
};

HeadGeometry head_distance_matrix(const HeadSignatureDump& dump, int layer,
                                  int head);

// Flattened upper triangle of the distance matrix (row-major, i < j); the
// meta-representation fed to t-SNE. Invariant to isometries of the signature
// cloud by construction.
std::vector<double> meta_feature(const HeadGeometry& geom);

struct Embedding2D {
    std::vector<std::array<double, 2>> points;
    // KL(P||Q) milestones, all against the un-exaggerated P.
    double kl_at_50 = 0.0;               // iteration 50
    double kl_after_exaggeration = 0.0;  // right after exaggeration ends
    double kl_final = 0.0;
};

// Row-calibrated Gaussian input kernel for t-SNE.
struct PMatrix {
    int n = 0;
    std::vector<double> p;      // symmetrized joint distribution, sums to 1
    std::vector<double> betas;  // per-row precision 1/(2 sigma_i^2)
    std::vector<double> row_entropy;  // Shannon entropy (nats) of each
                                      // conditional row at its beta
};

// Bisection solves each row's bandwidth to the target perplexity within an
// entropy tolerance of 1e-5 nats.
PMatrix perplexity_calibrated_p(const std::vector<double>& sq_dists, int n,
                                double perplexity);

// Exact (non-approximated) t-SNE: Gaussian P, Student-t Q, KL minimized by
// momentum gradient descent with early exaggeration. Deterministic given the
// seed.
Embedding2D tsne(const std::vector<std::vector<double>>& features,
                 double perplexity, int iters, uint64_t seed);

}  // namespace seedstab
