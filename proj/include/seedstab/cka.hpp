#pragma once

#include <vector>

#include "seedstab/store.hpp"

namespace seedstab {

// Symmetric RBF Gram matrix over a point cloud.
struct GramMatrix {
    int n = 0;
    std::vector<double> k;  // row-major [n, n]
    double sigma = 0.0;
    double threshold = 0.0;

    double at(int a, int b) const {
        return k[static_cast<size_t>(a) * n + static_cast<size_t>(b)];
    }
};

// One row per prompt: position-mean of the post-attention residual at one
// layer.
struct ResidualPointCloud {
    int n_rows = 0;
    int dim = 0;
    std::vector<double> x;  // row-major [n_rows, dim]
};

ResidualPointCloud residual_point_cloud(const ResidualDump& dump, int layer);

// K[a][b] = exp(-|xa-xb|^2 / (2 sigma^2)) with sigma = threshold * median of
// the off-diagonal pairwise distances. Throws DegenerateError when the median
// distance is zero.
GramMatrix rbf_gram(const ResidualPointCloud& cloud, double threshold);

// HSIC(K1,K2)/sqrt(HSIC(K1,K1) HSIC(K2,K2)) with double centering; biased
// (plain trace) estimator.
double cka(const GramMatrix& k1, const GramMatrix& k2);

// Per layer: mean over pair refits of cka(anchor gram, pair gram).
std::vector<double> residual_stability(const ResidualDump& anchor,
                                       const std::vector<const ResidualDump*>& pairs,
                                       double threshold = 1.0);

}  // namespace seedstab
