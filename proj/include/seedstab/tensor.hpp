#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "seedstab/common.hpp"

namespace seedstab {

// Dense row-major f32 tensor. Shapes are small (rank <= 4) and fixed after
// construction; all hot math happens through raw pointers in the kernels.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;

    static Tensor zeros(std::initializer_list<int64_t> dims) {
        Tensor t;
        t.shape.assign(dims);
        t.data.assign(static_cast<size_t>(product(t.shape)), 0.0f);
        return t;
    }
    static Tensor zeros(const std::vector<int64_t>& dims) {
        Tensor t;
        t.shape = dims;
        t.data.assign(static_cast<size_t>(product(t.shape)), 0.0f);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    int64_t dim(size_t i) const { return shape.at(i); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void zero() { std::fill(data.begin(), data.end(), 0.0f); }

    bool all_finite() const {
        for (float v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static int64_t product(const std::vector<int64_t>& dims) {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        return n;
    }
};

}  // namespace seedstab
