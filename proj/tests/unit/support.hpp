// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests. The finite-difference oracle here is
// intentionally independent of stflow::gradcheck.

#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "stflow/autodiff.hpp"
#include "stflow/tensor.hpp"

namespace testsupport {

inline stflow::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0) {
    stflow::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

/// Central finite differences of a scalar function of one leaf's values.
inline stflow::Tensor fd_gradient(const std::function<double()>& eval, stflow::NodePtr leaf,
                                  double eps = 1e-6) {
    stflow::Tensor g(leaf->value.shape(), 0.0);
    for (std::size_t i = 0; i < leaf->value.numel(); ++i) {
        const double saved = leaf->value[i];
        leaf->value[i] = saved + eps;
        const double lp = eval();
        leaf->value[i] = saved - eps;
        const double lm = eval();
        leaf->value[i] = saved;
        g[i] = (lp - lm) / (2.0 * eps);
    }
    return g;
}

inline bool bitwise_equal(const stflow::Tensor& a, const stflow::Tensor& b) {
    if (!(a.shape() == b.shape())) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

inline double max_abs_diff(const stflow::Tensor& a, const stflow::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace testsupport
