// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stflow/autodiff.hpp"
#include "stflow/errors.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

/// Static description of one toll station.
struct StationProfile {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    double mileage = 0.0;  // mean trip mileage of vehicles exiting here, km
};

inline double station_distance(const StationProfile& a, const StationProfile& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

enum class GraphKind { geographic, influential, elastic };

/// One highway graph: zero-diagonal adjacency plus its normalized
/// propagation matrix D^{-1/2} (W + I) D^{-1/2}.
struct HighwayGraph {
    GraphKind kind = GraphKind::geographic;
    Tensor adjacency;    // [V, V], zero diagonal
    Tensor propagation;  // [V, V]
};

// ---------------------------------------------------------------------------
// Propagation normalization
// ---------------------------------------------------------------------------

/// D^{-1/2} (W + I) D^{-1/2} with D_ii = sum_j (W + I)_ij, on plain tensors.
inline Tensor propagation_matrix(const Tensor& adjacency) {
    if (adjacency.rank() != 2 || adjacency.extent(0) != adjacency.extent(1))
        throw ShapeError("propagation: adjacency must be square, got " +
                         adjacency.shape_string());
    const std::size_t n = adjacency.extent(0);
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 1.0;  // the +I self loop
        for (std::size_t j = 0; j < n; ++j) deg += adjacency.at(i, j);
        if (!(deg > 0.0))
            throw DomainError("propagation: non-positive degree at row " + std::to_string(i));
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double a_hat = adjacency.at(i, j) + (i == j ? 1.0 : 0.0);
            out.at(i, j) = inv_sqrt_deg[i] * a_hat * inv_sqrt_deg[j];
        }
    return out;
}

/// Differentiable version for trainable adjacencies (the elastic graph):
/// built from autodiff primitives so gradients reach the adjacency.
inline NodePtr propagation_node(const NodePtr& adjacency) {
    const auto& s = adjacency->value.shape();
    if (s.size() != 2 || s[0] != s[1])
        throw ShapeError("propagation: adjacency must be square, got " + shape_str(s));
    const std::size_t n = s[0];
    NodePtr a_hat = add(adjacency, constant(Tensor::identity(n)));
    NodePtr deg = sum_last(a_hat);  // [V]
    for (std::size_t i = 0; i < n; ++i)
        if (!(deg->value[i] > 0.0))
            throw DomainError("propagation: non-positive degree at row " + std::to_string(i));
    NodePtr inv_sqrt = rsqrt(deg);
    NodePtr outer = matmul(reshape(inv_sqrt, {n, 1}), reshape(inv_sqrt, {1, n}));
    return hadamard(a_hat, outer);
}

// ---------------------------------------------------------------------------
// Geographic graph
// ---------------------------------------------------------------------------

/// 0/1 adjacency from physical road connectivity. Road segments are treated
/// as bidirectional unless `directed` is set. Duplicate edges are ignored
/// with a warning; self loops and out-of-range ids are rejected.
inline HighwayGraph build_geographic(const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                                     std::size_t v_count, bool directed = false) {
    if (v_count == 0) throw InputError("geographic graph: V must be positive");
    HighwayGraph g;
    g.kind = GraphKind::geographic;
    g.adjacency = Tensor({v_count, v_count});
    for (const auto& [from, to] : edges) {
        if (from >= v_count || to >= v_count)
            throw InputError("geographic graph: station id " +
                             std::to_string(std::max(from, to)) + " out of range (V=" +
                             std::to_string(v_count) + ")");
        if (from == to)
            throw InputError("geographic graph: self loop at station " + std::to_string(from));
        if (g.adjacency.at(from, to) == 1.0) {
            std::cerr << "stflow: warning: duplicate edge " << from << "->" << to
                      << " ignored\n";
            continue;
        }
        g.adjacency.at(from, to) = 1.0;
        if (!directed) g.adjacency.at(to, from) = 1.0;
    }
    g.propagation = propagation_matrix(g.adjacency);
    return g;
}

// ---------------------------------------------------------------------------
// Influential graph
// ---------------------------------------------------------------------------

/// Row-softmax similarity over scal(i,j) = 1 - (|dis(i,j) - mileage(i)| -
/// min_J) / max_J, where J ranges over stations other than i. Rows sum to 1;
/// the matrix is generally asymmetric and the diagonal is zero.
inline HighwayGraph build_influential(const std::vector<StationProfile>& profiles) {
    const std::size_t n = profiles.size();
    if (n < 2) throw InputError("influential graph: need at least 2 stations");
    HighwayGraph g;
    g.kind = GraphKind::influential;
    g.adjacency = Tensor({n, n});
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dev[j] = std::fabs(station_distance(profiles[i], profiles[j]) - profiles[i].mileage);
            lo = std::min(lo, dev[j]);
            hi = std::max(hi, dev[j]);
        }
        if (!(hi > 0.0))
            throw DomainError("influential graph: degenerate row for station " + profiles[i].id +
                              " (all candidates equidistant from its mileage)");
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double scal = 1.0 - (dev[j] - lo) / hi;
            g.adjacency.at(i, j) = std::exp(scal);
            denom += g.adjacency.at(i, j);
        }
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) g.adjacency.at(i, j) /= denom;
    }
    g.propagation = propagation_matrix(g.adjacency);
    return g;
}

// ---------------------------------------------------------------------------
// Elastic graph
// ---------------------------------------------------------------------------

/// Trainable per-station weight vector behind the rank-one elastic graph.
struct ElasticParams {
    NodePtr a;  // [V], registered in the model's ParamStore
};

/// Registers the elastic weight vector, drawn i.i.d. N(0,1) scaled by 0.1.
inline ElasticParams init_elastic(std::size_t v_count, std::uint64_t seed, ParamStore& store) {
    if (v_count == 0) throw InputError("elastic graph: V must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor t({v_count});
    for (double& v : t.data()) v = 0.1 * dist(rng);
    return ElasticParams{store.leaf("elastic.a", std::move(t))};
}

/// W_s = a a^T with the diagonal forced to zero; differentiable w.r.t. a.
inline NodePtr elastic_adjacency(const ElasticParams& p) {
    const std::size_t n = p.a->value.numel();
    NodePtr outer = matmul(reshape(p.a, {n, 1}), reshape(p.a, {1, n}));
    Tensor mask({n, n}, 1.0);
    for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = 0.0;
    return hadamard(outer, constant(std::move(mask)));
}

}  // namespace stflow
