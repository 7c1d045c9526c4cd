// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stflow/autodiff.hpp"
#include "stflow/errors.hpp"
#include "stflow/graphs.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

/// Ablation variants: which spatial graphs are fused and whether external
/// factors / Box-Cox normalization are used.
enum class Variant { full, gs, rs, nonE, nonT };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::gs: return "gs";
        case Variant::rs: return "rs";
        case Variant::nonE: return "nonE";
        case Variant::nonT: return "nonT";
    }
    throw ConfigError("variant: invalid enum value");
}

inline Variant parse_variant(const std::string& s) {
    if (s == "full") return Variant::full;
    if (s == "gs") return Variant::gs;
    if (s == "rs") return Variant::rs;
    if (s == "nonE") return Variant::nonE;
    if (s == "nonT") return Variant::nonT;
    throw ConfigError("variant: unknown name '" + s + "' (expected full|gs|rs|nonE|nonT)");
}

/// How negative elastic entries are made non-negative before propagation
/// normalization (the weight vector is normal-initialized, so products can
/// be negative while degrees must stay positive).
enum class ElasticNonneg { abs, relu };

inline std::string elastic_nonneg_name(ElasticNonneg e) {
    return e == ElasticNonneg::abs ? "abs" : "relu";
}

inline ElasticNonneg parse_elastic_nonneg(const std::string& s) {
    if (s == "abs") return ElasticNonneg::abs;
    if (s == "relu") return ElasticNonneg::relu;
    throw ConfigError("elastic_nonneg: unknown value '" + s + "' (expected abs|relu)");
}

struct ModelConfig {
    std::size_t v_count = 0;
    std::size_t h = 15;     // input days
    std::size_t f = 1;      // predicted days
    std::size_t m = 3;      // temporal kernel size
    std::size_t c_out = 64;   // temporal channels
    std::size_t c_sout = 16;  // spatial channels
    Variant variant = Variant::full;
    std::uint64_t seed = 0;
    bool tie_glu_kernels = false;  // literal paper reading: Psi reuses Gamma's kernel
    ElasticNonneg elastic_nonneg = ElasticNonneg::abs;

    void validate() const {
        if (v_count == 0) throw ConfigError("model: V must be positive");
        if (f == 0) throw ConfigError("model: f must be positive");
        if (m == 0) throw ConfigError("model: m must be positive");
        if (c_out == 0 || c_sout == 0) throw ConfigError("model: channel sizes must be positive");
        // Two unpadded temporal convolutions must leave at least one step.
        if (h + 2 < 2 * m + 1)
            throw ConfigError("model: h=" + std::to_string(h) + " too small for m=" +
                              std::to_string(m) + " (need h >= 2m-1)");
    }

    std::size_t t1() const { return h - m + 1; }
    std::size_t t2() const { return h - 2 * m + 2; }
    bool uses_externals() const { return variant != Variant::nonE; }
    bool uses_boxcox() const { return variant != Variant::nonT; }
    bool uses_geographic() const { return variant != Variant::rs; }
    bool uses_influential() const { return variant != Variant::gs; }
    std::size_t head_width() const {
        return t2() * c_out + (uses_externals() ? 2 * h : 0);
    }
};

/// The MSTGCN forward pass: GLU-gated temporal convolution, fused
/// multi-graph spatial convolution, a second temporal convolution, and the
/// external-factor fully connected head. One instance owns its parameters
/// and is confined to a single thread during forward/backward.
class MstgcnModel {
public:
    /// Static propagation matrices are taken by value; the ones a variant
    /// does not use may be empty tensors.
    MstgcnModel(ModelConfig cfg, Tensor geographic_prop, Tensor influential_prop)
        : cfg_(cfg), store_(cfg.seed) {
        cfg_.validate();
        if (cfg_.uses_geographic()) {
            require_square(geographic_prop, "geographic propagation");
            prop_geo_ = std::move(geographic_prop);
        }
        if (cfg_.uses_influential()) {
            require_square(influential_prop, "influential propagation");
            prop_inf_ = std::move(influential_prop);
        }

        const std::size_t m = cfg_.m, co = cfg_.c_out, cs = cfg_.c_sout;
        store_.kaiming("tconv1.gamma.kernel", {1, m, 1, co}, m);
        store_.zeros("tconv1.gamma.bias", {co});
        if (!cfg_.tie_glu_kernels) {
            store_.kaiming("tconv1.psi.kernel", {1, m, 1, co}, m);
            store_.zeros("tconv1.psi.bias", {co});
        }
        if (cfg_.uses_geographic()) store_.kaiming("spatial.geo.w", {co, cs}, co);
        if (cfg_.uses_influential()) store_.kaiming("spatial.inf.w", {co, cs}, co);
        store_.kaiming("spatial.ela.w", {co, cs}, co);
        elastic_ = init_elastic(cfg_.v_count, cfg_.seed + 1, store_);
        store_.kaiming("tconv2.gamma.kernel", {1, m, cs, co}, m * cs);
        store_.zeros("tconv2.gamma.bias", {co});
        if (!cfg_.tie_glu_kernels) {
            store_.kaiming("tconv2.psi.kernel", {1, m, cs, co}, m * cs);
            store_.zeros("tconv2.psi.bias", {co});
        }
        store_.kaiming("head.w", {cfg_.head_width(), cfg_.f}, cfg_.head_width());
        store_.zeros("head.b", {cfg_.f});
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const Tensor& geographic_propagation() const { return prop_geo_; }
    const Tensor& influential_propagation() const { return prop_inf_; }

    /// Gamma + Gamma (.) sigmoid(Psi-preactivation), exactly the printed
    /// gate form (not the standard GLU). k selects the stage's kernels.
    NodePtr temporal_block(const NodePtr& x, int k) const {
        const std::string base = k == 1 ? "tconv1" : "tconv2";
        NodePtr gamma = conv_time(x, store_.at(base + ".gamma.kernel"),
                                  store_.at(base + ".gamma.bias"));
        NodePtr psi_pre =
            cfg_.tie_glu_kernels
                ? gamma
                : conv_time(x, store_.at(base + ".psi.kernel"), store_.at(base + ".psi.bias"));
        NodePtr psi = sigmoid(psi_pre);
        return add(gamma, hadamard(gamma, psi));
    }

    /// Per included graph: ReLU(P . x . w_sc) with the propagation applied
    /// along the station axis of every time slice; fusion is the elementwise
    /// sum over the variant's graph set.
    NodePtr spatial_block(const NodePtr& x) const {
        const auto& s = x->value.shape();
        if (s.size() != 3 || s[0] != cfg_.v_count || s[2] != cfg_.c_out)
            throw ShapeError("spatial_block: expected [V,T," + std::to_string(cfg_.c_out) +
                             "], got " + shape_str(s));
        std::vector<NodePtr> parts;
        if (cfg_.uses_geographic())
            parts.push_back(graph_conv(x, constant(prop_geo_), store_.at("spatial.geo.w")));
        if (cfg_.uses_influential())
            parts.push_back(graph_conv(x, constant(prop_inf_), store_.at("spatial.inf.w")));
        parts.push_back(graph_conv(x, elastic_propagation(), store_.at("spatial.ela.w")));
        NodePtr fused = parts.front();
        for (std::size_t i = 1; i < parts.size(); ++i) fused = add(fused, parts[i]);
        return fused;
    }

    /// Shared affine map per station over [externals ; flattened features].
    NodePtr head(const NodePtr& xt, const Tensor& ext) const {
        const auto& s = xt->value.shape();
        if (s.size() != 3 || s[0] != cfg_.v_count)
            throw ShapeError("head: expected [V,T2,C], got " + shape_str(s));
        const std::size_t flat = s[1] * s[2];
        NodePtr features = reshape(xt, {cfg_.v_count, flat});
        if (cfg_.uses_externals()) {
            if (ext.rank() != 3 || ext.extent(0) != cfg_.v_count || ext.extent(1) != cfg_.h ||
                ext.extent(2) != 2)
                throw ShapeError("head: externals must be [V,h,2], got " + ext.shape_string());
            NodePtr ext_flat =
                reshape(constant(ext), {cfg_.v_count, cfg_.h * 2});
            features = concat_last({ext_flat, features});
        }
        return add_bias(matmul(features, store_.at("head.w")), store_.at("head.b"));
    }

    /// Full pipeline on one window. The window must already be on the model
    /// scale (Box-Cox normalized unless the variant is nonT).
    NodePtr forward(const Tensor& window, const Tensor& ext) const {
        if (window.rank() != 3 || window.extent(0) != cfg_.v_count ||
            window.extent(1) != cfg_.h || window.extent(2) != 1)
            throw ShapeError("forward: window must be [V,h,1], got " + window.shape_string());
        NodePtr x = temporal_block(constant(window), 1);
        x = spatial_block(x);
        x = temporal_block(x, 2);
        return head(x, ext);
    }

    /// The elastic graph's propagation matrix, rebuilt from the current
    /// weight vector each pass so gradients flow into it.
    NodePtr elastic_propagation() const {
        NodePtr w = elastic_adjacency(elastic_);
        w = cfg_.elastic_nonneg == ElasticNonneg::abs ? absval(w) : relu(w);
        return propagation_node(w);
    }

    const ElasticParams& elastic() const { return elastic_; }

private:
    static void require_square(const Tensor& t, const char* what) {
        if (t.rank() != 2 || t.extent(0) != t.extent(1))
            throw ShapeError(std::string(what) + ": must be a square matrix, got " +
                             (t.numel() ? t.shape_string() : std::string("<empty>")));
    }

    NodePtr graph_conv(const NodePtr& x, const NodePtr& prop, const NodePtr& w) const {
        const std::size_t v = cfg_.v_count;
        const std::size_t t = x->value.extent(1);
        const std::size_t c = x->value.extent(2);
        // Station-axis mix: P [V,V] applied to x flattened as [V, T*C].
        NodePtr mixed = reshape(matmul(prop, reshape(x, {v, t * c})), {v * t, c});
        // Channel mix with the graph's trainable weight matrix, then ReLU.
        NodePtr out = matmul(mixed, w);
        return relu(reshape(out, {v, t, cfg_.c_sout}));
    }

    ModelConfig cfg_;
    ParamStore store_;
    Tensor prop_geo_;
    Tensor prop_inf_;
    ElasticParams elastic_;
};

}  // namespace stflow
