// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stflow/errors.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

/// One vertex of a define-by-run reverse-mode differentiation graph.
///
/// The graph is rebuilt on every forward pass; parameter leaves (created via
/// ParamStore) persist across rebuilds so their gradients can drive updates.
struct Node {
    Tensor value;
    Tensor grad;  // materialized lazily by backward(); same shape as value
    bool trainable = false;
    bool needs_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor(value.shape(), 0.0);
    }
};

using NodePtr = std::shared_ptr<Node>;

inline NodePtr make_leaf(Tensor value, bool trainable = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->trainable = trainable;
    n->needs_grad = trainable;
    if (trainable) n->ensure_grad();
    return n;
}

inline NodePtr constant(Tensor value) { return make_leaf(std::move(value), false); }

inline NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const char* op,
                         std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents)
        if (p->needs_grad) n->needs_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return n;
}

namespace detail {

inline void require_same_shape(const Node& a, const Node& b, const char* op) {
    if (!a.value.same_shape(b.value)) {
        throw ShapeError(std::string(op) + ": shapes differ: " + a.value.shape_string() + " vs " +
                         b.value.shape_string());
    }
}

// Topological order with the loss last; each node appears exactly once.
inline std::vector<Node*> topo_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Visits each reachable node once in
/// reverse topological order; gradients of unreachable nodes are untouched
/// (parameter leaves start at zero and are re-zeroed by ParamStore::zero_grad).
inline void backward(const NodePtr& loss) {
    if (loss->value.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            loss->value.shape_string());
    }
    auto order = detail::topo_order(loss);
    for (Node* n : order) {
        if (n->needs_grad) {
            n->grad = Tensor(n->value.shape(), 0.0);
        }
    }
    if (!loss->needs_grad) return;  // no trainable ancestors: nothing to do
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->needs_grad && n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    detail::require_same_shape(*a, *b, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, "add", [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& parent = *self.parents[p];
            if (!parent.needs_grad) continue;
            parent.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) parent.grad[i] += self.grad[i];
        }
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    detail::require_same_shape(*a, *b, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, "sub", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) pb.grad[i] -= self.grad[i];
        }
    });
}

inline NodePtr hadamard(const NodePtr& a, const NodePtr& b) {
    detail::require_same_shape(*a, *b, "hadamard");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, "hadamard", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                pa.grad[i] += self.grad[i] * pb.value[i];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                pb.grad[i] += self.grad[i] * pa.value[i];
        }
    });
}

inline NodePtr scale(const NodePtr& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data()) v *= c;
    return make_node(std::move(out), {a}, "scale", [c](Node& self) {
        Node& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) pa.grad[i] += c * self.grad[i];
    });
}

/// Broadcasts a rank-1 bias over the last axis; the only broadcasting rule
/// in the engine.
inline NodePtr add_bias(const NodePtr& x, const NodePtr& bias) {
    if (bias->value.rank() != 1 || x->value.rank() < 1 ||
        bias->value.extent(0) != x->value.shape().back()) {
        throw ShapeError("add_bias: bias " + bias->value.shape_string() +
                         " does not match last axis of " + x->value.shape_string());
    }
    const std::size_t c = bias->value.extent(0);
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bias->value[i % c];
    return make_node(std::move(out), {x, bias}, "add_bias", [c](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.needs_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i) px.grad[i] += self.grad[i];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                pb.grad[i % c] += self.grad[i];
        }
    });
}

inline NodePtr sigmoid(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data()) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    return make_node(std::move(out), {x}, "sigmoid", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double s = self.value[i];
            px.grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

inline NodePtr relu(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return make_node(std::move(out), {x}, "relu", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            if (px.value[i] > 0.0) px.grad[i] += self.grad[i];
    });
}

inline NodePtr absval(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data()) v = std::fabs(v);
    return make_node(std::move(out), {x}, "absval", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double v = px.value[i];
            const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
            px.grad[i] += self.grad[i] * sign;
        }
    });
}

/// Elementwise x^{-1/2}; requires strictly positive input.
inline NodePtr rsqrt(const NodePtr& x) {
    Tensor out = x->value;
    for (double& v : out.data()) {
        if (v <= 0.0)
            throw DomainError("rsqrt: non-positive input " + std::to_string(v));
        v = 1.0 / std::sqrt(v);
    }
    return make_node(std::move(out), {x}, "rsqrt", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const double y = self.value[i];
            px.grad[i] += self.grad[i] * (-0.5 * y * y * y);
        }
    });
}

inline NodePtr sum(const NodePtr& x) {
    double s = 0.0;
    for (double v : x->value.data()) s += v;
    return make_node(Tensor::scalar(s), {x}, "sum", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        const double g = self.grad[0];
        for (double& v : px.grad.data()) v += g;
    });
}

/// Sums over the last axis: [..., N] -> [...]; rank-1 input yields a scalar.
inline NodePtr sum_last(const NodePtr& x) {
    const auto& shape = x->value.shape();
    const std::size_t last = shape.back();
    std::vector<std::size_t> out_shape(shape.begin(), shape.end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor out(out_shape, 0.0);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < last; ++j) s += x->value[i * last + j];
        out[i] = s;
    }
    return make_node(std::move(out), {x}, "sum_last", [last](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            for (std::size_t j = 0; j < last; ++j) px.grad[i * last + j] += self.grad[i];
    });
}

inline NodePtr reshape(const NodePtr& x, std::vector<std::size_t> new_shape) {
    Tensor out(new_shape, x->value.data());
    return make_node(std::move(out), {x}, "reshape", [](Node& self) {
        Node& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) px.grad[i] += self.grad[i];
    });
}

/// Concatenates along the last axis; all inputs must agree on the other axes.
inline NodePtr concat_last(const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw InputError("concat_last: no inputs");
    const auto& first = xs.front()->value.shape();
    std::size_t total_last = 0;
    for (const auto& x : xs) {
        const auto& s = x->value.shape();
        if (s.size() != first.size() ||
            !std::equal(s.begin(), s.end() - 1, first.begin())) {
            throw ShapeError("concat_last: incompatible shapes " + shape_str(first) + " vs " +
                             shape_str(s));
        }
        total_last += s.back();
    }
    std::vector<std::size_t> out_shape(first);
    out_shape.back() = total_last;
    Tensor out(out_shape, 0.0);
    const std::size_t rows = out.numel() / total_last;
    std::vector<std::size_t> widths;
    widths.reserve(xs.size());
    for (const auto& x : xs) widths.push_back(x->value.shape().back());
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const auto& v = xs[k]->value;
            for (std::size_t j = 0; j < widths[k]; ++j)
                out[r * total_last + off + j] = v[r * widths[k] + j];
            off += widths[k];
        }
    }
    return make_node(std::move(out), xs, "concat_last",
                     [widths, total_last, rows](Node& self) {
                         for (std::size_t r = 0; r < rows; ++r) {
                             std::size_t off = 0;
                             for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 Node& p = *self.parents[k];
                                 if (p.needs_grad) {
                                     p.ensure_grad();
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                         p.grad[r * widths[k] + j] +=
                                             self.grad[r * total_last + off + j];
                                 }
                                 off += widths[k];
                             }
                         }
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_accum(const double* a, const double* b, double* c, std::size_t m,
                         std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] . B[n,k]^T
inline void matmul_bt_accum(const double* a, const double* b, double* c, std::size_t m,
                            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] += s;
        }
}

// C[k,n] += A[m,k]^T . B[m,n]
inline void matmul_at_accum(const double* a, const double* b, double* c, std::size_t m,
                            std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

/// Matrix product over the last two axes. Operands must have equal rank and
/// identical leading (batch) extents; no implicit broadcasting.
inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.size() != sb.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
        sa[sa.size() - 1] != sb[sb.size() - 2]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t n = sb[sb.size() - 1];
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
    std::vector<std::size_t> out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(out_shape, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
        detail::matmul_accum(a->value.data().data() + s * m * k,
                             b->value.data().data() + s * k * n,
                             out.data().data() + s * m * n, m, k, n);
    }
    return make_node(std::move(out), {a, b}, "matmul", [m, k, n, batch](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t s = 0; s < batch; ++s) {
            const double* g = self.grad.data().data() + s * m * n;
            if (pa.needs_grad) {
                pa.ensure_grad();
                detail::matmul_bt_accum(g, pb.value.data().data() + s * k * n,
                                       pa.grad.data().data() + s * m * k, m, n, k);
            }
            if (pb.needs_grad) {
                pb.ensure_grad();
                detail::matmul_at_accum(pa.value.data().data() + s * m * k, g,
                                       pb.grad.data().data() + s * k * n, m, k, n);
            }
        }
    });
}

/// Unpadded stride-1 convolution along the day axis.
/// x: [V, D, C_in], kernel: [1, m, C_in, C_out], bias: [C_out] -> [V, D-m+1, C_out].
inline NodePtr conv_time(const NodePtr& x, const NodePtr& kernel, const NodePtr& bias) {
    const auto& sx = x->value.shape();
    const auto& sk = kernel->value.shape();
    if (sx.size() != 3) throw ShapeError("conv_time: input must be [V,D,C_in], got " + shape_str(sx));
    if (sk.size() != 4 || sk[0] != 1)
        throw ShapeError("conv_time: kernel must be [1,m,C_in,C_out], got " + shape_str(sk));
    const std::size_t v_count = sx[0], d = sx[1], cin = sx[2];
    const std::size_t m = sk[1], cout = sk[3];
    if (sk[2] != cin)
        throw ShapeError("conv_time: kernel channels " + shape_str(sk) + " do not match input " +
                         shape_str(sx));
    if (bias->value.rank() != 1 || bias->value.extent(0) != cout)
        throw ShapeError("conv_time: bias must be [C_out], got " + bias->value.shape_string());
    if (d < m)
        throw WindowError("conv_time: time extent " + std::to_string(d) +
                          " shorter than kernel size " + std::to_string(m));
    const std::size_t t_out = d - m + 1;
    Tensor out({v_count, t_out, cout}, 0.0);
    const auto& xv = x->value;
    const auto& kv = kernel->value;
    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t t = 0; t < t_out; ++t)
            for (std::size_t co = 0; co < cout; ++co) {
                double s = bias->value[co];
                for (std::size_t dt = 0; dt < m; ++dt)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        s += xv.at(v, t + dt, ci) * kv.at(0, dt, ci, co);
                out.at(v, t, co) = s;
            }
    return make_node(std::move(out), {x, kernel, bias},
                     "conv_time", [v_count, t_out, cin, cout, m](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        Node& pb = *self.parents[2];
        const bool gx = px.needs_grad, gk = pk.needs_grad, gb = pb.needs_grad;
        if (gx) px.ensure_grad();
        if (gk) pk.ensure_grad();
        if (gb) pb.ensure_grad();
        for (std::size_t v = 0; v < v_count; ++v)
            for (std::size_t t = 0; t < t_out; ++t)
                for (std::size_t co = 0; co < cout; ++co) {
                    const double g = self.grad.at(v, t, co);
                    if (g == 0.0) continue;
                    if (gb) pb.grad[co] += g;
                    for (std::size_t dt = 0; dt < m; ++dt)
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            if (gx) px.grad.at(v, t + dt, ci) += g * pk.value.at(0, dt, ci, co);
                            if (gk) pk.grad.at(0, dt, ci, co) += g * px.value.at(v, t + dt, ci);
                        }
                }
    });
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// Named trainable leaves with a seeded RNG for initialization draws.
/// Enumeration order is lexicographic (std::map), so update sweeps and
/// checkpoints are deterministic.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

    NodePtr zeros(const std::string& name, std::vector<std::size_t> shape) {
        return insert(name, Tensor(std::move(shape), 0.0));
    }

    NodePtr normal(const std::string& name, std::vector<std::size_t> shape, double stddev) {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : t.data()) v = dist(rng_);
        return insert(name, std::move(t));
    }

    /// Kaiming-style fan-in init: N(0, sqrt(2 / fan_in)).
    NodePtr kaiming(const std::string& name, std::vector<std::size_t> shape,
                    std::size_t fan_in) {
        return normal(name, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
    }

    /// Registers a trainable leaf with externally prepared values.
    NodePtr leaf(const std::string& name, Tensor t) { return insert(name, std::move(t)); }

    NodePtr at(const std::string& name) const {
        auto it = slots_.find(name);
        if (it == slots_.end()) throw InputError("param store: no parameter named '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return slots_.count(name) > 0; }

    const std::map<std::string, NodePtr>& slots() const { return slots_; }

    void zero_grad() {
        for (auto& [name, node] : slots_) {
            node->ensure_grad();
            std::fill(node->grad.data().begin(), node->grad.data().end(), 0.0);
        }
    }

    std::uint64_t seed() const { return seed_; }
    std::mt19937_64& rng() { return rng_; }

private:
    NodePtr insert(const std::string& name, Tensor t) {
        if (slots_.count(name)) throw InputError("param store: duplicate parameter '" + name + "'");
        auto node = make_leaf(std::move(t), true);
        slots_.emplace(name, node);
        return node;
    }

    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::map<std::string, NodePtr> slots_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Compares analytic gradients against central finite differences for every
/// entry of every parameter in the store. The builder must recompute the loss
/// from the store's current values on each call. Returns
/// max |g_analytic - g_fd| / max(1, |g_fd|).
inline double gradcheck(const std::function<NodePtr(ParamStore&)>& build, ParamStore& params,
                        double eps) {
    if (!(eps > 0.0 && eps <= 1e-2))
        throw DomainError("gradcheck: eps must be in (0, 1e-2], got " + std::to_string(eps));

    NodePtr loss = build(params);
    if (loss->value.numel() != 1)
        throw ContractError("gradcheck: builder must produce a scalar loss");
    for (Node* n : detail::topo_order(loss)) {
        if (!n->value.all_finite())
            throw DomainError(std::string("gradcheck: non-finite value produced by op '") +
                              n->op + "'");
    }
    params.zero_grad();
    backward(loss);
    std::map<std::string, Tensor> analytic;
    for (const auto& [name, node] : params.slots()) analytic.emplace(name, node->grad);

    double max_rel = 0.0;
    for (const auto& [name, node] : params.slots()) {
        for (std::size_t i = 0; i < node->value.numel(); ++i) {
            const double saved = node->value[i];
            node->value[i] = saved + eps;
            const double lp = build(params)->value[0];
            node->value[i] = saved - eps;
            const double lm = build(params)->value[0];
            node->value[i] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double rel =
                std::fabs(analytic.at(name)[i] - fd) / std::max(1.0, std::fabs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace stflow
