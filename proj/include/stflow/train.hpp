// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stflow/autodiff.hpp"
#include "stflow/boxcox.hpp"
#include "stflow/errors.hpp"
#include "stflow/metrics.hpp"
#include "stflow/model.hpp"
#include "stflow/panel.hpp"

namespace stflow {

struct TrainConfig {
    enum class Optimizer { sgd, adam };

    std::size_t epochs = 100;
    double lr = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t shuffle_seed = 0;
    std::size_t patience = 0;   // 0 disables validation early stopping
    double grad_clip = 5.0;     // elementwise clamp; 0 disables

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
        if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
        if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0");
    }
};

inline TrainConfig::Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return TrainConfig::Optimizer::sgd;
    if (s == "adam") return TrainConfig::Optimizer::adam;
    throw ConfigError("train: unknown optimizer '" + s + "' (expected sgd|adam)");
}

/// Mean squared error on the model (Box-Cox) scale.
inline NodePtr loss_mse(const NodePtr& pred, const Tensor& target) {
    if (!pred->value.same_shape(target))
        throw ShapeError("loss: prediction " + pred->value.shape_string() +
                         " vs target " + target.shape_string());
    NodePtr diff = sub(pred, constant(target));
    return scale(sum(hadamard(diff, diff)), 1.0 / double(target.numel()));
}

/// Gradient-descent updates over a ParamStore; Adam keeps per-parameter
/// moment state keyed by name. Aborts on non-finite gradients, naming the
/// parameter.
class Optimizer {
public:
    explicit Optimizer(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    void step(ParamStore& params) {
        ++t_;
        for (const auto& [name, node] : params.slots()) {
            node->ensure_grad();
            Tensor& g = node->grad;
            for (double v : g.data())
                if (!std::isfinite(v))
                    throw DomainError("optimizer: non-finite gradient in parameter '" + name +
                                      "'");
            if (cfg_.grad_clip > 0.0)
                for (double& v : g.data())
                    v = std::clamp(v, -cfg_.grad_clip, cfg_.grad_clip);

            if (cfg_.optimizer == TrainConfig::Optimizer::sgd) {
                for (std::size_t i = 0; i < g.numel(); ++i)
                    node->value[i] -= cfg_.lr * g[i];
            } else {
                auto& [m, v] = moments_[name];
                if (m.numel() != g.numel()) {
                    m = Tensor(g.shape(), 0.0);
                    v = Tensor(g.shape(), 0.0);
                }
                const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                    const double mh = m[i] / bc1;
                    const double vh = v[i] / bc2;
                    node->value[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
                }
            }
        }
    }

private:
    TrainConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

struct FitResult {
    std::vector<double> train_loss;  // mean per epoch
    std::vector<double> val_loss;    // empty when no validation set
    std::size_t stopped_epoch = 0;   // epochs actually run
};

namespace detail {

// Engine-driven Fisher-Yates so epoch order does not depend on std::shuffle's
// unspecified algorithm.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = std::size_t(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

inline double eval_loss(const MstgcnModel& model, const SampleSet& samples) {
    double total = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        NodePtr pred = model.forward(samples.inputs[s], samples.externals[s]);
        total += loss_mse(pred, samples.targets_model[s])->value[0];
    }
    return total / double(samples.size());
}

}  // namespace detail

/// Seeded single-threaded training loop: per-sample forward/backward/update
/// over shuffled epochs, optional plateau early stopping on a validation
/// split. Deterministic given (seed, config, data).
inline FitResult fit(MstgcnModel& model, const SampleSet& train, const SampleSet* val,
                     const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw InputError("fit: empty training set");

    Optimizer opt(cfg);
    std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    FitResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t s : order) {
            NodePtr pred = model.forward(train.inputs[s], train.externals[s]);
            NodePtr loss = loss_mse(pred, train.targets_model[s]);
            epoch_loss += loss->value[0];
            model.params().zero_grad();
            backward(loss);
            opt.step(model.params());
        }
        epoch_loss /= double(train.size());
        if (!std::isfinite(epoch_loss))
            throw DomainError("fit: diverged (non-finite loss) at epoch " +
                              std::to_string(epoch));
        result.train_loss.push_back(epoch_loss);
        result.stopped_epoch = epoch + 1;

        if (val && !val->empty()) {
            const double vl = detail::eval_loss(model, *val);
            result.val_loss.push_back(vl);
            if (cfg.patience > 0) {
                if (vl < best_val - 1e-12) {
                    best_val = vl;
                    stale = 0;
                } else if (++stale > cfg.patience) {
                    break;
                }
            }
        }
    }
    return result;
}

/// Runs the model over a sample set and reports raw-scale metrics. The
/// inverse transform is skipped for nonT models (they already train on the
/// raw scale); out-of-domain inverse values are clamped and counted.
struct EvalOutcome {
    EvalReport report;                     // pooled over all samples
    std::vector<EvalReport> per_sample;    // one per window
    std::vector<Tensor> predictions_raw;   // one [V,f] per window
};

inline EvalOutcome evaluate(const MstgcnModel& model, const SampleSet& samples,
                            const NormalizationState& norm) {
    if (samples.empty()) throw InputError("evaluate: empty sample set");
    EvalOutcome out;
    std::size_t clamped = 0;
    const bool use_boxcox = model.config().uses_boxcox();
    for (std::size_t s = 0; s < samples.size(); ++s) {
        NodePtr pred = model.forward(samples.inputs[s], samples.externals[s]);
        Tensor raw = pred->value;
        for (double& p : raw.data()) p = from_model_scale_clamped(p, norm, use_boxcox, clamped);
        out.per_sample.push_back(metrics(raw, samples.targets_raw[s]));
        out.predictions_raw.push_back(std::move(raw));
    }
    out.report = metrics_pooled(out.predictions_raw, samples.targets_raw);
    out.report.clamped = clamped;
    return out;
}

}  // namespace stflow
