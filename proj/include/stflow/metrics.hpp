// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "stflow/errors.hpp"
#include "stflow/panel.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

/// Regression metrics on the raw flow scale. MAPE cells with zero truth are
/// excluded and counted; per-station MAPE entries with no valid cell are NaN.
struct EvalReport {
    double rmse = 0.0;
    double mape = 0.0;  // percent
    double mae = 0.0;
    std::vector<double> per_day_rmse;
    std::vector<double> per_day_mape;
    std::vector<double> per_day_mae;
    std::vector<double> per_station_mape;
    std::size_t mape_included = 0;
    std::size_t mape_excluded = 0;
    std::size_t clamped = 0;  // inverse-transform clamps during evaluation
};

namespace detail {

inline EvalReport metrics_impl(const std::vector<const Tensor*>& preds,
                               const std::vector<const Tensor*>& truths) {
    if (preds.empty() || preds.size() != truths.size())
        throw InputError("metrics: prediction/truth lists empty or mismatched");
    const auto& shape = preds.front()->shape();
    if (shape.size() != 2) throw ShapeError("metrics: expected [V,f] tensors");
    const std::size_t v_count = shape[0], f = shape[1];
    for (std::size_t s = 0; s < preds.size(); ++s) {
        if (!preds[s]->same_shape(*truths[s]) || !(preds[s]->shape() == shape))
            throw ShapeError("metrics: shape mismatch between predictions and truths");
    }

    bool any_nonzero_truth = false;
    for (const Tensor* t : truths)
        for (double y : t->data())
            if (y != 0.0) any_nonzero_truth = true;
    if (!any_nonzero_truth) throw DomainError("metrics: all-zero truth, MAPE undefined");

    EvalReport rep;
    rep.per_day_rmse.assign(f, 0.0);
    rep.per_day_mape.assign(f, 0.0);
    rep.per_day_mae.assign(f, 0.0);
    rep.per_station_mape.assign(v_count, 0.0);
    std::vector<std::size_t> day_included(f, 0);
    std::vector<std::size_t> station_included(v_count, 0);
    std::vector<double> day_se(f, 0.0), day_ae(f, 0.0), day_ape(f, 0.0);
    std::vector<double> station_ape(v_count, 0.0);
    double se = 0.0, ae = 0.0, ape = 0.0;

    for (std::size_t s = 0; s < preds.size(); ++s) {
        const Tensor& p = *preds[s];
        const Tensor& y = *truths[s];
        for (std::size_t v = 0; v < v_count; ++v)
            for (std::size_t k = 0; k < f; ++k) {
                const double err = p.at(v, k) - y.at(v, k);
                se += err * err;
                ae += std::fabs(err);
                day_se[k] += err * err;
                day_ae[k] += std::fabs(err);
                if (y.at(v, k) != 0.0) {
                    const double a = std::fabs(err / y.at(v, k));
                    ape += a;
                    day_ape[k] += a;
                    station_ape[v] += a;
                    ++day_included[k];
                    ++station_included[v];
                    ++rep.mape_included;
                } else {
                    ++rep.mape_excluded;
                }
            }
    }

    const double cells = double(preds.size() * v_count);
    rep.rmse = std::sqrt(se / (cells * double(f)));
    rep.mae = ae / (cells * double(f));
    rep.mape = 100.0 * ape / double(rep.mape_included);
    for (std::size_t k = 0; k < f; ++k) {
        rep.per_day_rmse[k] = std::sqrt(day_se[k] / cells);
        rep.per_day_mae[k] = day_ae[k] / cells;
        rep.per_day_mape[k] = day_included[k] > 0
                                  ? 100.0 * day_ape[k] / double(day_included[k])
                                  : std::numeric_limits<double>::quiet_NaN();
    }
    for (std::size_t v = 0; v < v_count; ++v) {
        rep.per_station_mape[v] = station_included[v] > 0
                                      ? 100.0 * station_ape[v] / double(station_included[v])
                                      : std::numeric_limits<double>::quiet_NaN();
    }
    return rep;
}

}  // namespace detail

/// Metrics over one [V,f] prediction against its truth.
inline EvalReport metrics(const Tensor& pred_raw, const Tensor& truth_raw) {
    return detail::metrics_impl({&pred_raw}, {&truth_raw});
}

/// Metrics pooled over several windows (per-day columns aggregate the k-th
/// horizon day across windows).
inline EvalReport metrics_pooled(const std::vector<Tensor>& preds,
                                 const std::vector<Tensor>& truths) {
    std::vector<const Tensor*> p, t;
    for (const auto& x : preds) p.push_back(&x);
    for (const auto& x : truths) t.push_back(&x);
    return detail::metrics_impl(p, t);
}

/// Persistence forecaster: every horizon day repeats the last observed day.
/// Evaluated on the raw scale across all samples of the set.
inline EvalReport naive_baseline(const SampleSet& samples) {
    if (samples.empty()) throw InputError("naive_baseline: empty sample set");
    if (samples.f > samples.h) throw InputError("naive_baseline: requires f <= h");
    std::vector<Tensor> preds;
    preds.reserve(samples.size());
    const std::size_t v_count = samples.targets_raw.front().extent(0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
        Tensor p({v_count, samples.f});
        for (std::size_t v = 0; v < v_count; ++v)
            for (std::size_t k = 0; k < samples.f; ++k) p.at(v, k) = samples.last_day_raw[s][v];
        preds.push_back(std::move(p));
    }
    return metrics_pooled(preds, samples.targets_raw);
}

}  // namespace stflow
