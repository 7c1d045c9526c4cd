// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "stflow/errors.hpp"
#include "stflow/panel.hpp"

namespace stflow {

// Lambda magnitudes below this use the logarithmic branch; the power branch
// is numerically unusable that close to zero.
inline constexpr double kBoxCoxLambdaZero = 1e-9;

/// Fitted normalization parameters plus the long-tail bookkeeping that comes
/// out of the same pass (peak days used for the fit, vital-few stations).
/// center/spread standardize the transformed values for the model; they are
/// an affine map, so the training objective is the documented Box-Cox-scale
/// MSE up to a constant factor while staying numerically well conditioned
/// for strongly negative lambda.
struct NormalizationState {
    double lambda = 1.0;
    double shift = 0.0;  // added before the transform; > 0 whenever zeros occur
    double center = 0.0;  // training-span mean of the transformed values
    double spread = 1.0;  // training-span std of the transformed values
    std::vector<std::size_t> topk_days;   // day indices, rank order
    std::set<std::string> vital_few;      // station ids
};

// ---------------------------------------------------------------------------
// Forward / inverse transform
// ---------------------------------------------------------------------------

inline double boxcox_forward_one(double y, double lambda, double shift) {
    const double x = y + shift;
    if (!(x > 0.0))
        throw DomainError("box-cox: non-positive shifted value " + std::to_string(x));
    if (std::fabs(lambda) < kBoxCoxLambdaZero) return std::log(x);
    return (std::pow(x, lambda) - 1.0) / lambda;
}

inline double boxcox_inverse_one(double z, double lambda, double shift) {
    if (std::fabs(lambda) < kBoxCoxLambdaZero) return std::exp(z) - shift;
    const double base = 1.0 + lambda * z;
    if (!(base > 0.0))
        throw DomainError("box-cox inverse: 1 + lambda*z = " + std::to_string(base) +
                          " outside invertible region");
    return std::pow(base, 1.0 / lambda) - shift;
}

inline std::vector<double> boxcox_forward(const std::vector<double>& y,
                                          const NormalizationState& state) {
    std::vector<double> out;
    out.reserve(y.size());
    for (double v : y) out.push_back(boxcox_forward_one(v, state.lambda, state.shift));
    return out;
}

inline std::vector<double> boxcox_inverse(const std::vector<double>& z,
                                          const NormalizationState& state) {
    std::vector<double> out;
    out.reserve(z.size());
    for (double v : z) out.push_back(boxcox_inverse_one(v, state.lambda, state.shift));
    return out;
}

/// Inverse that clamps predictions fallen outside the invertible region to
/// zero flow instead of erroring mid-evaluation; increments `clamped`.
inline double boxcox_inverse_clamped(double z, const NormalizationState& state,
                                     std::size_t& clamped) {
    if (std::fabs(state.lambda) >= kBoxCoxLambdaZero &&
        !(1.0 + state.lambda * z > 0.0)) {
        ++clamped;
        return 0.0;
    }
    const double y = boxcox_inverse_one(z, state.lambda, state.shift);
    if (y < 0.0) {
        ++clamped;
        return 0.0;
    }
    return y;
}

/// Raw flow -> the standardized scale the model trains on. `use_boxcox` is
/// false for the nonT variant, which standardizes the raw values directly.
inline double to_model_scale(double y, const NormalizationState& state, bool use_boxcox) {
    const double z = use_boxcox ? boxcox_forward_one(y, state.lambda, state.shift) : y;
    return (z - state.center) / state.spread;
}

/// Model-scale prediction -> raw flow, clamping out-of-domain or negative
/// results to zero flow and counting them.
inline double from_model_scale_clamped(double p, const NormalizationState& state,
                                       bool use_boxcox, std::size_t& clamped) {
    const double z = state.center + state.spread * p;
    if (!use_boxcox) {
        if (z < 0.0) {
            ++clamped;
            return 0.0;
        }
        return z;
    }
    return boxcox_inverse_clamped(z, state, clamped);
}

/// Applies the forward transform to a whole panel; domain errors name the
/// offending station and day.
inline Tensor normalize_panel(const FlowPanel& panel, const NormalizationState& state) {
    panel.validate();
    Tensor out(panel.values.shape());
    for (std::size_t v = 0; v < panel.station_count(); ++v)
        for (std::size_t d = 0; d < panel.day_count(); ++d) {
            try {
                out.at(v, d) = boxcox_forward_one(panel.value(v, d), state.lambda, state.shift);
            } catch (const DomainError& e) {
                throw DomainError(std::string(e.what()) + " at station " + panel.stations[v] +
                                  ", day " + panel.days[d].iso());
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Top-K peak days and lambda fitting
// ---------------------------------------------------------------------------

/// Days ranked by their network-wide maximum single-station flow, highest
/// first; ties broken by the earlier date. Returns the top K day indices.
inline std::vector<std::size_t> select_topk_days(const FlowPanel& panel, std::size_t k) {
    panel.validate();
    if (k == 0 || k > panel.day_count())
        throw InputError("select_topk_days: K must be in 1..D");
    std::vector<std::size_t> order(panel.day_count());
    for (std::size_t d = 0; d < order.size(); ++d) order[d] = d;
    std::vector<double> day_max(panel.day_count(), 0.0);
    for (std::size_t d = 0; d < panel.day_count(); ++d) {
        double m = panel.value(0, d);
        for (std::size_t v = 1; v < panel.station_count(); ++v)
            m = std::max(m, panel.value(v, d));
        day_max[d] = m;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return day_max[a] > day_max[b]; });
    order.resize(k);
    return order;
}

/// Box-Cox profile log-likelihood of `values` (already shifted positive)
/// at a given lambda, up to an additive constant:
///   -n/2 * ln(sigma_hat^2(lambda)) + (lambda - 1) * sum(ln y_i).
inline double boxcox_loglik(const std::vector<double>& values, double lambda) {
    const std::size_t n = values.size();
    double sum_log = 0.0;
    double mean = 0.0;
    std::vector<double> transformed(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(values[i] > 0.0))
            throw DomainError("box-cox likelihood: non-positive value");
        sum_log += std::log(values[i]);
        transformed[i] = std::fabs(lambda) < kBoxCoxLambdaZero
                             ? std::log(values[i])
                             : (std::pow(values[i], lambda) - 1.0) / lambda;
        mean += transformed[i];
    }
    mean /= double(n);
    double var = 0.0;
    for (double t : transformed) var += (t - mean) * (t - mean);
    var /= double(n);
    if (!(var > 0.0))
        throw DomainError("box-cox likelihood: degenerate (zero variance) sample");
    return -0.5 * double(n) * std::log(var) + (lambda - 1.0) * sum_log;
}

struct LambdaGrid {
    double lo = -2.0;
    double hi = 2.0;
    double step = 0.01;

    std::vector<double> points() const {
        if (!(step > 0.0) || hi < lo) throw ConfigError("lambda grid: empty or invalid range");
        std::vector<double> pts;
        const std::size_t n = std::size_t((hi - lo) / step + 1e-9) + 1;
        for (std::size_t i = 0; i < n; ++i) pts.push_back(lo + double(i) * step);
        return pts;
    }
};

/// Fits a single network-wide lambda by grid search over the profile
/// log-likelihood, restricted to the values observed on the top-K peak days.
/// Ties keep the first (lowest) grid point. shift = 1 when the panel contains
/// zeros, else 0.
inline NormalizationState fit_lambda(const FlowPanel& panel, std::size_t k,
                                     const LambdaGrid& grid = {}) {
    NormalizationState state;
    state.topk_days = select_topk_days(panel, k);

    bool any_zero = false;
    for (double v : panel.values.data())
        if (v == 0.0) any_zero = true;
    state.shift = any_zero ? 1.0 : 0.0;

    std::vector<double> restricted;
    restricted.reserve(panel.station_count() * state.topk_days.size());
    for (std::size_t d : state.topk_days)
        for (std::size_t v = 0; v < panel.station_count(); ++v)
            restricted.push_back(panel.value(v, d) + state.shift);

    const double first = restricted.front();
    bool all_equal = true;
    for (double v : restricted)
        if (v != first) all_equal = false;
    if (all_equal)
        throw DomainError("fit_lambda: all restricted values identical; lambda undefined");

    const auto points = grid.points();
    double best_ll = -std::numeric_limits<double>::infinity();
    double best_lambda = points.front();
    for (double lambda : points) {
        const double ll = boxcox_loglik(restricted, lambda);
        if (ll > best_ll) {
            best_ll = ll;
            best_lambda = lambda;
        }
    }
    state.lambda = best_lambda;
    return state;
}

// ---------------------------------------------------------------------------
// Vital-few detection
// ---------------------------------------------------------------------------

/// Flags stations whose mean flow over the top-K days reaches mean + 3*std of
/// all stations' means over those days (population std, inclusive boundary:
/// a single outlier among V equal stations has z = sqrt(V-1), exactly 3 at
/// V = 10, so a strict comparison could never fire there).
inline std::set<std::string> detect_vital_few(const FlowPanel& panel,
                                              const NormalizationState& state) {
    panel.validate();
    if (state.topk_days.empty()) throw InputError("detect_vital_few: topk_days not set");
    if (panel.station_count() < 2)
        throw InputError("detect_vital_few: need at least 2 stations");

    const std::size_t v_count = panel.station_count();
    std::vector<double> means(v_count, 0.0);
    for (std::size_t v = 0; v < v_count; ++v) {
        double s = 0.0;
        for (std::size_t d : state.topk_days) s += panel.value(v, d);
        means[v] = s / double(state.topk_days.size());
    }
    double mu = 0.0;
    for (double m : means) mu += m;
    mu /= double(v_count);
    double var = 0.0;
    for (double m : means) var += (m - mu) * (m - mu);
    var /= double(v_count);
    const double sigma = std::sqrt(var);

    std::set<std::string> vital;
    if (sigma == 0.0) return vital;  // all stations equal
    for (std::size_t v = 0; v < v_count; ++v)
        if (means[v] - mu >= 3.0 * sigma) vital.insert(panel.stations[v]);
    return vital;
}

}  // namespace stflow
