// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stflow/dates.hpp"
#include "stflow/errors.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

/// Daily flow values for V stations over D contiguous days (single feature).
struct FlowPanel {
    std::vector<std::string> stations;  // ordered station ids
    std::vector<Date> days;             // strictly increasing, contiguous
    Tensor values;                      // [V, D], non-negative

    std::size_t station_count() const { return stations.size(); }
    std::size_t day_count() const { return days.size(); }

    double value(std::size_t v, std::size_t d) const { return values.at(v, d); }

    void validate() const {
        if (stations.empty() || days.empty()) throw InputError("flow panel: empty panel");
        if (values.rank() != 2 || values.extent(0) != stations.size() ||
            values.extent(1) != days.size()) {
            throw ShapeError("flow panel: values " + values.shape_string() + " do not match " +
                             std::to_string(stations.size()) + " stations x " +
                             std::to_string(days.size()) + " days");
        }
        for (std::size_t i = 1; i < days.size(); ++i) {
            if (days[i].days_since_epoch() != days[i - 1].days_since_epoch() + 1)
                throw DateError("flow panel: days not contiguous at " + days[i].iso());
        }
        for (double v : values.data())
            if (!(v >= 0.0)) throw InputError("flow panel: negative or non-finite flow value");
    }

    /// Copy of the first `d` days (used to fit normalization on the training
    /// span only).
    FlowPanel prefix_days(std::size_t d) const {
        if (d == 0 || d > day_count()) throw InputError("flow panel: bad prefix length");
        FlowPanel out;
        out.stations = stations;
        out.days.assign(days.begin(), days.begin() + d);
        out.values = Tensor({station_count(), d});
        for (std::size_t v = 0; v < station_count(); ++v)
            for (std::size_t j = 0; j < d; ++j) out.values.at(v, j) = values.at(v, j);
        return out;
    }
};

/// External factors aligned with a FlowPanel: per-station-day weather label
/// q in {0,1} and a per-day calendar label r in {0,1,2} shared by stations.
struct ExternalPanel {
    Tensor weather;             // [V, D], entries 0/1
    std::vector<int> calendar;  // [D], entries 0/1/2
};

// ---------------------------------------------------------------------------
// External-factor encoding
// ---------------------------------------------------------------------------

namespace detail {

inline std::string normalize_token(const std::string& raw) {
    std::string t;
    t.reserve(raw.size());
    for (char c : raw) {
        if (c == ' ') {
            t += '_';
        } else if (c >= 'A' && c <= 'Z') {
            t += char(c - 'A' + 'a');
        } else {
            t += c;
        }
    }
    return t;
}

}  // namespace detail

inline bool is_extreme_weather(const std::string& token) {
    const std::string t = detail::normalize_token(token);
    return t == "heavy_rain" || t == "heavy_fog" || t == "strong_wind" || t == "heavy_snow";
}

inline bool is_known_weather(const std::string& token) {
    static const std::set<std::string> known = {
        "clear", "cloudy", "overcast", "rain",       "drizzle",   "snow",
        "fog",   "wind",   "heavy_rain", "heavy_fog", "strong_wind", "heavy_snow"};
    return known.count(detail::normalize_token(token)) > 0;
}

/// Labels one station-day: q = 1 for extreme weather, r = 1 on holidays,
/// r = 2 on non-holiday weekends, r = 0 otherwise. Holiday wins over weekend.
/// Unknown weather tokens raise in strict mode and map to q = 0 otherwise.
inline std::pair<int, int> encode_external(const std::string& condition, Date date,
                                           const std::set<Date>& holidays, bool strict = true) {
    int q = 0;
    if (is_extreme_weather(condition)) {
        q = 1;
    } else if (!is_known_weather(condition)) {
        if (strict) throw InputError("weather: unknown condition token '" + condition + "'");
        q = 0;
    }
    int r = 0;
    if (holidays.count(date)) {
        r = 1;
    } else if (date.is_weekend()) {
        r = 2;
    }
    return {q, r};
}

// ---------------------------------------------------------------------------
// Supervised windowing
// ---------------------------------------------------------------------------

/// Sliding supervised samples cut from a panel: h input days, f target days.
/// Inputs are on the model (normalized) scale; targets are kept on both the
/// raw scale (metrics) and the model scale (loss).
struct SampleSet {
    std::size_t h = 0, f = 0;
    std::vector<Tensor> inputs;        // each [V, h, 1], model scale
    std::vector<Tensor> externals;     // each [V, h, 2]
    std::vector<Tensor> targets_raw;   // each [V, f]
    std::vector<Tensor> targets_model; // each [V, f]
    std::vector<Tensor> last_day_raw;  // each [V], raw flow on the last input day
    std::vector<std::size_t> first_target_day;  // panel day index of target day 1

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }

    SampleSet slice(const std::vector<std::size_t>& idx) const {
        SampleSet out;
        out.h = h;
        out.f = f;
        for (std::size_t i : idx) {
            out.inputs.push_back(inputs[i]);
            out.externals.push_back(externals[i]);
            out.targets_raw.push_back(targets_raw[i]);
            out.targets_model.push_back(targets_model[i]);
            out.last_day_raw.push_back(last_day_raw[i]);
            out.first_target_day.push_back(first_target_day[i]);
        }
        return out;
    }
};

/// Cuts N = D - h - f + 1 contiguous windows. `model_scale` is the [V,D]
/// matrix the model consumes (Box-Cox normalized, or the raw values for the
/// nonT variant).
inline SampleSet make_windows(const FlowPanel& raw, const Tensor& model_scale,
                              const ExternalPanel& ext, std::size_t h, std::size_t f) {
    raw.validate();
    const std::size_t v_count = raw.station_count();
    const std::size_t d_count = raw.day_count();
    if (h == 0 || f == 0) throw InputError("make_windows: h and f must be positive");
    if (d_count < h + f)
        throw WindowError("make_windows: need at least h+f=" + std::to_string(h + f) +
                          " days, panel has " + std::to_string(d_count));
    if (!model_scale.same_shape(raw.values))
        throw ShapeError("make_windows: model-scale matrix " + model_scale.shape_string() +
                         " does not match panel " + raw.values.shape_string());

    SampleSet set;
    set.h = h;
    set.f = f;
    const std::size_t n = d_count - h - f + 1;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor in({v_count, h, 1});
        Tensor ex({v_count, h, 2});
        Tensor traw({v_count, f});
        Tensor tmod({v_count, f});
        Tensor last({v_count});
        for (std::size_t v = 0; v < v_count; ++v) {
            for (std::size_t t = 0; t < h; ++t) {
                in.at(v, t, 0) = model_scale.at(v, i + t);
                ex.at(v, t, 0) = ext.weather.at(v, i + t);
                ex.at(v, t, 1) = double(ext.calendar[i + t]);
            }
            for (std::size_t k = 0; k < f; ++k) {
                traw.at(v, k) = raw.values.at(v, i + h + k);
                tmod.at(v, k) = model_scale.at(v, i + h + k);
            }
            last[v] = raw.values.at(v, i + h - 1);
        }
        set.inputs.push_back(std::move(in));
        set.externals.push_back(std::move(ex));
        set.targets_raw.push_back(std::move(traw));
        set.targets_model.push_back(std::move(tmod));
        set.last_day_raw.push_back(std::move(last));
        set.first_target_day.push_back(i + h);
    }
    return set;
}

}  // namespace stflow
