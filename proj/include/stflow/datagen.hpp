// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stflow/dates.hpp"
#include "stflow/errors.hpp"
#include "stflow/graphs.hpp"
#include "stflow/panel.hpp"

namespace stflow {

/// Parameters of the seeded synthetic highway benchmark: Pareto station base
/// volumes (long tail), weekly shape, weekend/holiday surges, extreme-weather
/// suppression, and geographic neighbor coupling.
struct GenSpec {
    std::size_t v_count = 50;
    std::size_t d_count = 200;
    std::uint64_t seed = 1;
    double alpha = 1.2;          // Pareto shape of base volumes
    double base_scale = 500.0;   // vehicles/day at the Pareto minimum
    double weekend_lo = 1.5;     // per-station weekend/holiday multiplier range
    double weekend_hi = 2.5;
    std::vector<std::size_t> holiday_days;  // day indices
    double weather_prob = 0.05;  // per station-day extreme-weather probability
    double suppression = 0.5;    // flow multiplier on extreme-weather days
    double kappa = 0.3;          // neighbor-coupling strength, in [0,1)
    double noise = 0.08;         // lognormal sigma
    std::size_t knn = 3;
    Date start_date = Date::parse("2017-05-01");

    void validate() const {
        if (v_count < 2) throw ConfigError("generate: V must be at least 2");
        if (d_count == 0) throw ConfigError("generate: days must be positive");
        if (!(alpha > 0.0)) throw ConfigError("generate: alpha must be positive");
        if (!(suppression > 0.0 && suppression <= 1.0))
            throw ConfigError("generate: suppression must be in (0,1]");
        if (!(kappa >= 0.0 && kappa < 1.0))
            throw ConfigError("generate: kappa must be in [0,1)");
        if (!(weekend_lo > 0.0) || weekend_hi < weekend_lo)
            throw ConfigError("generate: bad weekend multiplier range");
        if (noise < 0.0) throw ConfigError("generate: noise must be >= 0");
        for (std::size_t d : holiday_days)
            if (d >= d_count) throw ConfigError("generate: holiday day index out of range");
    }
};

/// Every multiplicative factor applied per station-day, in application order:
///   flow = ((((base * dow) * cal) * wx) * noise) * coupling
/// Replaying the product reproduces the panel bitwise.
struct EffectLog {
    Tensor base;      // [V]
    Tensor dow;       // [V, D] weekday profile
    Tensor cal;       // [V, D] weekend/holiday multiplier
    Tensor wx;        // [V, D] weather suppression
    Tensor noise;     // [V, D]
    Tensor coupling;  // [V, D]

    double replay(std::size_t v, std::size_t d) const {
        return ((((base[v] * dow.at(v, d)) * cal.at(v, d)) * wx.at(v, d)) * noise.at(v, d)) *
               coupling.at(v, d);
    }
};

struct GenResult {
    std::vector<StationProfile> profiles;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    FlowPanel flow;
    ExternalPanel ext;
    std::vector<Date> holidays;
    EffectLog log;
};

namespace detail {

inline std::string station_name(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "s%04zu", i);
    return buf;
}

}  // namespace detail

/// Random planar-ish station layout joined by undirected k-nearest-neighbor
/// edges; components are bridged by their closest station pair so the network
/// is always connected. Mean exit mileage is drawn on the distance scale.
inline std::pair<std::vector<StationProfile>, std::vector<std::pair<std::size_t, std::size_t>>>
gen_network(const GenSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> coord(0.0, 100.0);

    std::vector<StationProfile> profiles(spec.v_count);
    for (std::size_t i = 0; i < spec.v_count; ++i) {
        profiles[i].id = detail::station_name(i);
        profiles[i].x = coord(rng);
        profiles[i].y = coord(rng);
    }
    std::uniform_real_distribution<double> mil(0.25, 0.75);
    for (std::size_t i = 0; i < spec.v_count; ++i) {
        double mean_dist = 0.0;
        for (std::size_t j = 0; j < spec.v_count; ++j)
            if (j != i) mean_dist += station_distance(profiles[i], profiles[j]);
        mean_dist /= double(spec.v_count - 1);
        profiles[i].mileage = mil(rng) * mean_dist;
    }

    std::set<std::pair<std::size_t, std::size_t>> edge_set;
    auto add_edge = [&](std::size_t a, std::size_t b) {
        edge_set.insert({std::min(a, b), std::max(a, b)});
    };
    const std::size_t k = std::min(spec.knn, spec.v_count - 1);
    for (std::size_t i = 0; i < spec.v_count; ++i) {
        std::vector<std::pair<double, std::size_t>> near;
        for (std::size_t j = 0; j < spec.v_count; ++j)
            if (j != i) near.emplace_back(station_distance(profiles[i], profiles[j]), j);
        std::sort(near.begin(), near.end());
        for (std::size_t t = 0; t < k; ++t) add_edge(i, near[t].second);
    }

    // Bridge components until the graph is a single one.
    std::vector<std::size_t> comp(spec.v_count);
    auto relabel = [&]() {
        for (std::size_t i = 0; i < spec.v_count; ++i) comp[i] = i;
        bool changed = true;
        while (changed) {
            changed = false;
            for (const auto& [a, b] : edge_set) {
                const std::size_t c = std::min(comp[a], comp[b]);
                if (comp[a] != c || comp[b] != c) {
                    comp[a] = comp[b] = c;
                    changed = true;
                }
            }
        }
        std::set<std::size_t> labels(comp.begin(), comp.end());
        return labels.size();
    };
    while (relabel() > 1) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<std::size_t, std::size_t> bridge{0, 0};
        for (std::size_t i = 0; i < spec.v_count; ++i)
            for (std::size_t j = i + 1; j < spec.v_count; ++j)
                if (comp[i] != comp[j]) {
                    const double d = station_distance(profiles[i], profiles[j]);
                    if (d < best) {
                        best = d;
                        bridge = {i, j};
                    }
                }
        add_edge(bridge.first, bridge.second);
    }

    return {std::move(profiles),
            {edge_set.begin(), edge_set.end()}};
}

/// Flows with known ground-truth structure. Factor order matters for the
/// bitwise replay invariant and is documented on EffectLog.
inline GenResult gen_flows(const GenSpec& spec, std::vector<StationProfile> profiles,
                           std::vector<std::pair<std::size_t, std::size_t>> edges) {
    spec.validate();
    const std::size_t v_count = spec.v_count, d_count = spec.d_count;
    std::mt19937_64 rng(spec.seed + 1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    GenResult out;
    out.profiles = std::move(profiles);
    out.edges = std::move(edges);

    out.flow.stations.resize(v_count);
    for (std::size_t v = 0; v < v_count; ++v) out.flow.stations[v] = out.profiles[v].id;
    out.flow.days.resize(d_count);
    for (std::size_t d = 0; d < d_count; ++d) out.flow.days[d] = spec.start_date.plus(int(d));
    for (std::size_t d : spec.holiday_days) out.holidays.push_back(out.flow.days[d]);

    EffectLog& log = out.log;
    log.base = Tensor({v_count});
    log.dow = Tensor({v_count, d_count});
    log.cal = Tensor({v_count, d_count});
    log.wx = Tensor({v_count, d_count});
    log.noise = Tensor({v_count, d_count});
    log.coupling = Tensor({v_count, d_count}, 1.0);

    // Pareto(alpha) base volumes via inverse CDF, minimum at base_scale.
    for (std::size_t v = 0; v < v_count; ++v) {
        const double u = std::max(uni(rng), 1e-12);
        log.base[v] = spec.base_scale / std::pow(u, 1.0 / spec.alpha);
    }
    std::vector<double> weekend_mult(v_count);
    for (std::size_t v = 0; v < v_count; ++v)
        weekend_mult[v] = spec.weekend_lo + (spec.weekend_hi - spec.weekend_lo) * uni(rng);

    static constexpr double kDowProfile[7] = {1.00, 0.96, 0.94, 0.97, 1.08, 1.0, 1.0};
    std::set<std::size_t> holiday_idx(spec.holiday_days.begin(), spec.holiday_days.end());

    out.ext.weather = Tensor({v_count, d_count});
    out.ext.calendar.assign(d_count, 0);
    for (std::size_t d = 0; d < d_count; ++d) {
        const bool holiday = holiday_idx.count(d) > 0;
        const bool weekend = out.flow.days[d].is_weekend();
        out.ext.calendar[d] = holiday ? 1 : (weekend ? 2 : 0);
    }

    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t d = 0; d < d_count; ++d) {
            log.dow.at(v, d) = kDowProfile[out.flow.days[d].weekday()];
            const bool burst = out.ext.calendar[d] != 0;  // weekend or holiday
            log.cal.at(v, d) = burst ? weekend_mult[v] : 1.0;
            const bool extreme = uni(rng) < spec.weather_prob;
            out.ext.weather.at(v, d) = extreme ? 1.0 : 0.0;
            log.wx.at(v, d) = extreme ? spec.suppression : 1.0;
            log.noise.at(v, d) = std::exp(spec.noise * gauss(rng));
        }

    // Pre-coupling flows, then couple each station to its geographic
    // neighbors' relative deviation from their own mean.
    Tensor f0({v_count, d_count});
    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t d = 0; d < d_count; ++d)
            f0.at(v, d) =
                (((log.base[v] * log.dow.at(v, d)) * log.cal.at(v, d)) * log.wx.at(v, d)) *
                log.noise.at(v, d);

    if (spec.kappa > 0.0) {
        std::vector<std::vector<std::size_t>> neighbors(v_count);
        for (const auto& [a, b] : out.edges) {
            neighbors[a].push_back(b);
            neighbors[b].push_back(a);
        }
        std::vector<double> station_mean(v_count, 0.0);
        for (std::size_t v = 0; v < v_count; ++v) {
            for (std::size_t d = 0; d < d_count; ++d) station_mean[v] += f0.at(v, d);
            station_mean[v] /= double(d_count);
        }
        for (std::size_t v = 0; v < v_count; ++v) {
            if (neighbors[v].empty()) continue;
            for (std::size_t d = 0; d < d_count; ++d) {
                double dev = 0.0;
                for (std::size_t j : neighbors[v]) dev += f0.at(j, d) / station_mean[j] - 1.0;
                dev /= double(neighbors[v].size());
                log.coupling.at(v, d) = 1.0 + spec.kappa * dev;
            }
        }
    }

    out.flow.values = Tensor({v_count, d_count});
    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t d = 0; d < d_count; ++d)
            out.flow.values.at(v, d) = f0.at(v, d) * log.coupling.at(v, d);
    out.flow.validate();
    return out;
}

inline GenResult generate_dataset(const GenSpec& spec) {
    auto [profiles, edges] = gen_network(spec);
    return gen_flows(spec, std::move(profiles), std::move(edges));
}

}  // namespace stflow
