// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stflow/dates.hpp"
#include "stflow/errors.hpp"
#include "stflow/graphs.hpp"
#include "stflow/panel.hpp"

namespace stflow {
namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw CsvError("invalid number '" + s + "'", line);
    return v;
}

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/// Reads a whole CSV with a mandatory exact header; returns data rows with
/// their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_rows(
    const std::string& path, const std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open '" + path + "'", 0);
    std::string line;
    if (!std::getline(in, line)) throw CsvError("'" + path + "' is empty", 0);
    if (split_line(line) != header) {
        std::string want;
        for (std::size_t i = 0; i < header.size(); ++i) want += (i ? "," : "") + header[i];
        throw CsvError("'" + path + "': expected header '" + want + "'", 1);
    }
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line);
        if (fields.size() != header.size())
            throw CsvError("'" + path + "': expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(fields.size()),
                           lineno);
        rows.emplace_back(lineno, std::move(fields));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Readers for the documented file formats
// ---------------------------------------------------------------------------

/// `station_id,date,flow` long form, pivoted to a dense [V,D] panel.
/// Stations are ordered lexicographically; days must form a contiguous range
/// and every (station, day) cell must be present exactly once.
inline FlowPanel load_flows(const std::string& path) {
    const auto rows = read_rows(path, {"station_id", "date", "flow"});
    if (rows.empty()) throw CsvError("'" + path + "': no data rows", 0);

    std::set<std::string> station_set;
    std::set<Date> day_set;
    struct Cell {
        std::string station;
        Date day;
        double flow;
        std::size_t line;
    };
    std::vector<Cell> cells;
    cells.reserve(rows.size());
    for (const auto& [lineno, f] : rows) {
        Date day;
        try {
            day = Date::parse(f[1]);
        } catch (const InputError& e) {
            throw CsvError(std::string(e.what()), lineno);
        }
        const double flow = parse_double(f[2], lineno);
        if (!(flow >= 0.0)) throw CsvError("negative flow '" + f[2] + "'", lineno);
        station_set.insert(f[0]);
        day_set.insert(day);
        cells.push_back({f[0], day, flow, lineno});
    }

    FlowPanel panel;
    panel.stations.assign(station_set.begin(), station_set.end());
    panel.days.assign(day_set.begin(), day_set.end());
    for (std::size_t i = 1; i < panel.days.size(); ++i)
        if (panel.days[i].days_since_epoch() != panel.days[i - 1].days_since_epoch() + 1)
            throw DateError("'" + path + "': dates not contiguous around " +
                            panel.days[i].iso());

    std::map<std::string, std::size_t> station_index;
    for (std::size_t i = 0; i < panel.stations.size(); ++i)
        station_index[panel.stations[i]] = i;
    const std::int32_t first_day = panel.days.front().days_since_epoch();

    panel.values = Tensor({panel.stations.size(), panel.days.size()},
                          -1.0);  // sentinel for missing cells
    for (const auto& c : cells) {
        const std::size_t v = station_index[c.station];
        const std::size_t d = std::size_t(c.day.days_since_epoch() - first_day);
        if (panel.values.at(v, d) >= 0.0)
            throw CsvError("duplicate cell for " + c.station + " on " + c.day.iso(), c.line);
        panel.values.at(v, d) = c.flow;
    }
    for (std::size_t v = 0; v < panel.stations.size(); ++v)
        for (std::size_t d = 0; d < panel.days.size(); ++d)
            if (panel.values.at(v, d) < 0.0)
                throw CsvError("missing flow for " + panel.stations[v] + " on " +
                                   panel.days[d].iso(),
                               0);
    panel.validate();
    return panel;
}

/// `station_id,x,y,mean_mileage`, reordered to match the panel's stations.
inline std::vector<StationProfile> load_profiles(const std::string& path,
                                                 const std::vector<std::string>& stations) {
    const auto rows = read_rows(path, {"station_id", "x", "y", "mean_mileage"});
    std::map<std::string, StationProfile> by_id;
    for (const auto& [lineno, f] : rows) {
        if (by_id.count(f[0])) throw CsvError("duplicate station profile '" + f[0] + "'", lineno);
        StationProfile p;
        p.id = f[0];
        p.x = parse_double(f[1], lineno);
        p.y = parse_double(f[2], lineno);
        p.mileage = parse_double(f[3], lineno);
        if (!(p.mileage > 0.0)) throw CsvError("mileage must be positive for '" + f[0] + "'", lineno);
        by_id.emplace(f[0], std::move(p));
    }
    std::vector<StationProfile> out;
    out.reserve(stations.size());
    for (const auto& id : stations) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw CsvError("'" + path + "': no profile for station '" + id + "'", 0);
        out.push_back(it->second);
    }
    return out;
}

/// `from_id,to_id` resolved against the panel's station order.
inline std::vector<std::pair<std::size_t, std::size_t>> load_edges(
    const std::string& path, const std::vector<std::string>& stations) {
    const auto rows = read_rows(path, {"from_id", "to_id"});
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < stations.size(); ++i) index[stations[i]] = i;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    edges.reserve(rows.size());
    for (const auto& [lineno, f] : rows) {
        const auto a = index.find(f[0]);
        const auto b = index.find(f[1]);
        if (a == index.end()) throw CsvError("unknown station '" + f[0] + "'", lineno);
        if (b == index.end()) throw CsvError("unknown station '" + f[1] + "'", lineno);
        edges.emplace_back(a->second, b->second);
    }
    return edges;
}

/// `station_id,date,condition` with the controlled weather vocabulary.
/// Rows outside the panel's day range are ignored; missing station-days
/// default to normal weather.
inline Tensor load_weather(const std::string& path, const std::vector<std::string>& stations,
                           const std::vector<Date>& days, bool strict) {
    const auto rows = read_rows(path, {"station_id", "date", "condition"});
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < stations.size(); ++i) index[stations[i]] = i;
    const std::int32_t first = days.front().days_since_epoch();
    const std::int32_t last = days.back().days_since_epoch();

    Tensor weather({stations.size(), days.size()}, 0.0);
    for (const auto& [lineno, f] : rows) {
        const auto it = index.find(f[0]);
        if (it == index.end()) throw CsvError("unknown station '" + f[0] + "'", lineno);
        Date day;
        try {
            day = Date::parse(f[1]);
        } catch (const InputError& e) {
            throw CsvError(std::string(e.what()), lineno);
        }
        if (day.days_since_epoch() < first || day.days_since_epoch() > last) continue;
        int q = 0;
        try {
            q = is_extreme_weather(f[2]) ? 1 : (is_known_weather(f[2]) ? 0 : -1);
            if (q < 0) {
                if (strict) throw InputError("weather: unknown condition token '" + f[2] + "'");
                q = 0;
            }
        } catch (const InputError& e) {
            throw CsvError(std::string(e.what()), lineno);
        }
        weather.at(it->second, std::size_t(day.days_since_epoch() - first)) = double(q);
    }
    return weather;
}

/// One ISO date per line; blank lines are skipped.
inline std::set<Date> load_holidays(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open '" + path + "'", 0);
    std::set<Date> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        try {
            out.insert(Date::parse(line));
        } catch (const InputError& e) {
            throw CsvError(std::string(e.what()), lineno);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Writers (used by the generator and the CLI)
// ---------------------------------------------------------------------------

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    return out;
}

inline void write_flows(const std::string& path, const FlowPanel& panel) {
    auto out = open_out(path);
    out << "station_id,date,flow\n";
    for (std::size_t v = 0; v < panel.station_count(); ++v)
        for (std::size_t d = 0; d < panel.day_count(); ++d)
            out << panel.stations[v] << ',' << panel.days[d].iso() << ','
                << format_double(panel.value(v, d)) << '\n';
}

inline void write_profiles(const std::string& path, const std::vector<StationProfile>& profiles) {
    auto out = open_out(path);
    out << "station_id,x,y,mean_mileage\n";
    for (const auto& p : profiles)
        out << p.id << ',' << format_double(p.x) << ',' << format_double(p.y) << ','
            << format_double(p.mileage) << '\n';
}

inline void write_edges(const std::string& path,
                        const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                        const std::vector<StationProfile>& profiles) {
    auto out = open_out(path);
    out << "from_id,to_id\n";
    for (const auto& [a, b] : edges) out << profiles[a].id << ',' << profiles[b].id << '\n';
}

inline void write_weather(const std::string& path, const FlowPanel& panel,
                          const Tensor& weather) {
    auto out = open_out(path);
    out << "station_id,date,condition\n";
    for (std::size_t v = 0; v < panel.station_count(); ++v)
        for (std::size_t d = 0; d < panel.day_count(); ++d)
            out << panel.stations[v] << ',' << panel.days[d].iso() << ','
                << (weather.at(v, d) != 0.0 ? "heavy_rain" : "clear") << '\n';
}

inline void write_holidays(const std::string& path, const std::vector<Date>& holidays) {
    auto out = open_out(path);
    for (const auto& d : holidays) out << d.iso() << '\n';
}

}  // namespace csv
}  // namespace stflow
