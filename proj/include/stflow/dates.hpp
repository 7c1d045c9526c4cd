// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>

#include "stflow/errors.hpp"

namespace stflow {

/// Calendar day stored as a count of days since 1970-01-01.
class Date {
public:
    Date() = default;
    explicit Date(std::int32_t days_since_epoch) : days_(days_since_epoch) {}

    /// Strict ISO `YYYY-MM-DD` parse; rejects malformed or invalid dates.
    static Date parse(const std::string& s) {
        if (s.size() != 10 || s[4] != '-' || s[7] != '-')
            throw InputError("date: expected YYYY-MM-DD, got '" + s + "'");
        int y = 0, m = 0, d = 0;
        auto field = [&](std::size_t off, std::size_t len, int& out) {
            auto res = std::from_chars(s.data() + off, s.data() + off + len, out);
            return res.ec == std::errc() && res.ptr == s.data() + off + len;
        };
        if (!field(0, 4, y) || !field(5, 2, m) || !field(8, 2, d))
            throw InputError("date: expected YYYY-MM-DD, got '" + s + "'");
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                              std::chrono::day{unsigned(d)}};
        if (!ymd.ok()) throw InputError("date: invalid calendar day '" + s + "'");
        return Date(std::chrono::sys_days(ymd).time_since_epoch().count());
    }

    std::string iso() const {
        const std::chrono::year_month_day ymd{
            std::chrono::sys_days{std::chrono::days{days_}}};
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                      unsigned(ymd.day()));
        return buf;
    }

    Date plus(int n) const { return Date(days_ + n); }

    /// ISO weekday index: 0 = Monday ... 6 = Sunday.
    int weekday() const {
        const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{days_}}};
        return int(wd.iso_encoding()) - 1;
    }

    bool is_weekend() const { return weekday() >= 5; }

    std::int32_t days_since_epoch() const { return days_; }

    auto operator<=>(const Date&) const = default;

private:
    std::int32_t days_ = 0;
};

}  // namespace stflow
