// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "stflow/boxcox.hpp"
#include "support.hpp"

using namespace stflow;

namespace {

FlowPanel make_panel(std::size_t v_count, std::size_t d_count,
                     const std::function<double(std::size_t, std::size_t)>& fill) {
    FlowPanel p;
    for (std::size_t v = 0; v < v_count; ++v) p.stations.push_back("s" + std::to_string(v));
    const Date start = Date::parse("2017-05-01");
    for (std::size_t d = 0; d < d_count; ++d) p.days.push_back(start.plus(int(d)));
    p.values = Tensor({v_count, d_count});
    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t d = 0; d < d_count; ++d) p.values.at(v, d) = fill(v, d);
    return p;
}

// Independent profile log-likelihood used as the grid-search oracle: a
// straight transcription of -n/2 ln(var) + (lambda-1) sum(ln y).
double oracle_loglik(const std::vector<double>& ys, double lambda) {
    std::vector<double> t;
    double slog = 0.0;
    for (double y : ys) {
        slog += std::log(y);
        t.push_back(std::fabs(lambda) < 1e-9 ? std::log(y) : (std::pow(y, lambda) - 1.0) / lambda);
    }
    double mean = 0.0;
    for (double x : t) mean += x;
    mean /= double(t.size());
    double var = 0.0;
    for (double x : t) var += (x - mean) * (x - mean);
    var /= double(t.size());
    return -0.5 * double(t.size()) * std::log(var) + (lambda - 1.0) * slog;
}

double oracle_argmax(const std::vector<double>& ys, const LambdaGrid& grid) {
    double best = -std::numeric_limits<double>::infinity();
    double best_lambda = grid.lo;
    const std::size_t n = std::size_t((grid.hi - grid.lo) / grid.step + 1e-9) + 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double lambda = grid.lo + double(i) * grid.step;
        const double ll = oracle_loglik(ys, lambda);
        if (ll > best) {
            best = ll;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

}  // namespace

TEST_CASE("box-cox forward examples") {
    CHECK(boxcox_forward_one(5.0, 1.0, 0.0) == Catch::Approx(4.0));
    CHECK(boxcox_forward_one(std::exp(1.0), 0.0, 0.0) == Catch::Approx(1.0));
    CHECK(boxcox_forward_one(4.0, 0.5, 0.0) == Catch::Approx(2.0));
    CHECK_THROWS_AS(boxcox_forward_one(0.0, 0.5, 0.0), DomainError);
}

TEST_CASE("box-cox inverse examples") {
    CHECK(boxcox_inverse_one(2.0, 0.5, 0.0) == Catch::Approx(4.0));
    CHECK(boxcox_inverse_one(0.0, 0.0, 0.0) == Catch::Approx(1.0));
    NormalizationState s;
    s.lambda = 0.0;
    s.shift = 1.0;
    CHECK(boxcox_inverse(std::vector<double>{0.0}, s)[0] == Catch::Approx(0.0));
    CHECK_THROWS_AS(boxcox_inverse_one(-3.0, 0.5, 0.0), DomainError);
}

TEST_CASE("box-cox roundtrip and monotonicity properties") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> logy(-2.0, 6.0);
    std::uniform_real_distribution<double> lam(-2.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
        NormalizationState s;
        s.lambda = trial % 10 == 0 ? 0.0 : lam(rng);
        s.shift = trial % 3 == 0 ? 1.0 : 0.0;
        const double y1 = std::exp(logy(rng));
        const double y2 = y1 + std::exp(logy(rng));
        const double z1 = boxcox_forward_one(y1, s.lambda, s.shift);
        const double z2 = boxcox_forward_one(y2, s.lambda, s.shift);
        CHECK(std::fabs(boxcox_inverse_one(z1, s.lambda, s.shift) - y1) <
              1e-8 * std::max(1.0, y1));
        CHECK(z2 > z1);  // strictly increasing in y
    }
}

TEST_CASE("top-K day selection") {
    SECTION("ranked by network-wide maxima, rank order") {
        auto panel = make_panel(3, 10, [](std::size_t v, std::size_t d) {
            double base = 10.0 + double(v);
            if (d == 7) base = 100.0 + double(v);   // global max day
            if (d == 3) base = 50.0 + double(v);    // runner-up
            return base;
        });
        CHECK(select_topk_days(panel, 2) == std::vector<std::size_t>{7, 3});
    }
    SECTION("ties break toward the earlier date") {
        auto panel = make_panel(2, 6, [](std::size_t, std::size_t) { return 5.0; });
        CHECK(select_topk_days(panel, 1) == std::vector<std::size_t>{0});
    }
    SECTION("K = D returns every day") {
        auto panel = make_panel(2, 6, [](std::size_t v, std::size_t d) {
            return 1.0 + double(v) + double(d);
        });
        auto days = select_topk_days(panel, 6);
        std::set<std::size_t> unique(days.begin(), days.end());
        CHECK(unique.size() == 6);
    }
    SECTION("K out of range") {
        auto panel = make_panel(2, 4, [](std::size_t, std::size_t) { return 1.0; });
        CHECK_THROWS_AS(select_topk_days(panel, 0), InputError);
        CHECK_THROWS_AS(select_topk_days(panel, 5), InputError);
    }
}

TEST_CASE("fit_lambda equals the exhaustive grid oracle exactly") {
    const LambdaGrid grid{-2.0, 2.0, 0.01};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(3.0, 0.8);
        auto panel = make_panel(6, 30, [&](std::size_t, std::size_t) {
            return std::exp(gauss(rng));  // lognormal flows
        });
        const std::size_t k = 1 + seed % 5;
        NormalizationState state = fit_lambda(panel, k, grid);

        std::vector<double> restricted;
        for (std::size_t d : select_topk_days(panel, k))
            for (std::size_t v = 0; v < panel.station_count(); ++v)
                restricted.push_back(panel.value(v, d) + state.shift);
        CHECK(state.lambda == oracle_argmax(restricted, grid));
        CHECK(state.shift == 0.0);
        CHECK(state.topk_days.size() == k);
    }
}

TEST_CASE("fit_lambda recovers lambda near 1 for already-normal data") {
    // Needs a healthy coefficient of variation: the profile likelihood is
    // nearly flat in lambda when max/min is close to 1.
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(20.0, 8.0);
    auto panel = make_panel(30, 40, [&](std::size_t, std::size_t) {
        return std::max(0.5, gauss(rng));
    });
    NormalizationState state = fit_lambda(panel, 5, {-2.0, 2.0, 0.01});
    CHECK(std::fabs(state.lambda - 1.0) < 0.5);
}

TEST_CASE("fit_lambda handles zeros with a unit shift") {
    auto panel = make_panel(3, 12, [](std::size_t v, std::size_t d) {
        return v == 0 && d == 2 ? 0.0 : double(10 * (v + 1) + d);
    });
    NormalizationState state = fit_lambda(panel, 3, {-2.0, 2.0, 0.05});
    CHECK(state.shift == 1.0);
    const double z = boxcox_forward_one(0.0, state.lambda, state.shift);
    CHECK(std::fabs(boxcox_inverse_one(z, state.lambda, state.shift)) < 1e-8);
}

TEST_CASE("fit_lambda rejects degenerate panels") {
    auto panel = make_panel(4, 8, [](std::size_t, std::size_t) { return 7.0; });
    CHECK_THROWS_AS(fit_lambda(panel, 3, {-2.0, 2.0, 0.1}), DomainError);
}

TEST_CASE("vital-few detection") {
    SECTION("single dominant station among ten") {
        auto panel = make_panel(10, 6, [](std::size_t v, std::size_t) {
            return v == 4 ? 100.0 : 1.0;
        });
        NormalizationState state;
        state.topk_days = select_topk_days(panel, 3);
        auto vital = detect_vital_few(panel, state);
        CHECK(vital == std::set<std::string>{"s4"});
    }
    SECTION("constant panel yields the empty set") {
        auto panel = make_panel(10, 6, [](std::size_t, std::size_t) { return 3.0; });
        NormalizationState state;
        state.topk_days = {0, 1};
        CHECK(detect_vital_few(panel, state).empty());
    }
    SECTION("two extreme stations are both returned") {
        auto panel = make_panel(30, 6, [](std::size_t v, std::size_t) {
            if (v == 2 || v == 17) return 500.0;
            return 1.0;
        });
        NormalizationState state;
        state.topk_days = {0, 1, 2};
        auto vital = detect_vital_few(panel, state);
        CHECK(vital == std::set<std::string>{"s17", "s2"});
    }
    SECTION("adding a dominant station adds exactly it") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(8.0, 12.0);
        auto base = make_panel(20, 6, [&](std::size_t, std::size_t) { return u(rng); });
        NormalizationState state;
        state.topk_days = {0, 1, 2};
        CHECK(detect_vital_few(base, state).empty());
        auto spiked = base;
        for (std::size_t d = 0; d < 6; ++d) spiked.values.at(11, d) = 1000.0;
        CHECK(detect_vital_few(spiked, state) == std::set<std::string>{"s11"});
    }
    SECTION("fewer than two stations is an error") {
        auto panel = make_panel(1, 4, [](std::size_t, std::size_t) { return 1.0; });
        NormalizationState state;
        state.topk_days = {0};
        CHECK_THROWS_AS(detect_vital_few(panel, state), InputError);
    }
    SECTION("topk_days must be set") {
        auto panel = make_panel(3, 4, [](std::size_t, std::size_t) { return 1.0; });
        CHECK_THROWS_AS(detect_vital_few(panel, NormalizationState{}), InputError);
    }
}

TEST_CASE("normalize_panel names station and day on domain errors") {
    auto panel = make_panel(2, 3, [](std::size_t v, std::size_t d) {
        return v == 1 && d == 2 ? 0.0 : 5.0;
    });
    NormalizationState state;
    state.lambda = 0.5;
    state.shift = 0.0;
    CHECK_THROWS_WITH(normalize_panel(panel, state),
                      Catch::Matchers::ContainsSubstring("s1") &&
                          Catch::Matchers::ContainsSubstring("2017-05-03"));
}
