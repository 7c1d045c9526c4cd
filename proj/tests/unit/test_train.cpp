// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "stflow/datagen.hpp"
#include "stflow/metrics.hpp"
#include "stflow/pipeline.hpp"
#include "stflow/train.hpp"
#include "support.hpp"

using namespace stflow;
using testsupport::bitwise_equal;
using testsupport::random_tensor;

namespace {

MstgcnModel tiny_model(Variant variant = Variant::full, std::uint64_t seed = 3) {
    ModelConfig cfg;
    cfg.v_count = 4;
    cfg.h = 5;
    cfg.f = 1;
    cfg.m = 2;
    cfg.c_out = 4;
    cfg.c_sout = 2;
    cfg.seed = seed;
    cfg.variant = variant;
    Tensor w({4, 4}, 0.0);
    for (std::size_t i = 0; i + 1 < 4; ++i) w.at(i, i + 1) = w.at(i + 1, i) = 1.0;
    return MstgcnModel(cfg, propagation_matrix(w), propagation_matrix(w));
}

SampleSet tiny_samples(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SampleSet s;
    s.h = 5;
    s.f = 1;
    for (std::size_t i = 0; i < n; ++i) {
        s.inputs.push_back(random_tensor({4, 5, 1}, rng, 0.2, 1.0));
        s.externals.push_back(random_tensor({4, 5, 2}, rng, 0.0, 2.0));
        Tensor t = random_tensor({4, 1}, rng, 0.2, 1.0);
        s.targets_model.push_back(t);
        s.targets_raw.push_back(t);
        Tensor last({4});
        for (std::size_t v = 0; v < 4; ++v) last[v] = s.inputs.back().at(v, 4, 0);
        s.last_day_raw.push_back(last);
        s.first_target_day.push_back(5 + i);
    }
    return s;
}

}  // namespace

TEST_CASE("mse loss values and gradient") {
    auto pred = make_leaf(Tensor({2, 1}, {1.0, 2.0}), true);
    SECTION("exact match is zero") {
        CHECK(loss_mse(pred, Tensor({2, 1}, {1.0, 2.0}))->value[0] == 0.0);
    }
    SECTION("constant offset c gives c^2") {
        CHECK(loss_mse(pred, Tensor({2, 1}, {1.5, 2.5}))->value[0] ==
              Catch::Approx(0.25));
    }
    SECTION("gradient is 2(pred-target)/(V*f), matching finite differences") {
        const Tensor target({2, 1}, {0.5, 3.0});
        auto loss = loss_mse(pred, target);
        backward(loss);
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(pred->grad[i] ==
                  Catch::Approx(2.0 * (pred->value[i] - target[i]) / 2.0).margin(1e-12));
        auto eval = [&]() { return loss_mse(pred, target)->value[0]; };
        const Tensor fd = testsupport::fd_gradient(eval, pred);
        CHECK(testsupport::max_abs_diff(pred->grad, fd) < 1e-6);
    }
    SECTION("shape mismatch") {
        CHECK_THROWS_AS(loss_mse(pred, Tensor({3, 1})), ShapeError);
    }
}

TEST_CASE("optimizer steps") {
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Optimizer::sgd;
    cfg.lr = 0.1;
    cfg.grad_clip = 0.0;

    SECTION("plain sgd") {
        ParamStore store(0);
        auto p = store.leaf("p", Tensor({1}, {1.0}));
        p->grad = Tensor({1}, {0.5});
        Optimizer(cfg).step(store);
        CHECK(p->value[0] == Catch::Approx(0.95).margin(1e-15));
    }
    SECTION("zero gradients leave parameters unchanged") {
        ParamStore store(0);
        auto p = store.leaf("p", Tensor({3}, {1.0, 2.0, 3.0}));
        store.zero_grad();
        Optimizer(cfg).step(store);
        CHECK(p->value.data() == std::vector<double>{1.0, 2.0, 3.0});
    }
    SECTION("elementwise clip caps the effective gradient") {
        cfg.grad_clip = 1.0;
        ParamStore store(0);
        auto p = store.leaf("p", Tensor({1}, {1.0}));
        p->grad = Tensor({1}, {10.0});
        Optimizer(cfg).step(store);
        CHECK(p->value[0] == Catch::Approx(0.9).margin(1e-15));
    }
    SECTION("non-finite gradient aborts with the parameter name") {
        ParamStore store(0);
        auto p = store.leaf("spatial.geo.w", Tensor({1}, {1.0}));
        p->grad = Tensor({1}, {std::nan("")});
        Optimizer opt(cfg);
        CHECK_THROWS_WITH(opt.step(store),
                          Catch::Matchers::ContainsSubstring("spatial.geo.w"));
    }
    SECTION("adam moves against the gradient and is bias-corrected") {
        cfg.optimizer = TrainConfig::Optimizer::adam;
        cfg.lr = 0.1;
        ParamStore store(0);
        auto p = store.leaf("p", Tensor({1}, {1.0}));
        p->grad = Tensor({1}, {0.5});
        Optimizer(cfg).step(store);
        // First Adam step moves by ~lr regardless of gradient magnitude.
        CHECK(p->value[0] == Catch::Approx(1.0 - 0.1).margin(1e-6));
    }
}

TEST_CASE("metrics formulas") {
    SECTION("perfect prediction") {
        const Tensor y({2, 1}, {100.0, 200.0});
        auto rep = metrics(y, y);
        CHECK(rep.rmse == 0.0);
        CHECK(rep.mape == 0.0);
        CHECK(rep.mae == 0.0);
    }
    SECTION("worked example") {
        const Tensor pred({2, 1}, {110.0, 190.0});
        const Tensor truth({2, 1}, {100.0, 200.0});
        auto rep = metrics(pred, truth);
        CHECK(rep.mae == Catch::Approx(10.0));
        CHECK(rep.rmse == Catch::Approx(10.0));
        CHECK(rep.mape == Catch::Approx(7.5));
    }
    SECTION("aggregates are permutation invariant") {
        std::mt19937_64 rng(41);
        Tensor pred = random_tensor({6, 1}, rng, 50.0, 150.0);
        Tensor truth = random_tensor({6, 1}, rng, 50.0, 150.0);
        auto rep = metrics(pred, truth);
        Tensor pred_p({6, 1}), truth_p({6, 1});
        const std::size_t perm[6] = {3, 5, 0, 2, 4, 1};
        for (std::size_t i = 0; i < 6; ++i) {
            pred_p[i] = pred[perm[i]];
            truth_p[i] = truth[perm[i]];
        }
        auto rep_p = metrics(pred_p, truth_p);
        CHECK(rep.rmse == Catch::Approx(rep_p.rmse).margin(1e-12));
        CHECK(rep.mape == Catch::Approx(rep_p.mape).margin(1e-12));
        CHECK(rep.mae == Catch::Approx(rep_p.mae).margin(1e-12));
    }
    SECTION("independent scalar recomputation agrees within 1e-12") {
        std::mt19937_64 rng(43);
        for (int trial = 0; trial < 5; ++trial) {
            Tensor pred = random_tensor({5, 3}, rng, 10.0, 200.0);
            Tensor truth = random_tensor({5, 3}, rng, 10.0, 200.0);
            auto rep = metrics(pred, truth);
            double se = 0, ae = 0, ape = 0;
            for (std::size_t i = 0; i < 15; ++i) {
                se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
                ae += std::fabs(pred[i] - truth[i]);
                ape += std::fabs((pred[i] - truth[i]) / truth[i]);
            }
            CHECK(std::fabs(rep.rmse - std::sqrt(se / 15.0)) < 1e-12);
            CHECK(std::fabs(rep.mae - ae / 15.0) < 1e-12);
            CHECK(std::fabs(rep.mape - 100.0 * ape / 15.0) < 1e-12);
        }
    }
    SECTION("zero-truth cells are excluded and counted") {
        const Tensor pred({3, 2}, {1, 2, 3, 4, 5, 6});
        const Tensor truth({3, 2}, {1, 0, 3, 4, 0, 6});
        auto rep = metrics(pred, truth);
        CHECK(rep.mape_excluded == 2);
        CHECK(rep.mape_included == 4);
        CHECK(rep.mape_included + rep.mape_excluded == 6);
    }
    SECTION("all-zero truth is an error") {
        CHECK_THROWS_AS(metrics(Tensor({2, 1}, {1.0, 1.0}), Tensor({2, 1}, 0.0)), DomainError);
    }
}

TEST_CASE("persistence baseline") {
    SECTION("constant series has zero error") {
        SampleSet s = tiny_samples(3, 1);
        for (std::size_t i = 0; i < s.size(); ++i) {
            for (std::size_t v = 0; v < 4; ++v) {
                s.last_day_raw[i][v] = 42.0;
                s.targets_raw[i].at(v, 0) = 42.0;
            }
        }
        auto rep = naive_baseline(s);
        CHECK(rep.rmse == 0.0);
        CHECK(rep.mae == 0.0);
    }
    SECTION("linear ramp with slope s has MAE == s") {
        SampleSet s = tiny_samples(4, 2);
        const double slope = 3.5;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t v = 0; v < 4; ++v) {
                const double last = 100.0 + double(i) * slope;
                s.last_day_raw[i][v] = last;
                s.targets_raw[i].at(v, 0) = last + slope;
            }
        CHECK(naive_baseline(s).mae == Catch::Approx(slope).margin(1e-12));
    }
    SECTION("matches a hand-rolled persistence oracle on seeded data") {
        SampleSet s = tiny_samples(6, 3);
        for (auto& t : s.targets_raw)
            for (double& v : t.data()) v = std::fabs(v) + 1.0;
        for (auto& l : s.last_day_raw)
            for (double& v : l.data()) v = std::fabs(v) + 0.5;
        auto rep = naive_baseline(s);
        double se = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t v = 0; v < 4; ++v) {
                const double err = s.last_day_raw[i][v] - s.targets_raw[i].at(v, 0);
                se += err * err;
                ++n;
            }
        CHECK(rep.rmse == Catch::Approx(std::sqrt(se / double(n))).margin(1e-12));
    }
}

TEST_CASE("fit determinism and seeded shuffling") {
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.lr = 1e-2;
    cfg.shuffle_seed = 5;
    auto run = [&]() {
        MstgcnModel model = tiny_model();
        SampleSet s = tiny_samples(6, 7);
        FitResult r = fit(model, s, nullptr, cfg);
        return std::make_pair(r.train_loss, model.params().at("head.w")->value);
    };
    auto [l1, p1] = run();
    auto [l2, p2] = run();
    CHECK(l1 == l2);
    CHECK(bitwise_equal(p1, p2));
}

TEST_CASE("zero learning rate freezes training") {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.0;
    MstgcnModel model = tiny_model();
    SampleSet s = tiny_samples(4, 9);
    FitResult r = fit(model, s, nullptr, cfg);
    REQUIRE(r.train_loss.size() == 3);
    CHECK(r.train_loss[0] == r.train_loss[1]);
    CHECK(r.train_loss[1] == r.train_loss[2]);
}

TEST_CASE("single-sample memorization drives the loss down monotonically") {
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.lr = 2e-3;
    cfg.optimizer = TrainConfig::Optimizer::sgd;
    MstgcnModel model = tiny_model();
    SampleSet s = tiny_samples(1, 11);
    FitResult r = fit(model, s, nullptr, cfg);
    std::size_t violations = 0;
    for (std::size_t i = 1; i < r.train_loss.size(); ++i)
        if (r.train_loss[i] > r.train_loss[i - 1]) ++violations;
    CHECK(violations <= 2);
    CHECK(r.train_loss.back() < r.train_loss.front());

    SECTION("adam memorizes to near zero") {
        TrainConfig adam;
        adam.epochs = 300;
        adam.lr = 1e-2;
        MstgcnModel m2 = tiny_model(Variant::full, 5);
        FitResult r2 = fit(m2, s, nullptr, adam);
        CHECK(r2.train_loss.back() < 1e-3);
    }
}

TEST_CASE("divergence aborts with the epoch index") {
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.lr = 1e6;
    cfg.optimizer = TrainConfig::Optimizer::sgd;
    cfg.grad_clip = 0.0;
    MstgcnModel model = tiny_model();
    SampleSet s = tiny_samples(3, 13);
    CHECK_THROWS_AS(fit(model, s, nullptr, cfg), DomainError);
}

TEST_CASE("early stopping on a validation plateau") {
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.lr = 0.0;  // loss can never improve, so patience must trigger
    cfg.patience = 3;
    MstgcnModel model = tiny_model();
    SampleSet train = tiny_samples(4, 15);
    SampleSet val = tiny_samples(2, 16);
    FitResult r = fit(model, train, &val, cfg);
    CHECK(r.stopped_epoch < 200);
    CHECK(r.stopped_epoch >= cfg.patience);
}
