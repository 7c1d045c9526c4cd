// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "stflow/autodiff.hpp"
#include "support.hpp"

using namespace stflow;
using testsupport::bitwise_equal;
using testsupport::fd_gradient;
using testsupport::random_tensor;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
}

TEST_CASE("matmul identity and column cases") {
    auto a = constant(Tensor({2, 2}, {1, 2, 3, 4}));
    auto i2 = constant(Tensor::identity(2));
    auto prod = matmul(a, i2);
    CHECK(prod->value.data() == std::vector<double>{1, 2, 3, 4});

    auto col = matmul(i2, constant(Tensor({2, 1}, {5, 7})));
    CHECK(col->value.data() == std::vector<double>{5, 7});

    CHECK_THROWS_WITH(matmul(a, constant(Tensor({3, 2}))),
                      Catch::Matchers::ContainsSubstring("[2,2]") &&
                          Catch::Matchers::ContainsSubstring("[3,2]"));
}

TEST_CASE("matmul gradient matches hand value and finite differences") {
    auto a = make_leaf(Tensor({2, 2}, {1, 2, 3, 4}), true);
    auto b = constant(Tensor({2, 2}, {1, 1, 1, 1}));
    auto loss = sum(matmul(a, b));
    backward(loss);
    CHECK(a->grad.data() == std::vector<double>{2, 2, 2, 2});

    auto eval = [&]() { return sum(matmul(a, b))->value[0]; };
    const Tensor fd = fd_gradient(eval, a);
    CHECK(testsupport::max_abs_diff(a->grad, fd) < 1e-6);
}

TEST_CASE("batched matmul agrees with per-slice products") {
    std::mt19937_64 rng(11);
    auto a = constant(random_tensor({3, 2, 4}, rng));
    auto b = constant(random_tensor({3, 4, 5}, rng));
    auto out = matmul(a, b);
    REQUIRE(out->value.shape() == std::vector<std::size_t>{3, 2, 5});
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor as({2, 4}), bs({4, 5});
        for (std::size_t i = 0; i < 8; ++i) as[i] = a->value[s * 8 + i];
        for (std::size_t i = 0; i < 20; ++i) bs[i] = b->value[s * 20 + i];
        auto slice = matmul(constant(as), constant(bs));
        for (std::size_t i = 0; i < 10; ++i)
            CHECK(out->value[s * 10 + i] == Catch::Approx(slice->value[i]).margin(1e-12));
    }
}

TEST_CASE("conv_time identity and summing kernels") {
    auto x = constant(Tensor({1, 3, 1}, {1, 2, 3}));
    auto k1 = constant(Tensor({1, 1, 1, 1}, {1}));
    auto b0 = constant(Tensor({1}, {0}));
    CHECK(conv_time(x, k1, b0)->value.data() == std::vector<double>{1, 2, 3});

    auto k3 = constant(Tensor({1, 3, 1, 1}, {1, 1, 1}));
    auto summed = conv_time(x, k3, b0);
    REQUIRE(summed->value.numel() == 1);
    CHECK(summed->value[0] == 6.0);

    CHECK_THROWS_AS(conv_time(constant(Tensor({1, 2, 1})), k3, b0), WindowError);
}

TEST_CASE("conv_time output extent is D-m+1 at trained-scale dims") {
    std::mt19937_64 rng(5);
    auto x = constant(random_tensor({269, 15, 1}, rng));
    auto k = constant(random_tensor({1, 3, 1, 64}, rng));
    auto b = constant(Tensor({64}));
    auto out = conv_time(x, k, b);
    CHECK(out->value.shape() == std::vector<std::size_t>{269, 13, 64});

    for (std::size_t d = 1; d <= 6; ++d)
        for (std::size_t m = 1; m <= d; ++m) {
            auto xi = constant(Tensor({2, d, 1}, 1.0));
            auto ki = constant(Tensor({1, m, 1, 1}, 1.0));
            auto oi = conv_time(xi, ki, constant(Tensor({1})));
            CHECK(oi->value.extent(1) == d - m + 1);
        }
}

TEST_CASE("elementwise op examples") {
    CHECK(sigmoid(constant(Tensor::scalar(0)))->value[0] == 0.5);
    CHECK(relu(constant(Tensor::scalar(-3)))->value[0] == 0.0);
    auto h = hadamard(constant(Tensor({2}, {2, 3})), constant(Tensor({2}, {4, 5})));
    CHECK(h->value.data() == std::vector<double>{8, 15});
    CHECK_THROWS_AS(add(constant(Tensor({2})), constant(Tensor({3}))), ShapeError);
}

TEST_CASE("add and hadamard commute elementwise") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = constant(random_tensor({4, 3}, rng));
        auto y = constant(random_tensor({4, 3}, rng));
        CHECK(bitwise_equal(add(x, y)->value, add(y, x)->value));
        CHECK(bitwise_equal(hadamard(x, y)->value, hadamard(y, x)->value));
    }
}

TEST_CASE("backward populates gradients per contract") {
    SECTION("sum gives unit gradients") {
        auto p = make_leaf(Tensor({3}, {1, 2, 3}), true);
        backward(sum(p));
        CHECK(p->grad.data() == std::vector<double>{1, 1, 1});
    }
    SECTION("sigmoid at zero against the test-side finite-difference oracle") {
        auto p = make_leaf(Tensor({1}, {0}), true);
        auto loss = sum(sigmoid(p));
        backward(loss);
        auto eval = [&]() { return sum(sigmoid(p))->value[0]; };
        const double fd = fd_gradient(eval, p, 1e-6)[0];
        CHECK(std::fabs(p->grad[0] - 0.25) < 1e-12);
        CHECK(std::fabs(p->grad[0] - fd) / std::max(1.0, std::fabs(fd)) < 1e-6);
    }
    SECTION("loss with no trainables is a no-op") {
        ParamStore store(3);
        auto p = store.zeros("p", {2});
        auto loss = sum(constant(Tensor({2}, {1, 2})));
        store.zero_grad();
        backward(loss);
        CHECK(p->grad.data() == std::vector<double>{0, 0});
    }
    SECTION("non-scalar loss is rejected") {
        auto p = make_leaf(Tensor({2}, {1, 2}), true);
        CHECK_THROWS_AS(backward(add(p, p)), ContractError);
    }
}

TEST_CASE("backward is deterministic bit for bit") {
    auto run = [](std::uint64_t seed) {
        ParamStore store(seed);
        auto w = store.normal("w", {4, 4}, 0.5);
        auto x = constant(Tensor({4, 1}, {1, 2, 3, 4}));
        auto loss = sum(sigmoid(matmul(w, x)));
        store.zero_grad();
        backward(loss);
        return w->grad;
    };
    CHECK(bitwise_equal(run(7), run(7)));
}

TEST_CASE("gradcheck examples") {
    SECTION("quadratic") {
        ParamStore store(0);
        auto x = store.leaf("x", Tensor({1}, {3}));
        auto build = [&](ParamStore& s) {
            auto p = s.at("x");
            return sum(hadamard(p, p));
        };
        CHECK(gradcheck(build, store, 1e-5) < 1e-8);
        store.zero_grad();
        backward(build(store));
        CHECK(x->grad[0] == Catch::Approx(6.0).margin(1e-9));
    }
    SECTION("constant function has zero error") {
        ParamStore store(0);
        store.leaf("x", Tensor({2}, {1, 2}));
        auto build = [](ParamStore&) { return constant(Tensor::scalar(5.0)); };
        CHECK(gradcheck(build, store, 1e-5) == 0.0);
    }
    SECTION("eps domain") {
        ParamStore store(0);
        store.leaf("x", Tensor({1}, {1}));
        auto build = [](ParamStore& s) { return sum(s.at("x")); };
        CHECK_THROWS_AS(gradcheck(build, store, 0.0), DomainError);
        CHECK_THROWS_AS(gradcheck(build, store, 0.5), DomainError);
    }
    SECTION("non-finite intermediate names the op") {
        ParamStore store(0);
        store.leaf("x", Tensor({1}, {1e200}));  // finite leaf, hadamard overflows
        auto build = [](ParamStore& s) {
            return sum(hadamard(s.at("x"), s.at("x")));
        };
        CHECK_THROWS_WITH(gradcheck(build, store, 1e-5),
                          Catch::Matchers::ContainsSubstring("hadamard"));
    }
}

TEST_CASE("gradcheck passes for every op at random points") {
    // eps = 1e-5, tolerance 1e-4, five seeds per op family.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        ParamStore store(seed);
        store.leaf("a", random_tensor({3, 4}, rng));
        store.leaf("b", random_tensor({3, 4}, rng));
        store.leaf("w", random_tensor({4, 2}, rng));
        store.leaf("bias", random_tensor({2}, rng));
        store.leaf("x3", random_tensor({2, 5, 3}, rng));
        store.leaf("kern", random_tensor({1, 2, 3, 2}, rng));
        store.leaf("pos", random_tensor({3}, rng, 0.5, 2.0));

        auto build = [&](ParamStore& s) {
            auto t = add(s.at("a"), s.at("b"));
            t = sub(t, scale(s.at("b"), 0.3));
            t = hadamard(t, sigmoid(s.at("a")));
            t = relu(add(t, constant(Tensor({3, 4}, 0.05))));
            auto mm = add_bias(matmul(t, s.at("w")), s.at("bias"));
            auto conv = conv_time(s.at("x3"), s.at("kern"),
                                  constant(Tensor({2}, 0.0)));
            auto cc = concat_last({mm, reshape(absval(mm), {3, 2})});
            auto rs = rsqrt(s.at("pos"));
            return add(add(sum(cc), sum(sum_last(conv))), sum(rs));
        };
        CHECK(gradcheck(build, store, 1e-5) < 1e-4);
    }
}

TEST_CASE("param store enumerates uniquely and lexicographically") {
    ParamStore store(1);
    store.zeros("m.weight", {2});
    store.zeros("a.bias", {2});
    store.zeros("z.v", {1});
    std::vector<std::string> names;
    for (const auto& [name, node] : store.slots()) names.push_back(name);
    CHECK(names == std::vector<std::string>{"a.bias", "m.weight", "z.v"});
    CHECK_THROWS_AS(store.zeros("a.bias", {2}), InputError);
    CHECK_THROWS_AS(store.at("missing"), InputError);
}
