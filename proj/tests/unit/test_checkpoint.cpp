// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "stflow/checkpoint.hpp"
#include "support.hpp"

using namespace stflow;
using testsupport::bitwise_equal;

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.v_count = 4;
    cfg.h = 5;
    cfg.f = 1;
    cfg.m = 2;
    cfg.c_out = 4;
    cfg.c_sout = 2;
    cfg.seed = seed;
    Tensor w({4, 4}, 1.0);
    for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 0.0;
    MstgcnModel model(cfg, propagation_matrix(w), propagation_matrix(w));

    NormalizationState norm;
    norm.lambda = 0.37;
    norm.shift = 1.0;
    norm.center = 6.125;
    norm.spread = 0.81;
    norm.topk_days = {12, 3, 40};
    norm.vital_few = {"s0002", "s0003"};
    return make_checkpoint(model, norm, {"s0000", "s0001", "s0002", "s0003"});
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() /
           (std::string("stflow_test_") + name + "_" + std::to_string(::getpid()) + ".json");
}

}  // namespace

TEST_CASE("checkpoint round-trips bitwise") {
    const Checkpoint ckpt = sample_checkpoint(17);
    const auto path = temp_file("roundtrip");
    save_checkpoint(path.string(), ckpt);
    const Checkpoint loaded = load_checkpoint(path.string());
    std::filesystem::remove(path);

    CHECK(loaded.model.v_count == ckpt.model.v_count);
    CHECK(loaded.model.seed == ckpt.model.seed);
    CHECK(variant_name(loaded.model.variant) == variant_name(ckpt.model.variant));
    CHECK(loaded.norm.lambda == ckpt.norm.lambda);
    CHECK(loaded.norm.shift == ckpt.norm.shift);
    CHECK(loaded.norm.topk_days == ckpt.norm.topk_days);
    CHECK(loaded.norm.vital_few == ckpt.norm.vital_few);
    CHECK(loaded.stations == ckpt.stations);
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        REQUIRE(loaded.tensors.count(name) == 1);
        CHECK(bitwise_equal(loaded.tensors.at(name), t));
    }
}

TEST_CASE("checkpoint restore rebuilds a working model") {
    const Checkpoint ckpt = sample_checkpoint(23);
    MstgcnModel restored = restore_model(ckpt);
    std::mt19937_64 rng(9);
    const Tensor window = testsupport::random_tensor({4, 5, 1}, rng);
    const Tensor ext = testsupport::random_tensor({4, 5, 2}, rng, 0.0, 2.0);

    // Two restores agree with each other bitwise.
    MstgcnModel again = restore_model(ckpt);
    CHECK(bitwise_equal(restored.forward(window, ext)->value,
                        again.forward(window, ext)->value));
}

TEST_CASE("checkpoint refuses version and content mismatches") {
    const Checkpoint ckpt = sample_checkpoint(29);
    nlohmann::json j = checkpoint_to_json(ckpt);

    SECTION("future version") {
        j["version"] = kCheckpointVersion + 1;
        CHECK_THROWS_WITH(checkpoint_from_json(j),
                          Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("tampered payload fails the content hash") {
        j["train_seed"] = 999;
        CHECK_THROWS_WITH(checkpoint_from_json(j),
                          Catch::Matchers::ContainsSubstring("hash"));
    }
    SECTION("wrong format marker") {
        j["format"] = "something-else";
        CHECK_THROWS_AS(checkpoint_from_json(j), ConfigError);
    }
    SECTION("missing parameter on restore") {
        nlohmann::json ok = checkpoint_to_json(ckpt);
        Checkpoint loaded = checkpoint_from_json(ok);
        loaded.tensors.erase("head.w");
        CHECK_THROWS_WITH(restore_model(loaded),
                          Catch::Matchers::ContainsSubstring("head.w"));
    }
    SECTION("shape mismatch on restore") {
        Checkpoint loaded = checkpoint_from_json(checkpoint_to_json(ckpt));
        loaded.tensors.at("head.b") = Tensor({3}, 0.0);
        CHECK_THROWS_AS(restore_model(loaded), ConfigError);
    }
}

TEST_CASE("non-finite parameters are refused at save time") {
    Checkpoint ckpt = sample_checkpoint(31);
    ckpt.tensors.at("head.b")[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(checkpoint_to_json(ckpt), DomainError);
}
