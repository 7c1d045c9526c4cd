// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stflow/boxcox.hpp"
#include "stflow/errors.hpp"
#include "stflow/model.hpp"
#include "stflow/tensor.hpp"

namespace stflow {

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to reload and run a trained model: config snapshot,
/// normalization state, station order, and every named tensor (trainable
/// parameters plus the static graph propagations). Round-trips bitwise.
struct Checkpoint {
    ModelConfig model;
    NormalizationState norm;
    std::vector<std::string> stations;
    std::map<std::string, Tensor> tensors;
    std::uint64_t train_seed = 0;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    return {{"v", cfg.v_count},
            {"h", cfg.h},
            {"f", cfg.f},
            {"m", cfg.m},
            {"c_out", cfg.c_out},
            {"c_sout", cfg.c_sout},
            {"variant", variant_name(cfg.variant)},
            {"seed", cfg.seed},
            {"tie_glu_kernels", cfg.tie_glu_kernels},
            {"elastic_nonneg", elastic_nonneg_name(cfg.elastic_nonneg)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.v_count = j.at("v").get<std::size_t>();
    cfg.h = j.at("h").get<std::size_t>();
    cfg.f = j.at("f").get<std::size_t>();
    cfg.m = j.at("m").get<std::size_t>();
    cfg.c_out = j.at("c_out").get<std::size_t>();
    cfg.c_sout = j.at("c_sout").get<std::size_t>();
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.tie_glu_kernels = j.at("tie_glu_kernels").get<bool>();
    cfg.elastic_nonneg = parse_elastic_nonneg(j.at("elastic_nonneg").get<std::string>());
    return cfg;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : ckpt.tensors) {
        if (!t.all_finite())
            throw DomainError("checkpoint: tensor '" + name + "' has non-finite values");
        tensors[name] = {{"shape", t.shape()}, {"data", t.data()}};
    }
    nlohmann::json j = {
        {"format", "stflow-checkpoint"},
        {"version", kCheckpointVersion},
        {"model", detail::model_config_json(ckpt.model)},
        {"normalization",
         {{"lambda", ckpt.norm.lambda},
          {"shift", ckpt.norm.shift},
          {"center", ckpt.norm.center},
          {"spread", ckpt.norm.spread},
          {"topk_days", ckpt.norm.topk_days},
          {"vital_few", std::vector<std::string>(ckpt.norm.vital_few.begin(),
                                                 ckpt.norm.vital_few.end())}}},
        {"stations", ckpt.stations},
        {"tensors", tensors},
        {"train_seed", ckpt.train_seed},
    };
    j["content_hash"] = std::to_string(detail::fnv1a64(j.dump()));
    return j;
}

inline Checkpoint checkpoint_from_json(nlohmann::json j) {
    if (!j.is_object() || j.value("format", "") != "stflow-checkpoint")
        throw ConfigError("checkpoint: not a stflow checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw ConfigError("checkpoint: version " + j.at("version").dump() +
                          " not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    const std::string stored_hash = j.at("content_hash").get<std::string>();
    j.erase("content_hash");
    if (std::to_string(detail::fnv1a64(j.dump())) != stored_hash)
        throw ConfigError("checkpoint: content hash mismatch (corrupt file)");

    Checkpoint ckpt;
    ckpt.model = detail::model_config_from_json(j.at("model"));
    const auto& n = j.at("normalization");
    ckpt.norm.lambda = n.at("lambda").get<double>();
    ckpt.norm.shift = n.at("shift").get<double>();
    ckpt.norm.center = n.at("center").get<double>();
    ckpt.norm.spread = n.at("spread").get<double>();
    ckpt.norm.topk_days = n.at("topk_days").get<std::vector<std::size_t>>();
    for (const auto& id : n.at("vital_few")) ckpt.norm.vital_few.insert(id.get<std::string>());
    ckpt.stations = j.at("stations").get<std::vector<std::string>>();
    for (const auto& [name, tj] : j.at("tensors").items()) {
        ckpt.tensors.emplace(name, Tensor(tj.at("shape").get<std::vector<std::size_t>>(),
                                          tj.at("data").get<std::vector<double>>()));
    }
    ckpt.train_seed = j.at("train_seed").get<std::uint64_t>();
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << checkpoint_to_json(ckpt).dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: invalid JSON: " + std::string(e.what()));
    }
    return checkpoint_from_json(std::move(j));
}

/// Snapshot of a trained model's parameters plus the static propagations.
inline Checkpoint make_checkpoint(const MstgcnModel& model, const NormalizationState& norm,
                                  const std::vector<std::string>& stations) {
    Checkpoint ckpt;
    ckpt.model = model.config();
    ckpt.norm = norm;
    ckpt.stations = stations;
    ckpt.train_seed = model.config().seed;
    for (const auto& [name, node] : model.params().slots()) ckpt.tensors.emplace(name, node->value);
    if (model.config().uses_geographic())
        ckpt.tensors.emplace("graphs.geo.prop", model.geographic_propagation());
    if (model.config().uses_influential())
        ckpt.tensors.emplace("graphs.inf.prop", model.influential_propagation());
    return ckpt;
}

/// Rebuilds a runnable model from a checkpoint. Parameter shapes are
/// validated against a freshly constructed model of the stored config.
inline MstgcnModel restore_model(const Checkpoint& ckpt) {
    Tensor geo, inf;
    if (ckpt.model.uses_geographic()) {
        auto it = ckpt.tensors.find("graphs.geo.prop");
        if (it == ckpt.tensors.end())
            throw ConfigError("checkpoint: missing geographic propagation");
        geo = it->second;
    }
    if (ckpt.model.uses_influential()) {
        auto it = ckpt.tensors.find("graphs.inf.prop");
        if (it == ckpt.tensors.end())
            throw ConfigError("checkpoint: missing influential propagation");
        inf = it->second;
    }
    MstgcnModel model(ckpt.model, std::move(geo), std::move(inf));
    for (const auto& [name, node] : model.params().slots()) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw ConfigError("checkpoint: missing parameter '" + name + "'");
        if (!(it->second.shape() == node->value.shape()))
            throw ConfigError("checkpoint: parameter '" + name + "' has shape " +
                              it->second.shape_string() + ", expected " +
                              node->value.shape_string());
        node->value = it->second;
    }
    return model;
}

}  // namespace stflow
