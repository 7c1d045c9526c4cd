// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stflow/boxcox.hpp"
#include "stflow/checkpoint.hpp"
#include "stflow/csv.hpp"
#include "stflow/datagen.hpp"
#include "stflow/errors.hpp"
#include "stflow/graphs.hpp"
#include "stflow/metrics.hpp"
#include "stflow/model.hpp"
#include "stflow/panel.hpp"
#include "stflow/train.hpp"

namespace stflow {

// ---------------------------------------------------------------------------
// Run configuration file
// ---------------------------------------------------------------------------

/// Parsed `stflow` run configuration. The file is JSON with the sections
/// data / model / normalize / train / output; unknown keys are rejected and
/// all paths are checked before any work starts.
struct RunConfig {
    std::string flows_path;
    std::string stations_path;
    std::string edges_path;
    std::string weather_path;   // optional
    std::string holidays_path;  // optional
    bool strict_weather = true;

    ModelConfig model;  // v_count == 0 means "infer from data"
    bool v_pinned = false;

    std::size_t k = 5;
    LambdaGrid grid;
    std::string shift_policy = "auto";  // auto | none

    TrainConfig train;
    std::vector<std::uint64_t> seeds = {0};
    std::size_t test_days = 15;
    std::vector<std::string> variants;  // used by the ablation command

    std::string output_dir;
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& section,
                       const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

inline void require_file(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        throw ConfigError("config: " + what + " path '" + path + "' does not exist");
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::check_keys(j, "<root>", {"data", "model", "normalize", "train", "output"});
    RunConfig cfg;

    const auto& data = j.at("data");
    detail::check_keys(data, "data", {"flows", "stations", "edges", "weather", "holidays",
                                      "strict_weather"});
    cfg.flows_path = data.at("flows").get<std::string>();
    cfg.stations_path = data.at("stations").get<std::string>();
    cfg.edges_path = data.at("edges").get<std::string>();
    if (data.contains("weather")) cfg.weather_path = data.at("weather").get<std::string>();
    if (data.contains("holidays")) cfg.holidays_path = data.at("holidays").get<std::string>();
    if (data.contains("strict_weather")) cfg.strict_weather = data.at("strict_weather").get<bool>();

    const auto& model = j.at("model");
    detail::check_keys(model, "model",
                       {"v", "h", "f", "m", "c_out", "c_sout", "variant", "tie_glu_kernels",
                        "elastic_nonneg"});
    if (model.contains("v")) {
        cfg.model.v_count = model.at("v").get<std::size_t>();
        cfg.v_pinned = true;
    }
    cfg.model.h = model.at("h").get<std::size_t>();
    cfg.model.f = model.at("f").get<std::size_t>();
    cfg.model.m = model.at("m").get<std::size_t>();
    cfg.model.c_out = model.at("c_out").get<std::size_t>();
    cfg.model.c_sout = model.at("c_sout").get<std::size_t>();
    cfg.model.variant = parse_variant(model.at("variant").get<std::string>());
    if (model.contains("tie_glu_kernels"))
        cfg.model.tie_glu_kernels = model.at("tie_glu_kernels").get<bool>();
    if (model.contains("elastic_nonneg"))
        cfg.model.elastic_nonneg =
            parse_elastic_nonneg(model.at("elastic_nonneg").get<std::string>());

    const auto& norm = j.at("normalize");
    detail::check_keys(norm, "normalize",
                       {"k", "grid_min", "grid_max", "grid_step", "shift_policy"});
    cfg.k = norm.at("k").get<std::size_t>();
    if (cfg.k < 1 || cfg.k > 5) throw ConfigError("config: normalize.k must be in 1..5");
    if (norm.contains("grid_min")) cfg.grid.lo = norm.at("grid_min").get<double>();
    if (norm.contains("grid_max")) cfg.grid.hi = norm.at("grid_max").get<double>();
    if (norm.contains("grid_step")) cfg.grid.step = norm.at("grid_step").get<double>();
    if (norm.contains("shift_policy")) {
        cfg.shift_policy = norm.at("shift_policy").get<std::string>();
        if (cfg.shift_policy != "auto" && cfg.shift_policy != "none")
            throw ConfigError("config: normalize.shift_policy must be auto|none");
    }

    const auto& train = j.at("train");
    detail::check_keys(train, "train",
                       {"optimizer", "lr", "epochs", "seeds", "patience", "grad_clip",
                        "test_days", "variants"});
    cfg.train.optimizer = parse_optimizer(train.at("optimizer").get<std::string>());
    cfg.train.lr = train.at("lr").get<double>();
    cfg.train.epochs = train.at("epochs").get<std::size_t>();
    cfg.seeds = train.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("config: train.seeds must not be empty");
    if (train.contains("patience")) cfg.train.patience = train.at("patience").get<std::size_t>();
    if (train.contains("grad_clip")) cfg.train.grad_clip = train.at("grad_clip").get<double>();
    if (train.contains("test_days")) cfg.test_days = train.at("test_days").get<std::size_t>();
    if (cfg.test_days == 0) throw ConfigError("config: train.test_days must be >= 1");
    if (train.contains("variants"))
        cfg.variants = train.at("variants").get<std::vector<std::string>>();
    cfg.train.validate();

    const auto& output = j.at("output");
    detail::check_keys(output, "output", {"dir"});
    cfg.output_dir = output.at("dir").get<std::string>();

    detail::require_file(cfg.flows_path, "data.flows");
    detail::require_file(cfg.stations_path, "data.stations");
    detail::require_file(cfg.edges_path, "data.edges");
    if (!cfg.weather_path.empty()) detail::require_file(cfg.weather_path, "data.weather");
    if (!cfg.holidays_path.empty()) detail::require_file(cfg.holidays_path, "data.holidays");
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    try {
        return parse_run_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

struct Dataset {
    FlowPanel flow;
    ExternalPanel ext;
    std::vector<StationProfile> profiles;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::set<Date> holidays;
};

inline Dataset load_dataset(const RunConfig& cfg) {
    Dataset ds;
    ds.flow = csv::load_flows(cfg.flows_path);
    if (cfg.v_pinned && cfg.model.v_count != ds.flow.station_count())
        throw ConfigError("config: model.v=" + std::to_string(cfg.model.v_count) +
                          " but data has " + std::to_string(ds.flow.station_count()) +
                          " stations");
    ds.profiles = csv::load_profiles(cfg.stations_path, ds.flow.stations);
    ds.edges = csv::load_edges(cfg.edges_path, ds.flow.stations);
    if (!cfg.holidays_path.empty()) ds.holidays = csv::load_holidays(cfg.holidays_path);
    if (!cfg.weather_path.empty()) {
        ds.ext.weather = csv::load_weather(cfg.weather_path, ds.flow.stations, ds.flow.days,
                                           cfg.strict_weather);
    } else {
        ds.ext.weather = Tensor({ds.flow.station_count(), ds.flow.day_count()}, 0.0);
    }
    ds.ext.calendar.resize(ds.flow.day_count());
    for (std::size_t d = 0; d < ds.flow.day_count(); ++d) {
        const Date day = ds.flow.days[d];
        ds.ext.calendar[d] = ds.holidays.count(day) ? 1 : (day.is_weekend() ? 2 : 0);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string variant;
    std::uint64_t seed = 0;
    Date day;
    double rmse = 0.0, mape = 0.0, mae = 0.0;
};

struct TrainOutcome {
    Checkpoint ckpt;
    FitResult history;
    EvalReport test;
    EvalReport baseline;
    std::vector<MetricsRow> rows;
    NormalizationState norm;
};

/// Normalization state fitted strictly on a training-span panel: Box-Cox
/// lambda via the top-K trick (skipped for nonT), vital-few stations, and
/// the affine standardization of the model scale.
inline NormalizationState fit_normalization(const FlowPanel& train_panel, const RunConfig& cfg,
                                            bool use_boxcox) {
    NormalizationState norm;
    if (use_boxcox) {
        norm = fit_lambda(train_panel, cfg.k, cfg.grid);
        if (cfg.shift_policy == "none" && norm.shift != 0.0)
            throw DomainError("normalize: shift_policy=none but the panel contains zeros");
    } else {
        norm.topk_days = select_topk_days(train_panel, cfg.k);
    }
    norm.vital_few = detect_vital_few(train_panel, norm);

    double mean = 0.0;
    std::vector<double> transformed;
    transformed.reserve(train_panel.values.numel());
    for (std::size_t v = 0; v < train_panel.station_count(); ++v)
        for (std::size_t d = 0; d < train_panel.day_count(); ++d) {
            const double z = use_boxcox ? boxcox_forward_one(train_panel.value(v, d),
                                                             norm.lambda, norm.shift)
                                        : train_panel.value(v, d);
            transformed.push_back(z);
            mean += z;
        }
    mean /= double(transformed.size());
    double var = 0.0;
    for (double z : transformed) var += (z - mean) * (z - mean);
    var /= double(transformed.size());
    if (!(var > 0.0))
        throw DomainError("normalize: degenerate (constant) training span");
    norm.center = mean;
    norm.spread = std::sqrt(var);
    return norm;
}

inline Tensor model_scale_matrix(const FlowPanel& panel, const NormalizationState& norm,
                                 bool use_boxcox) {
    Tensor out(panel.values.shape());
    for (std::size_t v = 0; v < panel.station_count(); ++v)
        for (std::size_t d = 0; d < panel.day_count(); ++d) {
            try {
                out.at(v, d) = to_model_scale(panel.value(v, d), norm, use_boxcox);
            } catch (const DomainError& e) {
                throw DomainError(std::string(e.what()) + " at station " + panel.stations[v] +
                                  ", day " + panel.days[d].iso());
            }
        }
    return out;
}

/// Fits normalization on the pre-test span only, trains one model, and
/// evaluates it on the held-out tail windows against the persistence
/// baseline.
inline TrainOutcome train_once(const Dataset& ds, const RunConfig& cfg, Variant variant,
                               std::uint64_t seed) {
    const std::size_t d_count = ds.flow.day_count();
    const std::size_t v_count = ds.flow.station_count();
    ModelConfig mc = cfg.model;
    mc.v_count = v_count;
    mc.variant = variant;
    mc.seed = seed;
    mc.validate();
    if (d_count < mc.h + mc.f + cfg.test_days)
        throw WindowError("train: need at least h+f+test_days=" +
                          std::to_string(mc.h + mc.f + cfg.test_days) + " days, data has " +
                          std::to_string(d_count));
    const std::size_t test_start = d_count - cfg.test_days;

    // Normalization state from the training span only (no test leakage).
    const FlowPanel train_panel = ds.flow.prefix_days(test_start);
    const NormalizationState norm = fit_normalization(train_panel, cfg, mc.uses_boxcox());
    const Tensor model_scale = model_scale_matrix(ds.flow, norm, mc.uses_boxcox());

    SampleSet all = make_windows(ds.flow, model_scale, ds.ext, mc.h, mc.f);
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < all.size(); ++i) {
        const std::size_t first_target = all.first_target_day[i];
        if (first_target + mc.f <= test_start) {
            train_idx.push_back(i);
        } else if (first_target >= test_start) {
            test_idx.push_back(i);
        }  // windows straddling the boundary belong to neither split
    }
    if (train_idx.empty()) throw WindowError("train: no training windows before the test span");
    if (test_idx.empty()) throw WindowError("train: no test windows in the test span");

    SampleSet val;
    if (cfg.train.patience > 0) {
        const std::size_t n_val = std::max<std::size_t>(1, train_idx.size() / 10);
        std::vector<std::size_t> val_idx(train_idx.end() - n_val, train_idx.end());
        train_idx.resize(train_idx.size() - n_val);
        if (train_idx.empty())
            throw WindowError("train: validation split leaves no training windows");
        val = all.slice(val_idx);
    }
    SampleSet train_set = all.slice(train_idx);
    SampleSet test_set = all.slice(test_idx);

    HighwayGraph geo, inf;
    Tensor geo_prop, inf_prop;
    if (mc.uses_geographic()) {
        geo = build_geographic(ds.edges, v_count);
        geo_prop = geo.propagation;
    }
    if (mc.uses_influential()) {
        inf = build_influential(ds.profiles);
        inf_prop = inf.propagation;
    }

    MstgcnModel model(mc, std::move(geo_prop), std::move(inf_prop));
    TrainConfig tc = cfg.train;
    tc.shuffle_seed = seed;

    TrainOutcome out;
    out.history = fit(model, train_set, val.empty() ? nullptr : &val, tc);
    EvalOutcome eval = evaluate(model, test_set, norm);
    out.test = eval.report;
    out.baseline = naive_baseline(test_set);
    out.norm = norm;
    out.ckpt = make_checkpoint(model, norm, ds.flow.stations);

    const std::string vname = variant_name(variant);
    for (std::size_t s = 0; s < test_set.size(); ++s) {
        const EvalReport& rep = eval.per_sample[s];
        for (std::size_t k = 0; k < mc.f; ++k) {
            MetricsRow row;
            row.variant = vname;
            row.seed = seed;
            row.day = ds.flow.days[test_set.first_target_day[s] + k];
            row.rmse = rep.per_day_rmse[k];
            row.mape = rep.per_day_mape[k];
            row.mae = rep.per_day_mae[k];
            out.rows.push_back(row);
        }
    }
    return out;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    auto out = csv::open_out(path);
    out << "variant,seed,day,rmse,mape,mae\n";
    for (const auto& r : rows)
        out << r.variant << ',' << r.seed << ',' << r.day.iso() << ','
            << csv::format_double(r.rmse) << ',' << csv::format_double(r.mape) << ','
            << csv::format_double(r.mae) << '\n';
}

inline void write_history_json(const std::string& path, const std::string& variant,
                               std::uint64_t seed, const FitResult& history) {
    nlohmann::json j = {{"variant", variant},
                        {"seed", seed},
                        {"epochs_run", history.stopped_epoch},
                        {"train_loss", history.train_loss},
                        {"val_loss", history.val_loss}};
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Ablation runner
// ---------------------------------------------------------------------------

struct AblationEntry {
    std::string variant;
    std::vector<std::uint64_t> seeds;
    std::vector<double> rmse, mape, mae;  // per seed, test aggregate
    double rmse_median = 0.0, mape_median = 0.0, mae_median = 0.0;
};

struct AblationResult {
    std::vector<AblationEntry> entries;
    std::vector<MetricsRow> rows;  // per-day rows of every run
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Trains every (variant, seed) pair on identical data splits and reports
/// per-variant median test metrics.
inline AblationResult run_ablation(const Dataset& ds, const RunConfig& cfg,
                                   const std::vector<Variant>& variants,
                                   const std::vector<std::uint64_t>& seeds) {
    if (variants.empty()) throw ConfigError("ablate: no variants configured");
    if (seeds.empty()) throw ConfigError("ablate: need at least one seed");
    AblationResult result;
    for (Variant variant : variants) {
        AblationEntry entry;
        entry.variant = variant_name(variant);
        for (std::uint64_t seed : seeds) {
            TrainOutcome run = train_once(ds, cfg, variant, seed);
            entry.seeds.push_back(seed);
            entry.rmse.push_back(run.test.rmse);
            entry.mape.push_back(run.test.mape);
            entry.mae.push_back(run.test.mae);
            result.rows.insert(result.rows.end(), run.rows.begin(), run.rows.end());
        }
        entry.rmse_median = detail::median(entry.rmse);
        entry.mape_median = detail::median(entry.mape);
        entry.mae_median = detail::median(entry.mae);
        result.entries.push_back(std::move(entry));
    }
    return result;
}

inline void write_ablation_csv(const std::string& path, const AblationResult& result) {
    auto out = csv::open_out(path);
    out << "variant,runs,rmse_median,mape_median,mae_median\n";
    for (const auto& e : result.entries)
        out << e.variant << ',' << e.seeds.size() << ',' << csv::format_double(e.rmse_median)
            << ',' << csv::format_double(e.mape_median) << ','
            << csv::format_double(e.mae_median) << '\n';
}

inline nlohmann::json ablation_json(const AblationResult& result) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& e : result.entries) {
        variants.push_back({{"name", e.variant},
                            {"seeds", e.seeds},
                            {"rmse", e.rmse},
                            {"mape", e.mape},
                            {"mae", e.mae},
                            {"median",
                             {{"rmse", e.rmse_median},
                              {"mape", e.mape_median},
                              {"mae", e.mae_median}}}});
    }
    return {{"variants", variants}};
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

struct PredictionRow {
    std::string station;
    Date day;
    double flow = 0.0;
    bool vital = false;
};

struct PredictionResult {
    std::vector<PredictionRow> rows;
    std::size_t clamped = 0;
};

/// Predicts the f days starting at `horizon` (default: the day after the
/// last observed flow) from the h days immediately preceding it.
inline PredictionResult predict(const Checkpoint& ckpt, const FlowPanel& panel,
                                const Tensor* weather, const std::set<Date>& holidays,
                                const Date* horizon_opt) {
    if (panel.stations != ckpt.stations)
        throw ConfigError("predict: flow stations do not match the checkpoint's stations");
    const ModelConfig& mc = ckpt.model;
    const Date horizon = horizon_opt ? *horizon_opt : panel.days.back().plus(1);
    const std::int32_t first_needed = horizon.days_since_epoch() - std::int32_t(mc.h);
    const std::int32_t panel_first = panel.days.front().days_since_epoch();
    const std::int32_t panel_last = panel.days.back().days_since_epoch();
    if (first_needed < panel_first || horizon.days_since_epoch() - 1 > panel_last)
        throw HistoryError("predict: need flows for the " + std::to_string(mc.h) +
                           " days before " + horizon.iso());
    const std::size_t offset = std::size_t(first_needed - panel_first);

    MstgcnModel model = restore_model(ckpt);
    const std::size_t v_count = mc.v_count;
    Tensor window({v_count, mc.h, 1});
    for (std::size_t v = 0; v < v_count; ++v)
        for (std::size_t t = 0; t < mc.h; ++t)
            window.at(v, t, 0) =
                to_model_scale(panel.value(v, offset + t), ckpt.norm, mc.uses_boxcox());
    Tensor ext({v_count, mc.h, 2}, 0.0);
    for (std::size_t t = 0; t < mc.h; ++t) {
        const Date day = panel.days[offset + t];
        const int r = holidays.count(day) ? 1 : (day.is_weekend() ? 2 : 0);
        for (std::size_t v = 0; v < v_count; ++v) {
            ext.at(v, t, 0) = weather ? weather->at(v, offset + t) : 0.0;
            ext.at(v, t, 1) = double(r);
        }
    }

    NodePtr pred = model.forward(window, ext);
    PredictionResult result;
    for (std::size_t k = 0; k < mc.f; ++k) {
        for (std::size_t v = 0; v < v_count; ++v) {
            PredictionRow row;
            row.station = panel.stations[v];
            row.day = horizon.plus(int(k));
            row.flow = from_model_scale_clamped(pred->value.at(v, k), ckpt.norm,
                                                mc.uses_boxcox(), result.clamped);
            row.vital = ckpt.norm.vital_few.count(row.station) > 0;
            result.rows.push_back(std::move(row));
        }
    }
    return result;
}

}  // namespace stflow
