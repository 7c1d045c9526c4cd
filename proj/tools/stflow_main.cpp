// SPDX-License-Identifier: Apache-2.0
//
// stflow command line: synthetic data generation, training, prediction and
// ablation for daily highway toll-station flow forecasting.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stflow/stflow.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(const stflow::Error& e) {
    if (dynamic_cast<const stflow::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const stflow::CsvError*>(&e)) return 3;
    if (dynamic_cast<const stflow::DateError*>(&e)) return 4;
    if (dynamic_cast<const stflow::WindowError*>(&e)) return 5;
    if (dynamic_cast<const stflow::HistoryError*>(&e)) return 6;
    return 1;
}

std::optional<std::uint64_t> env_seed_override() {
    const char* raw = std::getenv("STFLOW_SEED");
    if (!raw || !*raw) return std::nullopt;
    try {
        return std::stoull(raw);
    } catch (const std::exception&) {
        throw stflow::ConfigError("STFLOW_SEED must be an unsigned integer, got '" +
                                  std::string(raw) + "'");
    }
}

struct GenerateArgs {
    std::size_t v = 50;
    std::size_t days = 200;
    std::uint64_t seed = 1;
    std::string out = "dataset";
    double alpha = 1.2;
    double base_scale = 500.0;
    double weekend_lo = 1.5;
    double weekend_hi = 2.5;
    double weather_prob = 0.05;
    double suppression = 0.5;
    double kappa = 0.3;
    double noise = 0.08;
    std::size_t holiday_count = 2;
    std::string start_date = "2017-05-01";
    std::size_t knn = 3;
};

int cmd_generate(const GenerateArgs& args, bool as_json) {
    stflow::GenSpec spec;
    spec.v_count = args.v;
    spec.d_count = args.days;
    spec.seed = args.seed;
    spec.alpha = args.alpha;
    spec.base_scale = args.base_scale;
    spec.weekend_lo = args.weekend_lo;
    spec.weekend_hi = args.weekend_hi;
    spec.weather_prob = args.weather_prob;
    spec.suppression = args.suppression;
    spec.kappa = args.kappa;
    spec.noise = args.noise;
    spec.knn = args.knn;
    spec.start_date = stflow::Date::parse(args.start_date);
    for (std::size_t i = 0; i < args.holiday_count; ++i)
        spec.holiday_days.push_back((i + 1) * args.days / (args.holiday_count + 1));
    spec.validate();

    const stflow::GenResult data = stflow::generate_dataset(spec);
    fs::create_directories(args.out);
    const auto path = [&](const char* name) { return (fs::path(args.out) / name).string(); };
    stflow::csv::write_flows(path("flows.csv"), data.flow);
    stflow::csv::write_profiles(path("stations.csv"), data.profiles);
    stflow::csv::write_edges(path("edges.csv"), data.edges, data.profiles);
    stflow::csv::write_weather(path("weather.csv"), data.flow, data.ext.weather);
    stflow::csv::write_holidays(path("holidays.txt"), data.holidays);

    if (as_json) {
        json j = {{"dir", args.out},
                  {"files", {"flows.csv", "stations.csv", "edges.csv", "weather.csv",
                             "holidays.txt"}},
                  {"v", spec.v_count},
                  {"days", spec.d_count},
                  {"seed", spec.seed}};
        std::cout << j.dump(2) << '\n';
    } else {
        std::cout << "wrote 5 files to " << args.out << " (V=" << spec.v_count
                  << ", D=" << spec.d_count << ", seed=" << spec.seed << ")\n";
    }
    return 0;
}

json report_json(const stflow::EvalReport& rep) {
    return {{"rmse", rep.rmse},
            {"mape", rep.mape},
            {"mae", rep.mae},
            {"mape_included", rep.mape_included},
            {"mape_excluded", rep.mape_excluded},
            {"inverse_clamped", rep.clamped}};
}

int cmd_train(const std::string& config_path, bool as_json) {
    stflow::RunConfig cfg = stflow::load_run_config(config_path);
    if (auto seed = env_seed_override()) cfg.seeds = {*seed};
    const stflow::Dataset ds = stflow::load_dataset(cfg);
    const std::uint64_t seed = cfg.seeds.front();
    stflow::TrainOutcome run = stflow::train_once(ds, cfg, cfg.model.variant, seed);

    fs::create_directories(cfg.output_dir);
    const auto path = [&](const char* name) { return (fs::path(cfg.output_dir) / name).string(); };
    stflow::save_checkpoint(path("checkpoint.json"), run.ckpt);
    stflow::write_metrics_csv(path("metrics.csv"), run.rows);
    stflow::write_history_json(path("history.json"), stflow::variant_name(cfg.model.variant),
                               seed, run.history);

    if (as_json) {
        json j = {{"variant", stflow::variant_name(cfg.model.variant)},
                  {"seed", seed},
                  {"lambda", run.norm.lambda},
                  {"shift", run.norm.shift},
                  {"vital_few", std::vector<std::string>(run.norm.vital_few.begin(),
                                                         run.norm.vital_few.end())},
                  {"epochs_run", run.history.stopped_epoch},
                  {"test", report_json(run.test)},
                  {"baseline", report_json(run.baseline)},
                  {"output_dir", cfg.output_dir}};
        std::cout << j.dump(2) << '\n';
    } else {
        std::cout << std::fixed << std::setprecision(3);
        std::cout << "variant " << stflow::variant_name(cfg.model.variant) << ", seed " << seed
                  << ", lambda " << run.norm.lambda << ", shift " << run.norm.shift
                  << ", vital-few " << run.norm.vital_few.size() << " station(s)\n";
        std::cout << "test      rmse " << run.test.rmse << "  mape " << run.test.mape
                  << "%  mae " << run.test.mae << "\n";
        std::cout << "baseline  rmse " << run.baseline.rmse << "  mape " << run.baseline.mape
                  << "%  mae " << run.baseline.mae << "\n";
        std::cout << "artifacts in " << cfg.output_dir << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, bool as_json) {
    stflow::RunConfig cfg = stflow::load_run_config(config_path);
    if (auto seed = env_seed_override()) cfg.seeds = {*seed};
    std::vector<stflow::Variant> variants;
    if (cfg.variants.empty()) {
        variants = {stflow::Variant::full, stflow::Variant::gs, stflow::Variant::rs,
                    stflow::Variant::nonE, stflow::Variant::nonT};
    } else {
        for (const auto& name : cfg.variants) variants.push_back(stflow::parse_variant(name));
    }
    const stflow::Dataset ds = stflow::load_dataset(cfg);
    const stflow::AblationResult result = stflow::run_ablation(ds, cfg, variants, cfg.seeds);

    fs::create_directories(cfg.output_dir);
    const auto path = [&](const char* name) { return (fs::path(cfg.output_dir) / name).string(); };
    stflow::write_metrics_csv(path("metrics.csv"), result.rows);
    stflow::write_ablation_csv(path("ablation.csv"), result);
    {
        std::ofstream out(path("ablation.json"));
        out << stflow::ablation_json(result).dump(2) << '\n';
    }

    if (as_json) {
        std::cout << stflow::ablation_json(result).dump(2) << '\n';
    } else {
        std::cout << std::fixed << std::setprecision(3);
        std::cout << "variant   runs  rmse_med   mape_med   mae_med\n";
        for (const auto& e : result.entries) {
            std::cout << std::left << std::setw(10) << e.variant << std::right << std::setw(4)
                      << e.seeds.size() << std::setw(10) << e.rmse_median << std::setw(11)
                      << e.mape_median << std::setw(10) << e.mae_median << "\n";
        }
        std::cout << "artifacts in " << cfg.output_dir << "\n";
    }
    return 0;
}

struct PredictArgs {
    std::string checkpoint;
    std::string flows;
    std::string weather;
    std::string holidays;
    std::string date;
    std::string out;
};

int cmd_predict(const PredictArgs& args, bool as_json) {
    const stflow::Checkpoint ckpt = stflow::load_checkpoint(args.checkpoint);
    const stflow::FlowPanel panel = stflow::csv::load_flows(args.flows);

    stflow::Tensor weather;
    const stflow::Tensor* weather_ptr = nullptr;
    if (ckpt.model.uses_externals() && !args.weather.empty()) {
        weather = stflow::csv::load_weather(args.weather, panel.stations, panel.days, true);
        weather_ptr = &weather;
    } else if (ckpt.model.uses_externals() && args.weather.empty()) {
        std::cerr << "stflow: note: no weather file given; assuming normal weather\n";
    }
    std::set<stflow::Date> holidays;
    if (ckpt.model.uses_externals() && !args.holidays.empty())
        holidays = stflow::csv::load_holidays(args.holidays);

    std::optional<stflow::Date> horizon;
    if (!args.date.empty()) horizon = stflow::Date::parse(args.date);
    const stflow::PredictionResult result =
        stflow::predict(ckpt, panel, weather_ptr, holidays, horizon ? &*horizon : nullptr);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!args.out.empty()) {
        file.open(args.out);
        if (!file) throw stflow::InputError("cannot write '" + args.out + "'");
        out = &file;
    }
    *out << "station_id,date,predicted_flow,vital_few\n";
    for (const auto& row : result.rows)
        *out << row.station << ',' << row.day.iso() << ','
             << stflow::csv::format_double(row.flow) << ',' << (row.vital ? 1 : 0) << '\n';

    if (!args.out.empty()) {
        if (as_json) {
            json j = {{"rows", result.rows.size()},
                      {"clamped", result.clamped},
                      {"out", args.out}};
            std::cout << j.dump(2) << '\n';
        } else {
            std::cout << "wrote " << result.rows.size() << " predictions to " << args.out;
            if (result.clamped) std::cout << " (" << result.clamped << " clamped)";
            std::cout << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stflow: daily toll-station traffic flow forecasting"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "machine-readable reports");

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "write a seeded synthetic dataset");
    generate->add_option("--v", gen.v, "number of stations");
    generate->add_option("--days", gen.days, "number of days");
    generate->add_option("--seed", gen.seed, "RNG seed");
    generate->add_option("--out", gen.out, "output directory");
    generate->add_option("--alpha", gen.alpha, "Pareto shape of base volumes");
    generate->add_option("--base-scale", gen.base_scale, "minimum base volume");
    generate->add_option("--weekend-lo", gen.weekend_lo, "weekend multiplier lower bound");
    generate->add_option("--weekend-hi", gen.weekend_hi, "weekend multiplier upper bound");
    generate->add_option("--weather-prob", gen.weather_prob, "extreme weather probability");
    generate->add_option("--suppression", gen.suppression, "extreme weather flow multiplier");
    generate->add_option("--kappa", gen.kappa, "neighbor coupling strength");
    generate->add_option("--noise", gen.noise, "lognormal noise sigma");
    generate->add_option("--holiday-count", gen.holiday_count, "number of holidays");
    generate->add_option("--start-date", gen.start_date, "first day (YYYY-MM-DD)");
    generate->add_option("--knn", gen.knn, "nearest neighbors per station");

    std::string train_config;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("-c,--config", train_config, "run configuration JSON")->required();

    std::string ablate_config;
    auto* ablate = app.add_subcommand("ablate", "run the variant ablation from a config file");
    ablate->add_option("-c,--config", ablate_config, "run configuration JSON")->required();

    PredictArgs pred;
    auto* predict = app.add_subcommand("predict", "predict from a checkpoint");
    predict->add_option("--checkpoint", pred.checkpoint, "checkpoint file")->required();
    predict->add_option("--flows", pred.flows, "flow CSV with recent history")->required();
    predict->add_option("--weather", pred.weather, "weather CSV");
    predict->add_option("--holidays", pred.holidays, "holiday list");
    predict->add_option("--date", pred.date, "first predicted day (default: after last flow)");
    predict->add_option("--out", pred.out, "prediction CSV path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (auto seed = env_seed_override(); seed && generate->parsed() &&
                                              generate->count("--seed") == 0)
            gen.seed = *seed;
        if (generate->parsed()) return cmd_generate(gen, as_json);
        if (train->parsed()) return cmd_train(train_config, as_json);
        if (ablate->parsed()) return cmd_ablate(ablate_config, as_json);
        if (predict->parsed()) return cmd_predict(pred, as_json);
    } catch (const stflow::Error& e) {
        std::cerr << "stflow: error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "stflow: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
