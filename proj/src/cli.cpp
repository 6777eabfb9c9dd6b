#include "lksde/cli.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lksde/ad/checkpoint.hpp"
#include "lksde/generation.hpp"
#include "lksde/metrics.hpp"
#include "lksde/scenario.hpp"
#include "lksde/service.hpp"
#include "lksde/training.hpp"

namespace lksde::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto b = item.find_first_not_of(' ');
        const auto e = item.find_last_not_of(' ');
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::vector<double> parse_numbers(const std::string& s, std::size_t expected, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size() || !std::isfinite(out.back())) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(what + ": '" + item + "' is not a finite number");
        }
    }
    if (out.size() != expected) throw UsageError(what + " needs " + std::to_string(expected) + " comma-separated numbers");
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

void write_histogram(const fs::path& path, const metrics::Histogram& h) {
    std::ostringstream csv;
    metrics::write_histogram_csv(csv, h);
    write_text(path, csv.str());
}

nlohmann::json points_json(const Trajectory& t) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : t) out.push_back({p.x, p.y});
    return out;
}

// Scenarios whose history and horizon match the model.
std::vector<data::Scenario> compatible(const std::vector<data::Scenario>& all, const nets::Model& m) {
    std::vector<data::Scenario> out;
    for (const auto& s : all) {
        if (s.target_history.size() != m.config().history || s.future_truth.size() != m.config().horizon) {
            throw data::DataError("scenario " + s.id + " has " + std::to_string(s.target_history.size()) + "/" +
                                  std::to_string(s.future_truth.size()) + " history/future points, model expects " +
                                  std::to_string(m.config().history) + "/" + std::to_string(m.config().horizon));
        }
        out.push_back(s);
    }
    return out;
}

struct Options {
    // shared
    std::string data, model, out, config;
    std::uint64_t seed = 1;
    // gen-data
    std::size_t count = 200;
    std::string families;
    double noise = 0.05;
    std::size_t T = 30, k = 20;
    // train
    std::optional<std::size_t> epochs;
    std::optional<double> lambda_kin, lambda_reg, learning_rate;
    std::string optimizer;
    bool keep_epochs = false;
    // predict / eval
    std::string report;
    std::size_t samples = 1;
    std::size_t bins = metrics::kDefaultBins;
    std::string pareto;
    std::string histograms;
    // generate / sweep
    std::string scenario_id;
    std::optional<double> off_x, off_y, off_v, off_psi;
    std::string sem;
    bool absolute = false;
    std::string component, range, family;
    std::size_t limit = 0;
    bool stochastic = false;
    // serve
    std::string host = "127.0.0.1";
    int port = 8080;
};

int cmd_gen_data(const Options& o, std::ostream& out) {
    std::vector<data::Family> fams;
    if (o.families.empty()) {
        fams.assign(data::kAllFamilies.begin(), data::kAllFamilies.end());
    } else {
        for (const auto& name : split_list(o.families)) {
            try {
                fams.push_back(data::family_from_string(name));
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }
    }
    if (o.count == 0) throw UsageError("--count must be at least 1");
    std::vector<data::Scenario> all;
    for (auto f : fams) {
        auto fam = data::default_family(f);
        fam.noise_level = o.noise;
        fam.horizon = o.T;
        fam.history_steps = o.k;
        try {
            fam.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        auto s = data::generate_scenarios(fam, o.count, o.seed);
        all.insert(all.end(), s.begin(), s.end());
    }
    data::save_dataset(all, o.out);
    out << "wrote " << all.size() << " scenarios to " << o.out << '\n';
    return kOk;
}

training::TrainConfig train_config(const Options& o) {
    training::TrainConfig cfg = o.config.empty() ? training::TrainConfig{} : training::TrainConfig::load(o.config);
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.lambda_kin) cfg.lambda_kin = *o.lambda_kin;
    if (o.lambda_reg) cfg.lambda_reg = *o.lambda_reg;
    if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
    if (!o.optimizer.empty()) {
        nlohmann::json j = cfg.to_json();
        j["optimizer"] = o.optimizer;
        cfg = training::TrainConfig::from_json(j);
    }
    cfg.validate();
    return cfg;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    const auto cfg = train_config(o);
    const auto all = data::load_dataset(o.data);
    const auto parts = data::split(all, cfg.split, cfg.seed);
    if (parts.train.empty()) throw data::DataError("dataset " + o.data + " leaves no training scenarios");
    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.to_text());
    auto ids = [](const std::vector<data::Scenario>& v) {
        std::vector<std::string> r;
        for (const auto& s : v) r.push_back(s.id);
        return r;
    };
    write_json(dir / "split.json", {{"train", ids(parts.train)}, {"val", ids(parts.val)}, {"test", ids(parts.test)}});

    nets::Model model(cfg.network());
    training::TrainOutputs outputs{dir, o.keep_epochs};
    const auto result = training::train(model, parts.train, parts.val, cfg, &outputs,
                                        [&err](std::size_t epoch, double total, double ade) {
                                            err << "epoch " << epoch << "  loss " << total << "  val_ade " << ade
                                                << std::endl;
                                        });
    nlohmann::json summary = {
        {"best_epoch", result.best_epoch},
        {"best_val_ade", result.best_val_ade},
        {"val_ade", result.val_ade},
        {"batches", result.history.size()},
    };
    if (!parts.test.empty()) summary["test_ade"] = training::mean_ade(model, parts.test);
    write_json(dir / "summary.json", summary);
    out << summary.dump(1) << '\n';
    return kOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
    const auto model = training::load_model(o.model);
    const auto scenarios = compatible(data::load_dataset(o.data), model);
    if (scenarios.empty()) throw data::DataError("dataset " + o.data + " is empty");
    const auto preds = nets::predict(model, scenarios);
    std::vector<Trajectory> truths, cv;
    nlohmann::json list = nlohmann::json::array();
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const auto& s = scenarios[i];
        truths.push_back(s.local_future());
        cv.push_back(s.frame.to_local(metrics::constant_velocity(s.target_history, model.config().horizon)));
        list.push_back({{"id", s.id},
                        {"trajectory", points_json(s.frame.to_world(preds[i]))},
                        {"trajectory_local", points_json(preds[i])}});
    }
    const auto e = metrics::mean_ade_fde(preds, truths);
    const auto c = metrics::mean_ade_fde(cv, truths);
    const nlohmann::json report = {{"count", scenarios.size()},
                                   {"ade", e.ade},
                                   {"fde", e.fde},
                                   {"constant_velocity", {{"ade", c.ade}, {"fde", c.fde}}}};
    if (!o.out.empty()) write_json(o.out, {{"predictions", std::move(list)}});
    if (!o.report.empty()) write_json(o.report, report);
    out << report.dump(1) << '\n';
    return kOk;
}

nets::LatentOverrides overrides_from(const Options& o) {
    nets::LatentOverrides ov;
    ov.z0 = {o.off_x, o.off_y, o.off_v, o.off_psi};
    if (!o.sem.empty()) {
        const auto v = parse_numbers(o.sem, nets::kSemDim, "--sem");
        ov.sem = std::array<double, 4>{v[0], v[1], v[2], v[3]};
    }
    ov.absolute = o.absolute;
    try {
        ov.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return ov;
}

int cmd_generate(const Options& o, std::ostream& out) {
    service::ModelSnapshot snapshot{training::load_model(o.model), ad::read_checkpoint(o.model).metadata, o.model};
    const service::ScenarioCatalog catalog(data::load_dataset(o.data));
    service::GenerateRequest req;
    req.scenario_id = o.scenario_id;
    req.overrides = overrides_from(o);
    req.noise_seed = o.seed;
    req.num_samples = o.samples;
    if (req.num_samples == 0) throw UsageError("--samples must be at least 1");
    nlohmann::json response;
    try {
        response = service::serve_generate(snapshot, catalog, req);
    } catch (const service::RequestError& e) {
        if (e.status() == service::Status::not_found) throw data::DataError(e.what());
        throw UsageError(e.what());
    }
    const std::string body = response.dump();
    if (o.out.empty()) {
        out << body << '\n';
    } else {
        write_text(o.out, body);
    }
    return kOk;
}

std::optional<double>& component_slot(nets::LatentOverrides& ov, const std::string& c) {
    static const std::array<const char*, 4> names = {"x", "y", "v", "psi"};
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (c == names[i]) return ov.z0[i];
    }
    throw UsageError("--component must be one of x, y, v, psi");
}

int cmd_sweep(const Options& o, std::ostream& out) {
    const auto model = training::load_model(o.model);
    auto scenarios = compatible(data::load_dataset(o.data), model);
    if (!o.family.empty()) {
        std::erase_if(scenarios, [&](const data::Scenario& s) { return s.family != o.family; });
    }
    if (o.limit > 0 && scenarios.size() > o.limit) scenarios.resize(o.limit);
    if (scenarios.empty()) throw data::DataError("no scenarios to sweep");
    const auto values = parse_range(o.range);
    nets::LatentOverrides base;
    base.absolute = o.absolute;
    component_slot(base, o.component);

    const fs::path dir(o.out);
    nlohmann::json list = nlohmann::json::array();
    std::vector<Trajectory> fan;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        nlohmann::json variants = nlohmann::json::array();
        for (double v : values) {
            nets::LatentOverrides ov = base;
            component_slot(ov, o.component) = v;
            const data::Scenario* row = &scenarios[i];
            const std::uint64_t seed = o.seed;
            const auto g = nets::generate(model, std::span(&row, 1), std::span(&seed, 1), &ov, !o.stochastic);
            variants.push_back({{"value", v},
                                {"trajectory", points_json(g[0].world)},
                                {"trajectory_local", points_json(g[0].local)}});
            fan.push_back(g[0].local);
        }
        list.push_back({{"id", scenarios[i].id}, {"family", scenarios[i].family}, {"variants", std::move(variants)}});
    }
    const double delta = model.config().bicycle.delta;
    const auto jerk = metrics::jerk_stats(fan, delta, metrics::kJerkThreshold, o.bins);
    const auto accel = metrics::make_histogram(metrics::accelerations(fan, delta), o.bins);
    const auto steering = metrics::steering_histogram(model, scenarios, o.bins);
    write_json(dir / "sweep.json", {{"component", o.component},
                                    {"values", values},
                                    {"mode", o.absolute ? "absolute" : "offset"},
                                    {"stochastic", o.stochastic},
                                    {"seed", o.seed},
                                    {"scenarios", std::move(list)}});
    write_histogram(dir / "jerk_histogram.csv", jerk.histogram);
    write_histogram(dir / "accel_histogram.csv", accel);
    write_histogram(dir / "steering_histogram.csv", steering.histogram);
    out << "swept " << scenarios.size() << " scenarios x " << values.size() << " values of " << o.component << " into "
        << dir.string() << '\n';
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
    const auto model = training::load_model(o.model);
    const auto scenarios = compatible(data::load_dataset(o.data), model);
    metrics::EvalOptions opts;
    opts.seed = o.seed;
    opts.samples_per_scenario = o.samples;
    opts.bins = o.bins;
    if (opts.samples_per_scenario == 0) throw UsageError("--samples must be at least 1");
    if (!o.pareto.empty()) {
        const auto p = parse_numbers(o.pareto, 3, "--pareto");
        opts.pareto = metrics::GeneralizedPareto{p[0], p[1], p[2]};
        try {
            opts.pareto->validate();
        } catch (const metrics::MetricError& e) {
            throw UsageError(e.what());
        }
    }
    const auto report = metrics::evaluate(model, scenarios, opts);
    const auto j = metrics::to_json(report);
    if (!o.out.empty()) write_json(o.out, j);
    if (!o.histograms.empty()) {
        const fs::path dir(o.histograms);
        write_histogram(dir / "jerk_histogram.csv", report.generated_jerk.histogram);
        write_histogram(dir / "accel_histogram.csv", report.generated_accel);
        write_histogram(dir / "steering_histogram.csv", report.steering.histogram);
    }
    out << j.dump(1) << '\n';
    return kOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
    service::ModelHost host(service::load_snapshot(o.model));
    const service::ScenarioCatalog catalog(data::load_dataset(o.data));
    httplib::Server server;
    service::install_routes(server, host, catalog);
    out << "serving " << catalog.all().size() << " scenarios on http://" << o.host << ':' << o.port << std::endl;
    if (!server.listen(o.host, o.port)) throw std::runtime_error("cannot listen on " + o.host + ":" + std::to_string(o.port));
    return kOk;
}

}  // namespace

std::vector<double> parse_range(const std::string& text) {
    const auto parts = split_list(text, ':');
    if (parts.size() != 3) throw UsageError("range must be start:stop:count, got '" + text + "'");
    double a = 0.0, b = 0.0;
    long n = 0;
    try {
        std::size_t used = 0;
        a = std::stod(parts[0], &used);
        if (used != parts[0].size()) throw std::invalid_argument("start");
        b = std::stod(parts[1], &used);
        if (used != parts[1].size()) throw std::invalid_argument("stop");
        n = std::stol(parts[2], &used);
        if (used != parts[2].size()) throw std::invalid_argument("count");
    } catch (const std::exception&) {
        throw UsageError("range must be start:stop:count, got '" + text + "'");
    }
    if (n < 1 || !std::isfinite(a) || !std::isfinite(b)) throw UsageError("range needs finite bounds and count >= 1");
    std::vector<double> out;
    for (long i = 0; i < n; ++i) {
        out.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Latent kinematics-aware SDE trajectory model"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scenario dataset");
    gen->add_option("--out", o.out, "Dataset JSON to write")->required();
    gen->add_option("--count", o.count, "Scenarios per family")->capture_default_str();
    gen->add_option("--families", o.families, "Comma-separated families (default: all)");
    gen->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
    gen->add_option("--noise", o.noise, "Observation noise sigma in meters")->capture_default_str();
    gen->add_option("--T", o.T, "Future steps")->capture_default_str();
    gen->add_option("--k", o.k, "History steps")->capture_default_str();

    auto* train = app.add_subcommand("train", "Train a model (writes model.json, last.json, loss_history.csv)");
    train->add_option("--data", o.data, "Dataset JSON")->required();
    train->add_option("--out", o.out, "Output directory")->required();
    train->add_option("--config", o.config, "key = value run configuration");
    train->add_option("--epochs", o.epochs, "Override epochs");
    train->add_option("--lambda-kin", o.lambda_kin, "Override lambda_kin");
    train->add_option("--lambda-reg", o.lambda_reg, "Override lambda_reg");
    train->add_option("--learning-rate", o.learning_rate, "Override learning_rate");
    train->add_option("--optimizer", o.optimizer, "Override optimizer (sgd|adam)");
    train->add_flag("--keep-epochs", o.keep_epochs, "Also write epoch_NNN.json every epoch");

    auto* predict = app.add_subcommand("predict", "Deterministic predictions and ADE/FDE");
    predict->add_option("--model", o.model, "Checkpoint")->required();
    predict->add_option("--data", o.data, "Dataset JSON")->required();
    predict->add_option("--out", o.out, "Predictions JSON");
    predict->add_option("--report", o.report, "ADE/FDE report JSON");

    auto* generate = app.add_subcommand("generate", "Generate trajectories with latent overrides");
    generate->add_option("--model", o.model, "Checkpoint")->required();
    generate->add_option("--data", o.data, "Dataset JSON")->required();
    generate->add_option("--scenario", o.scenario_id, "Scenario id")->required();
    generate->add_option("--samples", o.samples, "Number of samples")->capture_default_str();
    generate->add_option("--seed", o.seed, "Noise seed")->capture_default_str();
    generate->add_option("--x", o.off_x, "z0 x override");
    generate->add_option("--y", o.off_y, "z0 y override");
    generate->add_option("--v", o.off_v, "z0 v override");
    generate->add_option("--psi", o.off_psi, "z0 psi override");
    generate->add_option("--sem", o.sem, "sem override a,b,c,d");
    generate->add_flag("--absolute", o.absolute, "Overrides replace values instead of offsetting them");
    generate->add_option("--out", o.out, "Response JSON (default: stdout)");

    auto* sweep = app.add_subcommand("sweep", "Sweep one z0 component over a grid");
    sweep->add_option("--model", o.model, "Checkpoint")->required();
    sweep->add_option("--data", o.data, "Dataset JSON")->required();
    sweep->add_option("--component", o.component, "x, y, v or psi")->required();
    sweep->add_option("--range", o.range, "start:stop:count")->required();
    sweep->add_option("--family", o.family, "Only scenarios of this family");
    sweep->add_option("--limit", o.limit, "At most this many scenarios");
    sweep->add_option("--seed", o.seed, "Noise seed for --stochastic")->capture_default_str();
    sweep->add_option("--bins", o.bins, "Histogram bins")->capture_default_str();
    sweep->add_flag("--stochastic", o.stochastic, "Sample z0 and Brownian noise instead of the mean rollout");
    sweep->add_flag("--absolute", o.absolute, "Grid values replace the component instead of offsetting it");
    sweep->add_option("--out", o.out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Metrics report");
    eval->add_option("--model", o.model, "Checkpoint")->required();
    eval->add_option("--data", o.data, "Dataset JSON")->required();
    eval->add_option("--seed", o.seed, "Generation seed")->capture_default_str();
    eval->add_option("--samples", o.samples, "Generated samples per scenario")->capture_default_str();
    eval->add_option("--bins", o.bins, "Histogram bins")->capture_default_str();
    eval->add_option("--pareto", o.pareto, "Reference generalized Pareto shape,scale,location");
    eval->add_option("--out", o.out, "Report JSON");
    eval->add_option("--histograms", o.histograms, "Directory for histogram CSVs");

    auto* serve = app.add_subcommand("serve", "HTTP API for generation");
    serve->add_option("--model", o.model, "Checkpoint")->required();
    serve->add_option("--data", o.data, "Dataset JSON")->required();
    serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    serve->add_option("--port", o.port, "Port")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train(o, out, err);
        if (predict->parsed()) return cmd_predict(o, out);
        if (generate->parsed()) return cmd_generate(o, out);
        if (sweep->parsed()) return cmd_sweep(o, out);
        if (eval->parsed()) return cmd_eval(o, out);
        if (serve->parsed()) return cmd_serve(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const training::ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const data::DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const ad::CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kUsage;
}

}  // namespace lksde::cli
