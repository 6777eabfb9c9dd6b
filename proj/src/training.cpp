#include "lksde/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "lksde/ad/checkpoint.hpp"
#include "lksde/seed.hpp"

namespace lksde::training {

using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("optimizer must be sgd or adam, got '" + s + "'");
}

// Parses `text` into a JSON value of the same kind as `like`.
nlohmann::json parse_like(const nlohmann::json& like, const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        if (like.is_number_unsigned()) {
            if (!text.empty() && text.front() == '-') throw std::invalid_argument("negative");
            const unsigned long long v = std::stoull(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing");
            return v;
        }
        if (like.is_number()) {
            const double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument("trailing");
            return v;
        }
        if (like.is_string()) return text;
        if (like.is_array()) {
            nlohmann::json arr = nlohmann::json::array();
            std::stringstream ss(text);
            std::string item;
            while (std::getline(ss, item, ',')) arr.push_back(parse_like(like.front(), key, trim(item)));
            if (arr.size() != like.size()) throw std::invalid_argument("wrong element count");
            return arr;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad value for '" + key + "': '" + text + "'");
}

}  // namespace

void TrainConfig::validate() const {
    if (T == 0 || k < 2) throw ConfigError("T must be >= 1 and k >= 2");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(lambda_reg >= 0.0) || !(lambda_kin >= 0.0)) throw ConfigError("loss weights must be non-negative");
    double total = 0.0;
    for (double r : split) {
        if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    try {
        network().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

nets::NetworkConfig TrainConfig::network() const {
    nets::NetworkConfig n;
    n.horizon = T;
    n.history = k;
    n.feature_width = feature_width;
    n.hidden = hidden;
    n.controller_hidden = controller_hidden;
    n.lane_points = lane_points;
    n.g_min = g_min;
    n.u2_max = u2_max;
    n.bicycle = bicycle;
    n.init_seed = mix_seed(seed, 0x1417);
    return n;
}

nlohmann::json TrainConfig::to_json() const {
    return {
        {"T", T},
        {"k", k},
        {"batch_size", batch_size},
        {"learning_rate", learning_rate},
        {"lambda_reg", lambda_reg},
        {"lambda_kin", lambda_kin},
        {"epochs", epochs},
        {"seed", seed},
        {"l_f", bicycle.l_f},
        {"l_r", bicycle.l_r},
        {"delta", bicycle.delta},
        {"g_min", g_min},
        {"u2_max", u2_max},
        {"optimizer", optimizer_name(optimizer)},
        {"split", split},
        {"feature_width", feature_width},
        {"hidden", hidden},
        {"controller_hidden", controller_hidden},
        {"lane_points", lane_points},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be an object");
    const nlohmann::json defaults = TrainConfig{}.to_json();
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    nlohmann::json merged = defaults;
    merged.update(j);
    TrainConfig c;
    try {
        c.T = merged.at("T").get<std::size_t>();
        c.k = merged.at("k").get<std::size_t>();
        c.batch_size = merged.at("batch_size").get<std::size_t>();
        c.learning_rate = merged.at("learning_rate").get<double>();
        c.lambda_reg = merged.at("lambda_reg").get<double>();
        c.lambda_kin = merged.at("lambda_kin").get<double>();
        c.epochs = merged.at("epochs").get<std::size_t>();
        c.seed = merged.at("seed").get<std::uint64_t>();
        c.bicycle = {merged.at("l_f").get<double>(), merged.at("l_r").get<double>(), merged.at("delta").get<double>()};
        c.g_min = merged.at("g_min").get<double>();
        c.u2_max = merged.at("u2_max").get<double>();
        c.optimizer = optimizer_from(merged.at("optimizer").get<std::string>());
        c.split = merged.at("split").get<std::array<double, 3>>();
        c.feature_width = merged.at("feature_width").get<std::size_t>();
        c.hidden = merged.at("hidden").get<std::size_t>();
        c.controller_hidden = merged.at("controller_hidden").get<std::size_t>();
        c.lane_points = merged.at("lane_points").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::parse(std::istream& in) {
    const nlohmann::json defaults = TrainConfig{}.to_json();
    nlohmann::json j = nlohmann::json::object();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!defaults.contains(key)) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
        j[key] = parse_like(defaults.at(key), key, value);
    }
    return from_json(j);
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse(in);
}

std::string TrainConfig::to_text() const {
    std::ostringstream out;
    out << std::setprecision(17);
    const nlohmann::json j = to_json();
    for (const auto& [key, value] : j.items()) {
        out << key << " = ";
        if (value.is_array()) {
            for (std::size_t i = 0; i < value.size(); ++i) out << (i ? ", " : "") << value[i].get<double>();
        } else if (value.is_string()) {
            out << value.get<std::string>();
        } else if (value.is_number_float()) {
            out << value.get<double>();
        } else {
            out << value.dump();
        }
        out << '\n';
    }
    return out.str();
}

Var smooth_l1(Graph& g, Var pred, const Tensor& truth) {
    if (pred.shape() != truth.shape()) throw ad::ShapeError("smooth_l1", pred.shape(), truth.shape());
    return ad::mean(ad::smooth_l1(pred - g.constant(truth)));
}

double smooth_l1(const Trajectory& pred, const Trajectory& truth) {
    if (pred.size() != truth.size()) {
        throw std::invalid_argument("smooth_l1: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) +
                                    " waypoints");
    }
    if (pred.empty()) return 0.0;
    auto term = [](double e) { return std::abs(e) < 1.0 ? 0.5 * e * e : std::abs(e) - 0.5; };
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        total += term(pred[i].x - truth[i].x) + term(pred[i].y - truth[i].y);
    }
    return total / static_cast<double>(2 * pred.size());
}

Tensor stacked_truth(std::span<const data::Scenario* const> batch, std::size_t horizon) {
    std::vector<Trajectory> local;
    local.reserve(batch.size());
    for (const data::Scenario* s : batch) {
        if (s->future_truth.size() != horizon) {
            throw data::DataError("scenario " + s->id + ": future has " + std::to_string(s->future_truth.size()) +
                                  " points, model horizon is " + std::to_string(horizon));
        }
        local.push_back(s->local_future());
    }
    return nets::stack_waypoints(local);
}

Losses compute_losses(Graph& g, const nets::Model& model, std::span<const data::Scenario* const> batch,
                      const nets::BatchNoise& noise, const LossWeights& weights) {
    Losses out;
    out.pass = nets::forward(g, model, batch, noise, true);
    const auto& lk = out.pass.lk;
    const auto& bike = *out.pass.bike;

    out.l_reg = nets::kl_regularizer(out.pass.posterior);

    Var sem = ad::detach(out.pass.context.sem);
    std::vector<Var> f, h, diff;
    for (std::size_t t = 0; t < lk.horizon(); ++t) {
        Var z = ad::detach(lk.states[t]);
        f.push_back(model.f_drift(g, z, sem, ad::detach(out.pass.context.ctx[t])));
        if (weights.anchor == KinAnchor::shared_state) {
            h.push_back(ad::detach(kinematics::bicycle_drift(z, model.pi.apply(g, z), model.config().bicycle)));
        } else {
            h.push_back(ad::detach(bike.drifts[t]));
        }
        diff.push_back(model.g_diff(g, z));
    }
    out.l_kin = sde::kinematic_kl_loss(f, h, diff);

    const Tensor truth = stacked_truth(batch, model.config().horizon);
    out.l_pred = smooth_l1(g, out.pass.decoded_lk, truth) + smooth_l1(g, out.pass.decoded_bike, truth);

    out.total = out.l_pred + out.l_reg * weights.lambda_reg + out.l_kin * weights.lambda_kin;
    return out;
}

Trainer::Trainer(nets::Model& model, const TrainConfig& config)
    : model_(model), config_(config), params_(model.params().all()), adam_(config.learning_rate) {
    config_.validate();
}

LossReport Trainer::train_step(std::span<const data::Scenario* const> batch, std::uint64_t noise_seed) {
    if (batch.empty()) throw TrainingError("train_step: empty batch");
    Graph g;
    const auto noise = nets::BatchNoise::sampled(batch.size(), config_.T, noise_seed);
    Losses l = compute_losses(g, model_, batch, noise, {config_.lambda_reg, config_.lambda_kin});
    LossReport r;
    r.l_reg = l.l_reg.value().item();
    r.l_kin = l.l_kin.value().item();
    r.l_pred = l.l_pred.value().item();
    r.total = l.total.value().item();
    if (!std::isfinite(r.total)) {
        std::ostringstream msg;
        msg << "non-finite loss (l_reg=" << r.l_reg << ", l_kin=" << r.l_kin << ", l_pred=" << r.l_pred
            << ") on batch starting with scenario " << batch.front()->id;
        throw TrainingError(msg.str());
    }
    model_.params().zero_grad();
    g.backward(l.total);
    if (config_.optimizer == OptimizerKind::adam) {
        adam_.step(params_);
    } else {
        ad::sgd_step(params_, config_.learning_rate);
    }
    return r;
}

double mean_ade(const nets::Model& model, std::span<const data::Scenario> scenarios) {
    if (scenarios.empty()) return 0.0;
    const auto preds = nets::predict(model, scenarios);
    double total = 0.0;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const Trajectory truth = scenarios[i].local_future();
        double sum = 0.0;
        for (std::size_t t = 0; t < truth.size(); ++t) sum += distance(preds[i][t], truth[t]);
        total += sum / static_cast<double>(truth.size());
    }
    return total / static_cast<double>(scenarios.size());
}

void write_loss_csv(std::ostream& out, std::span<const LossReport> history) {
    out << kLossCsvHeader << '\n' << std::setprecision(17);
    for (const auto& r : history) {
        out << r.epoch << ',' << r.batch << ',' << r.l_reg << ',' << r.l_kin << ',' << r.l_pred << ',' << r.total << '\n';
    }
}

namespace {

std::vector<Tensor> snapshot(const ad::ParameterStore& store) {
    std::vector<Tensor> out;
    for (const auto* p : store.all()) out.push_back(p->value);
    return out;
}

void restore(ad::ParameterStore& store, const std::vector<Tensor>& values) {
    auto params = store.all();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainResult train(nets::Model& model, std::span<const data::Scenario> train_set, std::span<const data::Scenario> val_set,
                  const TrainConfig& config, const TrainOutputs* outputs, const ProgressFn& progress) {
    config.validate();
    if (train_set.empty()) throw TrainingError("training set is empty");
    const nlohmann::json meta = {{"train_config", config.to_json()}};
    auto write = [&](const std::string& file, const nlohmann::json& extra) {
        if (!outputs) return;
        nlohmann::json m = meta;
        m.update(extra);
        save_model(outputs->directory / file, model, m);
    };

    TrainResult result;
    auto score = [&] { return val_set.empty() ? 0.0 : mean_ade(model, val_set); };
    result.best_val_ade = score();
    std::vector<Tensor> best = snapshot(model.params());

    Trainer trainer(model, config);
    std::vector<const data::Scenario*> order;
    for (const auto& s : train_set) order.push_back(&s);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::mt19937_64 rng(mix_seed(config.seed, 0xE90C, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::span<const data::Scenario* const> batch(order.data() + start, end - start);
            LossReport r = trainer.train_step(batch, mix_seed(config.seed, epoch, batches));
            r.epoch = epoch;
            r.batch = batches;
            epoch_total += r.total;
            result.history.push_back(r);
        }
        const double ade = score();
        result.val_ade.push_back(ade);
        // Without a validation set the latest epoch wins.
        if (val_set.empty() || ade < result.best_val_ade) {
            result.best_val_ade = ade;
            result.best_epoch = epoch;
            best = snapshot(model.params());
        }
        if (outputs && outputs->keep_epoch_checkpoints) {
            std::ostringstream name;
            name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".json";
            write(name.str(), {{"epoch", epoch}, {"val_ade", ade}});
        }
        if (progress) progress(epoch, epoch_total / static_cast<double>(batches), ade);
    }

    if (outputs) {
        write("last.json", {{"epoch", config.epochs}});
        restore(model.params(), best);
        write("model.json", {{"epoch", result.best_epoch}, {"val_ade", result.best_val_ade}});
        std::ofstream csv(outputs->directory / "loss_history.csv");
        if (!csv) throw TrainingError("cannot write loss history in " + outputs->directory.string());
        write_loss_csv(csv, result.history);
    } else {
        restore(model.params(), best);
    }
    return result;
}

void save_model(const std::filesystem::path& path, const nets::Model& model, const nlohmann::json& extra) {
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["network"] = model.config().to_json();
    ad::save_checkpoint(path, model.params(), meta);
}

nets::Model model_from_checkpoint(const ad::Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("network")) throw ad::CheckpointError("checkpoint has no network configuration");
    nets::NetworkConfig cfg;
    try {
        cfg = nets::NetworkConfig::from_json(ckpt.metadata.at("network"));
    } catch (const std::exception& e) {
        throw ad::CheckpointError(std::string("bad network configuration: ") + e.what());
    }
    nets::Model model(cfg);
    ad::load_parameters(model.params(), ckpt);
    return model;
}

nets::Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(ad::read_checkpoint(path)); }

}  // namespace lksde::training
