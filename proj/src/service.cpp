#include "lksde/service.hpp"

#include <httplib.h>

#include <cmath>

#include "lksde/generation.hpp"
#include "lksde/metrics.hpp"
#include "lksde/seed.hpp"
#include "lksde/training.hpp"

namespace lksde::service {

namespace {

constexpr std::array<const char*, 4> kComponents = {"x", "y", "v", "psi"};
constexpr std::size_t kMaxSamples = 256;

nlohmann::json points_json(const Trajectory& t) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : t) out.push_back({p.x, p.y});
    return out;
}

double finite_number(const nlohmann::json& v, const std::string& what) {
    if (!v.is_number()) throw RequestError(Status::bad_request, what + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw RequestError(Status::bad_request, what + " must be finite");
    return d;
}

}  // namespace

GenerateRequest GenerateRequest::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw RequestError(Status::bad_request, "request body must be a JSON object");
    static const std::array<const char*, 5> known = {"scenario_id", "scenario", "latent_overrides", "noise_seed",
                                                     "num_samples"};
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw RequestError(Status::bad_request, "unknown field '" + key + "'");
        }
    }
    GenerateRequest r;
    if (j.contains("scenario_id")) {
        if (!j["scenario_id"].is_string()) throw RequestError(Status::bad_request, "scenario_id must be a string");
        r.scenario_id = j["scenario_id"].get<std::string>();
    }
    if (j.contains("scenario")) {
        try {
            r.scenario = data::scenario_from_json(j["scenario"]);
        } catch (const std::exception& e) {
            throw RequestError(Status::bad_request, std::string("inline scenario: ") + e.what());
        }
    }
    if (r.scenario_id.has_value() == r.scenario.has_value()) {
        throw RequestError(Status::bad_request, "give exactly one of scenario_id and scenario");
    }
    if (j.contains("noise_seed")) {
        if (!j["noise_seed"].is_number_unsigned()) {
            throw RequestError(Status::bad_request, "noise_seed must be a non-negative integer");
        }
        r.noise_seed = j["noise_seed"].get<std::uint64_t>();
    }
    if (j.contains("num_samples")) {
        if (!j["num_samples"].is_number_unsigned()) {
            throw RequestError(Status::bad_request, "num_samples must be a positive integer");
        }
        r.num_samples = j["num_samples"].get<std::size_t>();
    }
    if (r.num_samples == 0 || r.num_samples > kMaxSamples) {
        throw RequestError(Status::bad_request, "num_samples must lie in [1, " + std::to_string(kMaxSamples) + "]");
    }
    if (j.contains("latent_overrides")) {
        const auto& o = j["latent_overrides"];
        if (!o.is_object()) throw RequestError(Status::bad_request, "latent_overrides must be an object");
        for (const auto& [key, value] : o.items()) {
            if (key != "z0" && key != "sem" && key != "mode") {
                throw RequestError(Status::bad_request, "unknown latent_overrides field '" + key + "'");
            }
        }
        if (o.contains("z0")) {
            if (!o["z0"].is_object()) throw RequestError(Status::bad_request, "z0 overrides must be an object");
            for (const auto& [key, value] : o["z0"].items()) {
                auto it = std::find_if(kComponents.begin(), kComponents.end(), [&](const char* c) { return key == c; });
                if (it == kComponents.end()) throw RequestError(Status::bad_request, "unknown z0 component '" + key + "'");
                r.overrides.z0[static_cast<std::size_t>(it - kComponents.begin())] = finite_number(value, "z0." + key);
            }
        }
        if (o.contains("sem")) {
            if (!o["sem"].is_array() || o["sem"].size() != nets::kSemDim) {
                throw RequestError(Status::bad_request, "sem override must be an array of 4 numbers");
            }
            std::array<double, nets::kSemDim> sem{};
            for (std::size_t i = 0; i < nets::kSemDim; ++i) sem[i] = finite_number(o["sem"][i], "sem");
            r.overrides.sem = sem;
        }
        if (o.contains("mode")) {
            const auto mode = o["mode"].is_string() ? o["mode"].get<std::string>() : std::string();
            if (mode != "offset" && mode != "absolute") {
                throw RequestError(Status::bad_request, "mode must be \"offset\" or \"absolute\"");
            }
            r.overrides.absolute = mode == "absolute";
        }
    }
    return r;
}

nlohmann::json GenerateRequest::to_json() const {
    nlohmann::json j;
    if (scenario_id) j["scenario_id"] = *scenario_id;
    if (scenario) j["scenario"] = data::scenario_to_json(*scenario);
    nlohmann::json o = nlohmann::json::object();
    nlohmann::json z0 = nlohmann::json::object();
    for (std::size_t i = 0; i < kComponents.size(); ++i) {
        if (overrides.z0[i]) z0[kComponents[i]] = *overrides.z0[i];
    }
    if (!z0.empty()) o["z0"] = z0;
    if (overrides.sem) o["sem"] = *overrides.sem;
    o["mode"] = overrides.absolute ? "absolute" : "offset";
    j["latent_overrides"] = o;
    j["noise_seed"] = noise_seed;
    j["num_samples"] = num_samples;
    return j;
}

ScenarioCatalog::ScenarioCatalog(std::vector<data::Scenario> scenarios) : scenarios_(std::move(scenarios)) {
    for (std::size_t i = 0; i < scenarios_.size(); ++i) {
        if (!index_.emplace(scenarios_[i].id, i).second) {
            throw data::DataError("duplicate scenario id '" + scenarios_[i].id + "'");
        }
    }
}

const data::Scenario* ScenarioCatalog::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &scenarios_[it->second];
}

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint) {
    const auto ckpt = ad::read_checkpoint(checkpoint);
    return std::make_shared<const ModelSnapshot>(
        ModelSnapshot{training::model_from_checkpoint(ckpt), ckpt.metadata, checkpoint.string()});
}

ModelHost::ModelHost(std::shared_ptr<const ModelSnapshot> initial) : snapshot_(std::move(initial)) {
    if (!snapshot_) throw std::invalid_argument("ModelHost needs a model");
}

std::shared_ptr<const ModelSnapshot> ModelHost::current() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
}

void ModelHost::swap(std::shared_ptr<const ModelSnapshot> next) {
    if (!next) throw std::invalid_argument("ModelHost::swap needs a model");
    std::lock_guard lock(mutex_);
    snapshot_.swap(next);
}

void ModelHost::reload(const std::filesystem::path& checkpoint) { swap(load_snapshot(checkpoint)); }

nlohmann::json serve_generate(const ModelSnapshot& snapshot, const ScenarioCatalog& catalog,
                              const GenerateRequest& request) {
    const data::Scenario* scenario = nullptr;
    if (request.scenario_id) {
        scenario = catalog.find(*request.scenario_id);
        if (!scenario) throw RequestError(Status::not_found, "unknown scenario id '" + *request.scenario_id + "'");
    } else {
        scenario = &*request.scenario;
    }
    const auto& model = snapshot.model;
    if (scenario->target_history.size() != model.config().history) {
        throw RequestError(Status::bad_request, "scenario history has " +
                                                    std::to_string(scenario->target_history.size()) +
                                                    " points, model expects " +
                                                    std::to_string(model.config().history));
    }

    std::vector<const data::Scenario*> rows(request.num_samples, scenario);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < request.num_samples; ++i) seeds.push_back(mix_seed(request.noise_seed, i));
    const auto samples = nets::generate(model, rows, seeds, &request.overrides);

    const double delta = model.config().bicycle.delta;
    const double u2_max = model.config().u2_max;
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto jerk = metrics::jerk_profile(s.local, delta);
        double sum = 0.0, peak = 0.0;
        for (double j : jerk) sum += j, peak = std::max(peak, j);
        nlohmann::json latents = nlohmann::json::array();
        for (const auto& z : s.latents) latents.push_back(z.to_array());
        nlohmann::json controls = nlohmann::json::array();
        for (std::size_t t = 0; t < s.controls.size(); ++t) {
            controls.push_back({{"u1", s.controls[t].u1},
                                {"u2", s.controls[t].u2},
                                {"u2_normalized", s.controls[t].u2 / u2_max},
                                {"beta", s.slip[t]}});
        }
        out.push_back({
            {"seed", seeds[i]},
            {"trajectory", points_json(s.world)},
            {"trajectory_local", points_json(s.local)},
            {"jerk",
             {{"mean_abs", sum / static_cast<double>(jerk.size())},
              {"max_abs", peak},
              {"violation", peak > metrics::kJerkThreshold}}},
            {"latents", std::move(latents)},
            {"controls", std::move(controls)},
        });
    }
    return {
        {"scenario_id", scenario->id},
        {"num_samples", samples.size()},
        {"noise_seed", request.noise_seed},
        {"jerk_threshold", metrics::kJerkThreshold},
        {"samples", std::move(out)},
    };
}

nlohmann::json scenarios_json(const ScenarioCatalog& catalog) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : catalog.all()) {
        nlohmann::json lanes = nlohmann::json::array();
        for (const auto& l : s.lanes) lanes.push_back(points_json(l));
        list.push_back({
            {"id", s.id},
            {"family", s.family},
            {"frame", {{"x", s.frame.x}, {"y", s.frame.y}, {"heading", s.frame.heading}}},
            {"lanes", std::move(lanes)},
            {"target_history", points_json(s.target_history)},
            {"future_truth", points_json(s.future_truth)},
        });
    }
    return {{"count", list.size()}, {"scenarios", std::move(list)}};
}

nlohmann::json model_info_json(const ModelSnapshot& snapshot) {
    nlohmann::json groups = nlohmann::json::object();
    const auto& store = snapshot.model.params();
    for (const auto& name : store.group_names()) {
        std::size_t count = 0;
        for (const auto* p : store.all()) {
            if (ad::group_of(p->name) == name) count += p->value.size();
        }
        groups[name] = count;
    }
    return {
        {"network", snapshot.model.config().to_json()},
        {"parameter_count", store.parameter_count()},
        {"parameter_groups", std::move(groups)},
        {"metadata", snapshot.metadata},
        {"source", snapshot.source},
    };
}

void install_routes(httplib::Server& server, const ModelHost& host, const ScenarioCatalog& catalog) {
    auto send = [](httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto error = [send](httplib::Response& res, int status, const std::string& msg) {
        send(res, status, {{"error", msg}, {"status", status}});
    };

    server.Post("/generate", [&host, &catalog, send, error](const httplib::Request& req, httplib::Response& res) {
        try {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::parse_error& e) {
                throw RequestError(Status::bad_request, std::string("malformed JSON: ") + e.what());
            }
            const auto snapshot = host.current();
            send(res, 200, serve_generate(*snapshot, catalog, GenerateRequest::from_json(body)));
        } catch (const RequestError& e) {
            error(res, static_cast<int>(e.status()), e.what());
        } catch (const std::exception& e) {
            error(res, 500, e.what());
        }
    });
    server.Get("/scenarios", [&catalog, send](const httplib::Request&, httplib::Response& res) {
        send(res, 200, scenarios_json(catalog));
    });
    server.Get("/model/info", [&host, send](const httplib::Request&, httplib::Response& res) {
        send(res, 200, model_info_json(*host.current()));
    });
    server.Get("/healthz", [send](const httplib::Request&, httplib::Response& res) {
        send(res, 200, {{"status", "ok"}});
    });
}

}  // namespace lksde::service
