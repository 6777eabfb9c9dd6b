#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lksde/networks.hpp"
#include "lksde/scenario.hpp"

namespace httplib {
class Server;
}

namespace lksde::service {

enum class Status { bad_request = 400, not_found = 404 };

class RequestError : public std::runtime_error {
public:
    RequestError(Status status, const std::string& what) : std::runtime_error(what), status_(status) {}
    Status status() const noexcept { return status_; }

private:
    Status status_;
};

struct GenerateRequest {
    std::optional<std::string> scenario_id;
    std::optional<data::Scenario> scenario;  // inline alternative to scenario_id
    nets::LatentOverrides overrides;
    std::uint64_t noise_seed = 0;
    std::size_t num_samples = 1;

    static GenerateRequest from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Scenarios addressable by id.
class ScenarioCatalog {
public:
    ScenarioCatalog() = default;
    explicit ScenarioCatalog(std::vector<data::Scenario> scenarios);

    const data::Scenario* find(const std::string& id) const;
    const std::vector<data::Scenario>& all() const { return scenarios_; }

private:
    std::vector<data::Scenario> scenarios_;
    std::map<std::string, std::size_t> index_;
};

/// Immutable model plus what /model/info reports about it.
struct ModelSnapshot {
    nets::Model model;
    nlohmann::json metadata;
    std::string source;
};

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& checkpoint);

/// Holds the current snapshot. Readers keep the pointer they got for the
/// whole request, so a swap never affects a request in flight.
class ModelHost {
public:
    explicit ModelHost(std::shared_ptr<const ModelSnapshot> initial);

    std::shared_ptr<const ModelSnapshot> current() const;
    void swap(std::shared_ptr<const ModelSnapshot> next);
    void reload(const std::filesystem::path& checkpoint);

private:
    mutable std::mutex mutex_;
    std::shared_ptr<const ModelSnapshot> snapshot_;
};

/// Encodes the scenario, applies overrides, rolls out the LK-SDE once per
/// sample with seed mix_seed(noise_seed, i) and decodes. Depends only on the
/// model and the request.
nlohmann::json serve_generate(const ModelSnapshot& snapshot, const ScenarioCatalog& catalog,
                              const GenerateRequest& request);

nlohmann::json scenarios_json(const ScenarioCatalog& catalog);
nlohmann::json model_info_json(const ModelSnapshot& snapshot);

/// Registers POST /generate, GET /scenarios, GET /model/info, GET /healthz.
void install_routes(httplib::Server& server, const ModelHost& host, const ScenarioCatalog& catalog);

}  // namespace lksde::service
