#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lksde/kinematics.hpp"
#include "lksde/trajectory.hpp"

namespace lksde::data {

/// Malformed or unreadable dataset input.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One sample: observed history of the target agent and its neighbours,
/// lane centerlines, and the ground-truth future, all in world coordinates.
/// The last history point precedes the first future point by one period.
struct Scenario {
    std::string id;
    std::string family;
    Trajectory target_history;
    std::vector<Trajectory> neighbor_histories;
    std::vector<Trajectory> lanes;
    Trajectory future_truth;
    Frame frame;

    /// Future in the scenario's relative frame.
    Trajectory local_future() const { return frame.to_local(future_truth); }
};

/// Origin at the last observed point, x-axis along the chord from the first
/// to the last history point.
Frame reference_frame(const Trajectory& history);

enum class Family { straight, lane_change, left_turn, right_turn, stop_and_go };

std::string to_string(Family f);
Family family_from_string(const std::string& name);
inline constexpr std::array<Family, 5> kAllFamilies = {Family::straight, Family::lane_change, Family::left_turn,
                                                       Family::right_turn, Family::stop_and_go};

struct ScenarioFamily {
    Family kind = Family::straight;
    double noise_level = 0.05;                       // waypoint observation noise sigma
    std::array<double, 2> speed_range = {5.0, 15.0};  // initial speed, m/s
    std::array<double, 2> curvature_range = {0.0, 0.0};  // 1/m; peak curvature of the maneuver
    std::size_t history_steps = 20;
    std::size_t horizon = 30;
    kinematics::BicycleParams bicycle;

    void validate() const;
};

/// Reasonable defaults per maneuver kind.
ScenarioFamily default_family(Family kind);

/// Deterministic under `seed`. Each path is a rollout of the kinematic
/// bicycle model under scripted controls plus Gaussian observation noise.
std::vector<Scenario> generate_scenarios(const ScenarioFamily& family, std::size_t count, std::uint64_t seed);

/// Noise-free positions of the scripted maneuver, history followed by future.
/// Exposed so tests can check the generator against the kinematics.
struct ManeuverPath {
    Trajectory positions;
    std::vector<kinematics::LatentState> states;
    std::vector<kinematics::ControlInput> controls;
};
ManeuverPath simulate_maneuver(const ScenarioFamily& family, std::uint64_t seed);

inline constexpr const char* kDatasetSchema = "lksde-scenarios";
inline constexpr int kDatasetVersion = 1;

nlohmann::json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

nlohmann::json dataset_to_json(std::span<const Scenario> scenarios);
std::vector<Scenario> dataset_from_json(const nlohmann::json& doc);

void save_dataset(std::span<const Scenario> scenarios, const std::filesystem::path& path);
std::vector<Scenario> load_dataset(const std::filesystem::path& path);

struct Split {
    std::vector<Scenario> train;
    std::vector<Scenario> val;
    std::vector<Scenario> test;
};

/// Shuffled, disjoint, covering split. Ratios must be non-negative and sum to 1.
Split split(std::span<const Scenario> scenarios, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Translates every coordinate (including the frame origin) by (dx, dy).
Scenario translated(const Scenario& s, double dx, double dy);

}  // namespace lksde::data
