#include "lksde/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "lksde/seed.hpp"

namespace lksde::data {

using kinematics::BicycleParams;
using kinematics::ControlInput;
using kinematics::LatentState;

namespace {

constexpr double kLaneWidth = 3.5;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Steering angle that yields path curvature kappa under constant control.
double steering_for_curvature(double kappa, const BicycleParams& p) {
    const double beta = std::asin(std::clamp(kappa * p.l_r, -0.99, 0.99));
    return std::atan(std::tan(beta) / p.rear_ratio());
}

Trajectory straight_line(Point2 start, double heading, double back, double ahead, double spacing) {
    Trajectory line;
    const double c = std::cos(heading), s = std::sin(heading);
    for (double d = -back; d <= ahead + 1e-9; d += spacing) line.push_back({start.x + d * c, start.y + d * s});
    return line;
}

Trajectory offset_line(const Trajectory& line, double heading, double lateral) {
    Trajectory out;
    const double nx = -std::sin(heading), ny = std::cos(heading);
    for (const auto& p : line) out.push_back({p.x + lateral * nx, p.y + lateral * ny});
    return out;
}

// Lane following the driven path, extended straight at both ends.
Trajectory path_lane(const ManeuverPath& path) {
    Trajectory lane;
    const auto& first = path.states.front();
    const auto& last = path.states.back();
    const double c0 = std::cos(first.psi), s0 = std::sin(first.psi);
    for (int i = 10; i >= 1; --i) lane.push_back({first.x - 2.0 * i * c0, first.y - 2.0 * i * s0});
    for (std::size_t i = 0; i < path.positions.size(); i += 2) lane.push_back(path.positions[i]);
    const double c1 = std::cos(last.psi), s1 = std::sin(last.psi);
    for (int i = 1; i <= 10; ++i) lane.push_back({last.x + 2.0 * i * c1, last.y + 2.0 * i * s1});
    return lane;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw DataError(msg);
}

nlohmann::json points_to_json(const Trajectory& t) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : t) arr.push_back({p.x, p.y});
    return arr;
}

Trajectory points_from_json(const nlohmann::json& j, const std::string& where) {
    require(j.is_array(), where + ": expected an array of [x, y] points");
    Trajectory t;
    t.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& p = j[i];
        require(p.is_array() && p.size() == 2 && p[0].is_number() && p[1].is_number(),
                where + "[" + std::to_string(i) + "]: expected [x, y]");
        Point2 q{p[0].get<double>(), p[1].get<double>()};
        require(std::isfinite(q.x) && std::isfinite(q.y), where + "[" + std::to_string(i) + "]: non-finite coordinate");
        t.push_back(q);
    }
    return t;
}

}  // namespace

Frame reference_frame(const Trajectory& history) {
    if (history.empty()) throw DataError("reference_frame: empty history");
    const Point2& last = history.back();
    double heading = 0.0;
    // Fall back to later chords when the vehicle barely moved.
    for (std::size_t i = 0; i + 1 < history.size(); ++i) {
        const double dx = last.x - history[i].x, dy = last.y - history[i].y;
        if (std::hypot(dx, dy) > 0.5) {
            heading = std::atan2(dy, dx);
            break;
        }
    }
    return {last.x, last.y, heading};
}

std::string to_string(Family f) {
    switch (f) {
        case Family::straight: return "straight";
        case Family::lane_change: return "lane-change";
        case Family::left_turn: return "left-turn";
        case Family::right_turn: return "right-turn";
        case Family::stop_and_go: return "stop-and-go";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    for (Family f : kAllFamilies) {
        if (to_string(f) == name) return f;
    }
    throw DataError("unknown scenario family '" + name + "'");
}

void ScenarioFamily::validate() const {
    bicycle.validate();
    require(noise_level >= 0.0, "noise_level must be non-negative");
    require(speed_range[0] > 0.0 && speed_range[0] <= speed_range[1], "speed_range must be positive and ordered");
    require(curvature_range[0] >= 0.0 && curvature_range[0] <= curvature_range[1],
            "curvature_range must be non-negative and ordered");
    require(curvature_range[1] * bicycle.l_r < 0.99, "curvature_range exceeds what the bicycle model can steer");
    require(history_steps >= 2 && horizon >= 1, "history_steps >= 2 and horizon >= 1 required");
    const bool turning = kind == Family::lane_change || kind == Family::left_turn || kind == Family::right_turn;
    require(!turning || curvature_range[1] > 0.0, to_string(kind) + " needs a positive curvature range");
}

ScenarioFamily default_family(Family kind) {
    ScenarioFamily f;
    f.kind = kind;
    switch (kind) {
        case Family::straight: f.speed_range = {5.0, 15.0}; break;
        case Family::lane_change:
            f.speed_range = {8.0, 15.0};
            f.curvature_range = {0.001, 0.05};
            break;
        case Family::left_turn:
        case Family::right_turn:
            f.speed_range = {4.0, 9.0};
            f.curvature_range = {1.0 / 35.0, 1.0 / 12.0};
            break;
        case Family::stop_and_go: f.speed_range = {8.0, 14.0}; break;
    }
    return f;
}

ManeuverPath simulate_maneuver(const ScenarioFamily& family, std::uint64_t seed) {
    family.validate();
    std::mt19937_64 rng(seed);
    const auto& bp = family.bicycle;
    const double dt = bp.delta;
    const int k = static_cast<int>(family.history_steps);
    const int n = static_cast<int>(family.history_steps + family.horizon);

    LatentState s{uniform(rng, -200.0, 200.0), uniform(rng, -200.0, 200.0),
                  uniform(rng, family.speed_range[0], family.speed_range[1]),
                  uniform(rng, -std::numbers::pi, std::numbers::pi)};
    const double psi0 = s.psi;
    const double v0 = s.v;
    const double dir = (family.kind == Family::right_turn) ? -1.0
                       : (family.kind == Family::left_turn) ? 1.0
                                                            : (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);

    // Maneuver script parameters.
    int start = 0, period = 0;
    double amplitude = 0.0, decel = 0.0, accel = 0.0, v_low = 0.0;
    switch (family.kind) {
        case Family::straight: break;
        case Family::lane_change: {
            period = uniform_int(rng, 25, 40);
            start = k - 10 + uniform_int(rng, 0, 15);
            const double span = period * dt;
            amplitude = 2.0 * std::numbers::pi * kLaneWidth / (v0 * v0 * span * span);
            amplitude = std::clamp(amplitude, family.curvature_range[0], family.curvature_range[1]);
            break;
        }
        case Family::left_turn:
        case Family::right_turn:
            amplitude = uniform(rng, family.curvature_range[0], family.curvature_range[1]);
            start = k - 8 + uniform_int(rng, 0, 16);
            period = 10;  // ramp length
            break;
        case Family::stop_and_go:
            decel = uniform(rng, 1.5, 3.0);
            accel = uniform(rng, 1.0, 2.0);
            v_low = v0 * uniform(rng, 0.2, 0.4);
            start = k - 3 + uniform_int(rng, 0, 8);
            break;
    }

    ManeuverPath path;
    int turn_phase = 0;  // 0 before, 1 ramp up, 2 hold, 3 ramp down, 4 done
    int phase_step = 0;
    bool braking = true;
    for (int i = 0; i < n; ++i) {
        path.states.push_back(s);
        path.positions.push_back({s.x, s.y});
        if (i + 1 == n) break;

        double kappa = 0.0, u1 = 0.0;
        switch (family.kind) {
            case Family::straight: break;
            case Family::lane_change:
                if (i >= start && i < start + period) {
                    kappa = dir * amplitude * std::sin(2.0 * std::numbers::pi * (i - start) / period);
                }
                break;
            case Family::left_turn:
            case Family::right_turn: {
                const double turned = std::abs(s.psi - psi0);
                const double ramp_down_turn = 0.5 * s.v * amplitude * period * dt;
                if (turn_phase == 0 && i >= start) turn_phase = 1, phase_step = 0;
                if (turn_phase == 1 && phase_step >= period) turn_phase = 2;
                if (turn_phase == 2 && turned >= std::numbers::pi / 2 - ramp_down_turn) turn_phase = 3, phase_step = 0;
                if (turn_phase == 3 && phase_step >= period) turn_phase = 4;
                double frac = 0.0;
                if (turn_phase == 1) frac = static_cast<double>(phase_step + 1) / period;
                if (turn_phase == 2) frac = 1.0;
                if (turn_phase == 3) frac = 1.0 - static_cast<double>(phase_step + 1) / period;
                kappa = dir * amplitude * frac;
                ++phase_step;
                break;
            }
            case Family::stop_and_go:
                if (i >= start) {
                    if (braking && s.v <= v_low) braking = false;
                    u1 = braking ? -decel : accel;
                }
                u1 = std::max(u1, -s.v / dt);
                break;
        }
        ControlInput u{u1, kappa == 0.0 ? 0.0 : steering_for_curvature(kappa, bp)};
        path.controls.push_back(u);
        s = kinematics::bicycle_drift(s, u, bp);
    }
    return path;
}

std::vector<Scenario> generate_scenarios(const ScenarioFamily& family, std::size_t count, std::uint64_t seed) {
    family.validate();
    if (count == 0) throw DataError("generate_scenarios: count must be at least 1");
    const std::size_t k = family.history_steps;
    std::vector<Scenario> out;
    out.reserve(count);
    for (std::size_t idx = 0; idx < count; ++idx) {
        const std::uint64_t scenario_seed = mix_seed(seed, static_cast<std::uint64_t>(family.kind), idx);
        ManeuverPath path = simulate_maneuver(family, scenario_seed);
        std::mt19937_64 rng(mix_seed(scenario_seed, 1));
        std::normal_distribution<double> noise(0.0, 1.0);
        auto observe = [&](Point2 p) {
            if (family.noise_level > 0.0) {
                p.x += family.noise_level * noise(rng);
                p.y += family.noise_level * noise(rng);
            }
            return p;
        };

        Scenario sc;
        sc.id = to_string(family.kind) + "-" + std::to_string(seed) + "-" + std::to_string(idx);
        sc.family = to_string(family.kind);
        for (std::size_t i = 0; i < path.positions.size(); ++i) {
            (i < k ? sc.target_history : sc.future_truth).push_back(observe(path.positions[i]));
        }

        const auto& s0 = path.states.front();
        const Point2 start{s0.x, s0.y};
        const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        switch (family.kind) {
            case Family::straight:
            case Family::stop_and_go: {
                auto ego = straight_line(start, s0.psi, 20.0, 80.0, 4.0);
                sc.lanes.push_back(ego);
                sc.lanes.push_back(offset_line(ego, s0.psi, side * kLaneWidth));
                break;
            }
            case Family::lane_change: {
                auto ego = straight_line(start, s0.psi, 20.0, 80.0, 4.0);
                const double dx = path.states.back().x - s0.x;
                const double dy = path.states.back().y - s0.y;
                const double shift = -std::sin(s0.psi) * dx + std::cos(s0.psi) * dy;
                sc.lanes.push_back(ego);
                sc.lanes.push_back(offset_line(ego, s0.psi, shift >= 0.0 ? kLaneWidth : -kLaneWidth));
                break;
            }
            case Family::left_turn:
            case Family::right_turn:
                sc.lanes.push_back(path_lane(path));
                sc.lanes.push_back(straight_line(start, s0.psi, 20.0, 60.0, 4.0));
                break;
        }

        const int neighbors = uniform_int(rng, 0, 3);
        for (int j = 0; j < neighbors; ++j) {
            const double lateral = kLaneWidth * uniform_int(rng, -1, 1);
            double longitudinal = uniform(rng, 10.0, 30.0);
            if (uniform(rng, 0.0, 1.0) < 0.5) longitudinal = -longitudinal;
            const double speed = uniform(rng, 5.0, 15.0);
            const double c = std::cos(s0.psi), s = std::sin(s0.psi);
            Trajectory h;
            for (std::size_t i = 0; i < k; ++i) {
                const double d = longitudinal + speed * family.bicycle.delta * static_cast<double>(i);
                h.push_back(observe({start.x + d * c - lateral * s, start.y + d * s + lateral * c}));
            }
            sc.neighbor_histories.push_back(std::move(h));
        }
        sc.frame = reference_frame(sc.target_history);
        out.push_back(std::move(sc));
    }
    return out;
}

nlohmann::json scenario_to_json(const Scenario& s) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& n : s.neighbor_histories) neighbors.push_back(points_to_json(n));
    nlohmann::json lanes = nlohmann::json::array();
    for (const auto& l : s.lanes) lanes.push_back(points_to_json(l));
    return {
        {"id", s.id},
        {"family", s.family},
        {"target_history", points_to_json(s.target_history)},
        {"neighbor_histories", std::move(neighbors)},
        {"lanes", std::move(lanes)},
        {"future_truth", points_to_json(s.future_truth)},
        {"frame", {{"x", s.frame.x}, {"y", s.frame.y}, {"heading", s.frame.heading}}},
    };
}

Scenario scenario_from_json(const nlohmann::json& j) {
    require(j.is_object(), "scenario: expected an object");
    auto field = [&](const char* name) -> const nlohmann::json& {
        auto it = j.find(name);
        require(it != j.end(), std::string("missing field '") + name + "'");
        return *it;
    };
    Scenario s;
    const auto& id = field("id");
    require(id.is_string(), "field 'id' must be a string");
    s.id = id.get<std::string>();
    if (auto it = j.find("family"); it != j.end() && it->is_string()) s.family = it->get<std::string>();
    s.target_history = points_from_json(field("target_history"), "target_history");
    for (const auto& n : field("neighbor_histories")) s.neighbor_histories.push_back(points_from_json(n, "neighbor_histories"));
    for (const auto& l : field("lanes")) s.lanes.push_back(points_from_json(l, "lanes"));
    s.future_truth = points_from_json(field("future_truth"), "future_truth");
    const auto& fr = field("frame");
    require(fr.is_object() && fr.contains("x") && fr.contains("y") && fr.contains("heading"),
            "field 'frame' needs x, y, heading");
    s.frame = {fr.at("x").get<double>(), fr.at("y").get<double>(), fr.at("heading").get<double>()};
    require(!s.target_history.empty(), "target_history is empty");
    require(!s.future_truth.empty(), "future_truth is empty");
    return s;
}

nlohmann::json dataset_to_json(std::span<const Scenario> scenarios) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scenarios) arr.push_back(scenario_to_json(s));
    return {{"schema", kDatasetSchema}, {"version", kDatasetVersion}, {"scenarios", std::move(arr)}};
}

std::vector<Scenario> dataset_from_json(const nlohmann::json& doc) {
    require(doc.is_object(), "dataset: expected a JSON object");
    require(doc.value("schema", std::string{}) == kDatasetSchema, "dataset: schema must be '" + std::string(kDatasetSchema) + "'");
    require(doc.value("version", 0) == kDatasetVersion, "dataset: unsupported version");
    auto it = doc.find("scenarios");
    require(it != doc.end() && it->is_array(), "dataset: missing 'scenarios' array");
    std::vector<Scenario> out;
    out.reserve(it->size());
    for (std::size_t i = 0; i < it->size(); ++i) {
        const auto& rec = (*it)[i];
        try {
            out.push_back(scenario_from_json(rec));
        } catch (const std::exception& e) {
            std::string id = rec.is_object() && rec.contains("id") && rec["id"].is_string() ? rec["id"].get<std::string>() : "?";
            throw DataError("scenario record " + std::to_string(i) + " (id " + id + "): " + e.what());
        }
    }
    return out;
}

void save_dataset(std::span<const Scenario> scenarios, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset " + path.string());
    out << dataset_to_json(scenarios).dump() << '\n';
}

std::vector<Scenario> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return dataset_from_json(doc);
}

Split split(std::span<const Scenario> scenarios, const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (ratios[0] < 0.0 || ratios[1] < 0.0 || ratios[2] < 0.0 || std::abs(total - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "split ratios must be non-negative and sum to 1 (got " << ratios[0] << ", " << ratios[1] << ", "
           << ratios[2] << ")";
        throw DataError(os.str());
    }
    std::vector<std::size_t> order(scenarios.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n = scenarios.size();
    const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n))));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
    Split out;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
        dst.push_back(scenarios[order[i]]);
    }
    return out;
}

Scenario translated(const Scenario& s, double dx, double dy) {
    auto shift = [&](Trajectory t) {
        for (auto& p : t) p.x += dx, p.y += dy;
        return t;
    };
    Scenario out = s;
    out.target_history = shift(s.target_history);
    out.future_truth = shift(s.future_truth);
    for (auto& n : out.neighbor_histories) n = shift(n);
    for (auto& l : out.lanes) l = shift(l);
    out.frame.x += dx;
    out.frame.y += dy;
    return out;
}

}  // namespace lksde::data
