#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lksde/networks.hpp"
#include "lksde/trajectory.hpp"

namespace lksde::metrics {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Reference magnitudes reported on Argoverse for LK-SDE. Documentation
/// only; the synthetic benchmark does not reproduce them.
namespace reference {
inline constexpr double kAverageJerk = 0.40;         // m/s^3
inline constexpr double kJerkViolationRate = 0.050;  // fraction
inline constexpr double kAde = 1.39;                 // m
inline constexpr double kFde = 2.98;                 // m
}  // namespace reference

inline constexpr double kJerkThreshold = 0.9;   // m/s^3
inline constexpr double kComfortOnset = 0.3;    // m/s^3
inline constexpr std::size_t kDefaultBins = 50;

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> counts;

    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
    double bin_left(std::size_t i) const { return lo + bin_width() * static_cast<double>(i); }
    double bin_right(std::size_t i) const { return lo + bin_width() * static_cast<double>(i + 1); }
    std::size_t total() const;
};

/// Uniform bins over [min, max] of the values (last bin closed). A
/// degenerate range is widened to [v - 0.5, v + 0.5].
Histogram make_histogram(std::span<const double> values, std::size_t bins = kDefaultBins);

/// Writes `bin_left,bin_right,count`.
void write_histogram_csv(std::ostream& out, const Histogram& h);

/// |third forward difference of positions| / delta^3; n - 3 values.
std::vector<double> jerk_profile(const Trajectory& traj, double delta);

struct JerkStats {
    double mean_abs_jerk = 0.0;
    double max_abs_jerk = 0.0;
    double violation_rate = 0.0;  // trajectories whose max |jerk| exceeds threshold
    double threshold = kJerkThreshold;
    std::size_t trajectories = 0;
    Histogram histogram;
};

JerkStats jerk_stats(std::span<const Trajectory> trajs, double delta, double threshold = kJerkThreshold,
                     std::size_t bins = kDefaultBins);

/// Forward difference of speed |dp|/delta; n - 2 values.
std::vector<double> accelerations(const Trajectory& traj, double delta);
std::vector<double> accelerations(std::span<const Trajectory> trajs, double delta);

/// One-dimensional Wasserstein-1 distance between empirical samples.
double accel_wasserstein(std::span<const double> a, std::span<const double> b);

struct GeneralizedPareto {
    double shape = 0.0;
    double scale = 1.0;
    double location = 0.0;

    void validate() const;
    double quantile(double q) const;
    /// Quantiles at (i + 0.5) / n: a deterministic empirical stand-in.
    std::vector<double> sample(std::size_t n) const;
};

struct AdeFde {
    double ade = 0.0;
    double fde = 0.0;
};

AdeFde ade_fde(const Trajectory& pred, const Trajectory& truth);
/// Means over paired lists.
AdeFde mean_ade_fde(std::span<const Trajectory> preds, std::span<const Trajectory> truths);

/// Extrapolates the velocity between the last two history points.
Trajectory constant_velocity(const Trajectory& history, std::size_t horizon);

struct SteeringStats {
    double mean = 0.0;
    double stddev = 0.0;
    double exceedance = 0.0;  // fraction outside [mean - sd, mean + sd]
    std::size_t samples = 0;
    double beta_mean = 0.0;
    Histogram histogram;
    Histogram beta_histogram;

    struct Group {
        std::size_t samples = 0;
        double mean = 0.0;
        double exceedance = 0.0;  // against the overall one-sigma band
    };
    std::map<std::string, Group> by_family;
};

SteeringStats steering_stats(std::span<const double> u2_normalized, std::span<const double> beta,
                             std::span<const std::string> family_of_sample, std::size_t bins = kDefaultBins);

/// Rolls out the bicycle SDE deterministically for every scenario and
/// summarises the controller's normalised steering.
SteeringStats steering_histogram(const nets::Model& m, std::span<const data::Scenario> scenarios,
                                 std::size_t bins = kDefaultBins);

nlohmann::json to_json(const Histogram& h);
nlohmann::json to_json(const JerkStats& s);
nlohmann::json to_json(const SteeringStats& s);

struct EvalOptions {
    std::uint64_t seed = 1;
    std::size_t samples_per_scenario = 1;
    double jerk_threshold = kJerkThreshold;
    std::size_t bins = kDefaultBins;
    std::optional<GeneralizedPareto> pareto;
};

struct EvalReport {
    AdeFde prediction;
    AdeFde constant_velocity;
    JerkStats generated_jerk;
    JerkStats truth_jerk;
    double accel_w1_truth = 0.0;
    std::optional<double> accel_w1_pareto;
    Histogram generated_accel;
    SteeringStats steering;
    std::size_t scenarios = 0;
};

/// Prediction accuracy, realism of sampled generations and steering readout.
EvalReport evaluate(const nets::Model& m, std::span<const data::Scenario> scenarios, const EvalOptions& options);
nlohmann::json to_json(const EvalReport& r);

}  // namespace lksde::metrics
