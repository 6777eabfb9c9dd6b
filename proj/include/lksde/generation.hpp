#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lksde/kinematics.hpp"
#include "lksde/networks.hpp"

namespace lksde::nets {

/// One generated future with the latent trace that produced it. Controls
/// are read off the learned controller along the LK-SDE latent path.
struct GeneratedSample {
    Trajectory local;                             // T waypoints, scenario relative frame
    Trajectory world;                             // same waypoints in world coordinates
    std::vector<kinematics::LatentState> latents;  // z_0..z_T
    std::vector<kinematics::ControlInput> controls;  // T entries
    std::vector<double> slip;                      // beta per step
};

/// Row i pairs scenarios[i] with seeds[i]. A seed drives both the z0 draw
/// and the Brownian path; `deterministic` uses the posterior mean and zero
/// increments instead.
std::vector<GeneratedSample> generate(const Model& m, std::span<const data::Scenario* const> scenarios,
                                      std::span<const std::uint64_t> seeds, const LatentOverrides* overrides = nullptr,
                                      bool deterministic = false);

/// Normalised steering u2 / u2_max and slip angles along deterministic
/// bicycle-SDE rollouts (posterior mean, zero increments).
struct SteeringTrace {
    std::vector<double> u2_normalized;  // T per scenario, scenario-major
    std::vector<double> beta;
    std::vector<std::size_t> scenario_index;  // owner of each sample
};
SteeringTrace steering_trace(const Model& m, std::span<const data::Scenario> scenarios, std::size_t batch_size = 64);

}  // namespace lksde::nets
