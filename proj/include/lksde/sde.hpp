#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lksde/ad/graph.hpp"
#include "lksde/kinematics.hpp"

namespace lksde::sde {

/// Brownian increments dW_t for t = 0..steps-1, one row of four
/// independent N(0, step_var) draws per step.
struct BrownianPath {
    std::size_t steps = 0;
    double step_var = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> increments;  // steps x 4, row-major

    double at(std::size_t t, std::size_t c) const { return increments[t * kinematics::kStateDim + c]; }
};

/// Deterministic in `seed`. Requires steps >= 1 and step_var > 0.
BrownianPath sample_brownian(std::size_t steps, double step_var, std::uint64_t seed);

/// All-zero increments: the deterministic (drift-only) limit.
BrownianPath zero_path(std::size_t steps);

/// Rows t of each path stacked into a [paths.size(), 4] tensor.
ad::Tensor stack_increments(std::span<const BrownianPath> paths, std::size_t t);

/// z_{t+1} = f(z_t, sem, ctx_t); signature (graph, z [B,4], sem [B,4], ctx_t [B,8]) -> [B,4].
using DriftFn = std::function<ad::Var(ad::Graph&, ad::Var, ad::Var, ad::Var)>;
/// Diagonal diffusion g(z) -> [B,4], every entry positive.
using DiffusionFn = std::function<ad::Var(ad::Graph&, ad::Var)>;

struct LatentRollout {
    std::vector<ad::Var> states;      // T + 1 entries, [B,4] each
    std::vector<ad::Var> drifts;      // T entries
    std::vector<ad::Var> diffusions;  // T entries, diffusion evaluated at states[t]
    std::vector<ad::Var> controls;    // T entries for the bicycle rollout, empty otherwise

    std::size_t horizon() const { return drifts.size(); }
};

/// Euler-Maruyama rollout of the learned latent SDE:
/// z_{t+1} = f(z_t, sem, ctx_t) + g(z_t) * dW_t (elementwise, diagonal g).
LatentRollout rollout_lksde(ad::Graph& g, ad::Var z0, ad::Var sem, std::span<const ad::Var> ctx,
                            std::span<const BrownianPath> paths, const DriftFn& drift, const DiffusionFn& diffusion);

/// Rollout of the bicycle-model SDE with the same diffusion network:
/// s_{t+1} = h(s_t, pi(s_t)) + g(s_t) * dW_t.
LatentRollout rollout_bicycle(ad::Graph& g, ad::Var s0, std::span<const BrownianPath> paths,
                              const kinematics::Controller& controller, const kinematics::BicycleParams& params,
                              const DiffusionFn& diffusion);

/// sum_t 1/2 || (drift_lk[t] - drift_bike[t]) / diffusion[t] ||^2, averaged
/// over the batch rows. Callers decide the gradient routing by what they
/// pass in (see training::compute_losses).
ad::Var kinematic_kl_loss(std::span<const ad::Var> drift_lk, std::span<const ad::Var> drift_bike,
                          std::span<const ad::Var> diffusion);

}  // namespace lksde::sde
