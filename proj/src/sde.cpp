#include "lksde/sde.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace lksde::sde {

using kinematics::kStateDim;

BrownianPath sample_brownian(std::size_t steps, double step_var, std::uint64_t seed) {
    if (steps == 0) throw std::invalid_argument("sample_brownian: steps must be at least 1");
    if (!(step_var > 0.0)) throw std::invalid_argument("sample_brownian: step_var must be positive");
    BrownianPath path{steps, step_var, seed, std::vector<double>(steps * kStateDim)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(step_var));
    for (auto& dw : path.increments) dw = normal(rng);
    return path;
}

BrownianPath zero_path(std::size_t steps) { return {steps, 1.0, 0, std::vector<double>(steps * kStateDim, 0.0)}; }

ad::Tensor stack_increments(std::span<const BrownianPath> paths, std::size_t t) {
    ad::Tensor out({paths.size(), kStateDim});
    for (std::size_t b = 0; b < paths.size(); ++b) {
        if (t >= paths[b].steps) throw ad::ShapeError("stack_increments", "step index beyond Brownian path length");
        for (std::size_t c = 0; c < kStateDim; ++c) out.at(b, c) = paths[b].at(t, c);
    }
    return out;
}

namespace {

void check_paths(std::span<const BrownianPath> paths, std::size_t batch, std::size_t horizon, const char* op) {
    if (paths.size() != batch) {
        throw ad::ShapeError(op, std::to_string(paths.size()) + " Brownian paths for a batch of " + std::to_string(batch));
    }
    for (const auto& p : paths) {
        if (p.steps != horizon) {
            throw ad::ShapeError(op, "Brownian path has " + std::to_string(p.steps) + " steps, horizon is " +
                                         std::to_string(horizon));
        }
    }
}

void check_state(ad::Var s, const char* op) {
    if (s.value().rank() != 2 || s.value().cols() != kStateDim) {
        throw ad::ShapeError(op, "state must be [batch, 4], got " + ad::shape_string(s.shape()));
    }
}

}  // namespace

LatentRollout rollout_lksde(ad::Graph& g, ad::Var z0, ad::Var sem, std::span<const ad::Var> ctx,
                            std::span<const BrownianPath> paths, const DriftFn& drift, const DiffusionFn& diffusion) {
    check_state(z0, "rollout_lksde");
    const std::size_t batch = z0.value().rows();
    const std::size_t horizon = ctx.size();
    check_paths(paths, batch, horizon, "rollout_lksde");
    LatentRollout r;
    r.states.push_back(z0);
    for (std::size_t t = 0; t < horizon; ++t) {
        ad::Var z = r.states.back();
        ad::Var f = drift(g, z, sem, ctx[t]);
        ad::Var diff = diffusion(g, z);
        if (f.shape() != z.shape() || diff.shape() != z.shape()) {
            throw ad::ShapeError("rollout_lksde", f.shape(), diff.shape());
        }
        ad::Var noise = g.constant(stack_increments(paths, t));
        r.drifts.push_back(f);
        r.diffusions.push_back(diff);
        r.states.push_back(f + diff * noise);
    }
    return r;
}

LatentRollout rollout_bicycle(ad::Graph& g, ad::Var s0, std::span<const BrownianPath> paths,
                              const kinematics::Controller& controller, const kinematics::BicycleParams& params,
                              const DiffusionFn& diffusion) {
    check_state(s0, "rollout_bicycle");
    const std::size_t batch = s0.value().rows();
    const std::size_t horizon = paths.empty() ? 0 : paths.front().steps;
    check_paths(paths, batch, horizon, "rollout_bicycle");
    LatentRollout r;
    r.states.push_back(s0);
    for (std::size_t t = 0; t < horizon; ++t) {
        ad::Var s = r.states.back();
        ad::Var u = controller.apply(g, s);
        ad::Var h = kinematics::bicycle_drift(s, u, params);
        ad::Var diff = diffusion(g, s);
        ad::Var noise = g.constant(stack_increments(paths, t));
        r.controls.push_back(u);
        r.drifts.push_back(h);
        r.diffusions.push_back(diff);
        r.states.push_back(h + diff * noise);
    }
    return r;
}

ad::Var kinematic_kl_loss(std::span<const ad::Var> drift_lk, std::span<const ad::Var> drift_bike,
                          std::span<const ad::Var> diffusion) {
    if (drift_lk.size() != drift_bike.size() || drift_lk.size() != diffusion.size()) {
        throw ad::ShapeError("kinematic_kl_loss", "rollouts have " + std::to_string(drift_lk.size()) + ", " +
                                                      std::to_string(drift_bike.size()) + " and " +
                                                      std::to_string(diffusion.size()) + " steps");
    }
    if (drift_lk.empty()) throw ad::ShapeError("kinematic_kl_loss", "empty rollout");
    ad::Var total;
    for (std::size_t t = 0; t < drift_lk.size(); ++t) {
        ad::Var gap = (drift_lk[t] - drift_bike[t]) * ad::reciprocal(diffusion[t]);
        ad::Var term = ad::sum(ad::square(gap));
        total = t == 0 ? term : total + term;
    }
    const double batch = static_cast<double>(drift_lk.front().value().rows());
    return total * (0.5 / batch);
}

}  // namespace lksde::sde
