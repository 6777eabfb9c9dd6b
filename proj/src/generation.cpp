#include "lksde/generation.hpp"

#include <algorithm>
#include <stdexcept>

namespace lksde::nets {

using kinematics::LatentState;

namespace {

LatentState row_state(const ad::Tensor& t, std::size_t r) { return {t.at(r, 0), t.at(r, 1), t.at(r, 2), t.at(r, 3)}; }

}  // namespace

std::vector<GeneratedSample> generate(const Model& m, std::span<const data::Scenario* const> scenarios,
                                      std::span<const std::uint64_t> seeds, const LatentOverrides* overrides,
                                      bool deterministic) {
    if (scenarios.size() != seeds.size()) {
        throw std::invalid_argument("generate: " + std::to_string(scenarios.size()) + " scenarios but " +
                                    std::to_string(seeds.size()) + " seeds");
    }
    if (scenarios.empty()) return {};
    const std::size_t horizon = m.config().horizon;
    const std::size_t b = scenarios.size();
    ad::Graph g;
    const BatchNoise noise = deterministic ? BatchNoise::zero(b, horizon) : BatchNoise::from_seeds(seeds, horizon);
    const ForwardPass fp = forward(g, m, scenarios, noise, false, overrides);
    const auto local = unstack_waypoints(fp.decoded_lk.value(), b);
    const auto& bp = m.config().bicycle;

    std::vector<GeneratedSample> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        GeneratedSample& s = out[i];
        s.local = local[i];
        s.world = scenarios[i]->frame.to_world(local[i]);
        for (const auto& z : fp.lk.states) s.latents.push_back(row_state(z.value(), i));
        for (std::size_t t = 0; t < horizon; ++t) {
            const auto u = m.pi.apply(s.latents[t]);
            s.controls.push_back(u);
            s.slip.push_back(kinematics::slip_angle(u.u2, bp));
        }
    }
    return out;
}

SteeringTrace steering_trace(const Model& m, std::span<const data::Scenario> scenarios, std::size_t batch_size) {
    SteeringTrace out;
    const std::size_t horizon = m.config().horizon;
    const double u2_max = m.pi.u2_max();
    for (std::size_t start = 0; start < scenarios.size(); start += batch_size) {
        const std::size_t end = std::min(scenarios.size(), start + batch_size);
        std::vector<const data::Scenario*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&scenarios[i]);
        ad::Graph g;
        const ForwardPass fp = forward(g, m, batch, BatchNoise::zero(batch.size(), horizon), true);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            for (std::size_t t = 0; t < horizon; ++t) {
                const double u2 = fp.bike->controls[t].value().at(i, 1);
                out.u2_normalized.push_back(u2 / u2_max);
                out.beta.push_back(kinematics::slip_angle(u2, m.config().bicycle));
                out.scenario_index.push_back(start + i);
            }
        }
    }
    return out;
}

}  // namespace lksde::nets
