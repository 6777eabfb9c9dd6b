#pragma once

#include <functional>
#include <map>
#include <string>

#include "lksde/networks.hpp"
#include "lksde/scenario.hpp"
#include "support.hpp"

namespace lksde::testing {

using ad::Graph;
using ad::Tensor;
using ad::Var;

// Inputs drawn away from kinks and singularities of the op under test.
struct OpCase {
    const char* name;
    std::vector<ad::Shape> shapes;
    double lo, hi;
    bool away_from_zero;
    std::function<Var(Graph&, std::vector<Var>&)> build;
};

inline std::vector<OpCase> op_cases() {
    using V = std::vector<Var>;
    return {
        {"matmul", {{3, 4}, {4, 2}}, -1, 1, false, [](Graph& g, V& v) { return g.matmul(v[0], v[1]); }},
        {"add", {{3, 4}, {3, 4}}, -1, 1, false, [](Graph&, V& v) { return v[0] + v[1]; }},
        {"add_scalar", {{3, 4}, {1}}, -1, 1, false, [](Graph&, V& v) { return v[0] + v[1]; }},
        {"sub", {{3, 4}, {3, 4}}, -1, 1, false, [](Graph&, V& v) { return v[0] - v[1]; }},
        {"sub_scalar", {{1}, {2, 3}}, -1, 1, false, [](Graph&, V& v) { return v[0] - v[1]; }},
        {"mul", {{3, 4}, {3, 4}}, -1, 1, false, [](Graph&, V& v) { return v[0] * v[1]; }},
        {"mul_scalar", {{2, 5}, {1}}, -1, 1, false, [](Graph&, V& v) { return v[0] * v[1]; }},
        {"neg", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return -v[0]; }},
        {"scale", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return v[0] * 2.5; }},
        {"shift", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return v[0] + 0.7; }},
        {"tanh", {{3, 4}}, -2, 2, false, [](Graph&, V& v) { return ad::tanh(v[0]); }},
        {"relu", {{3, 4}}, 0.05, 1, true, [](Graph&, V& v) { return ad::relu(v[0]); }},
        {"softplus", {{3, 4}}, -3, 3, false, [](Graph&, V& v) { return ad::softplus(v[0]); }},
        {"exp", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return ad::exp(v[0]); }},
        {"log", {{3, 4}}, 0.5, 2, false, [](Graph&, V& v) { return ad::log(v[0]); }},
        {"sin", {{3, 4}}, -2, 2, false, [](Graph&, V& v) { return ad::sin(v[0]); }},
        {"cos", {{3, 4}}, -2, 2, false, [](Graph&, V& v) { return ad::cos(v[0]); }},
        {"tan", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return ad::tan(v[0]); }},
        {"atan", {{3, 4}}, -2, 2, false, [](Graph&, V& v) { return ad::atan(v[0]); }},
        {"square", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return ad::square(v[0]); }},
        {"reciprocal", {{3, 4}}, 0.5, 2, true, [](Graph&, V& v) { return ad::reciprocal(v[0]); }},
        {"sum", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return ad::sum(v[0]); }},
        {"mean", {{3, 4}}, -1, 1, false, [](Graph&, V& v) { return ad::mean(v[0]); }},
        {"slice_rows", {{5, 3}}, -1, 1, false, [](Graph&, V& v) { return ad::slice(v[0], 0, 1, 4); }},
        {"slice_cols", {{3, 5}}, -1, 1, false, [](Graph&, V& v) { return ad::slice(v[0], 1, 2, 5); }},
        {"concat_rows", {{2, 3}, {4, 3}}, -1, 1, false, [](Graph&, V& v) { return ad::concat({v[0], v[1]}, 0); }},
        {"concat_cols", {{3, 2}, {3, 1}, {3, 4}}, -1, 1, false,
         [](Graph&, V& v) { return ad::concat({v[0], v[1], v[2]}, 1); }},
        {"clamp", {{3, 4}}, -0.9, 0.9, false, [](Graph&, V& v) { return ad::clamp(v[0], -1.0, 1.0); }},
        {"clamp_saturated", {{3, 4}}, 1.5, 3, true, [](Graph&, V& v) { return ad::clamp(v[0], -1.0, 1.0); }},
        {"smooth_l1_inner", {{3, 4}}, -0.9, 0.9, false, [](Graph&, V& v) { return ad::smooth_l1(v[0]); }},
        {"smooth_l1_outer", {{3, 4}}, 1.1, 3, true, [](Graph&, V& v) { return ad::smooth_l1(v[0]); }},
    };
}


/// Worst relative error of one op over `seeds` random draws, each output
/// element weighted differently so every cotangent is distinct.
inline double op_gradient_error(const OpCase& op, std::uint64_t seeds) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        std::mt19937_64 rng(seed * 7919 + 13);
        ad::ParameterStore store;
        std::vector<ad::Parameter*> params;
        for (std::size_t i = 0; i < op.shapes.size(); ++i) {
            Tensor t = random_tensor(op.shapes[i], rng, op.lo, op.hi);
            if (op.away_from_zero) {
                std::bernoulli_distribution flip(0.5);
                for (double& v : t.data()) v = flip(rng) ? -v : v;
            }
            params.push_back(&store.add("p" + std::to_string(i), std::move(t)));
        }
        Tensor w;
        auto loss = [&](Graph& g) {
            std::vector<Var> in;
            for (auto* p : params) in.push_back(g.param(*p));
            Var out = op.build(g, in);
            if (w.size() != out.value().size()) {
                std::mt19937_64 wrng(seed);
                w = random_tensor(out.value().shape(), wrng, 0.5, 1.5);
            }
            return ad::sum(out * g.constant(w));
        };
        worst = std::max(worst, check_gradients(params, loss, rng).max_rel_error);
    }
    return worst;
}

/// Worst relative error per parameter group of a small model. The objective
/// is a weighted sum over both decoded rollouts plus the prior term, which
/// reaches every group.
inline std::map<std::string, double> network_gradient_errors(std::uint64_t seeds) {
    auto fam = data::default_family(data::Family::right_turn);
    fam.history_steps = 6;
    fam.horizon = 4;
    const auto s = data::generate_scenarios(fam, 2, 4);
    const std::vector<const data::Scenario*> batch{&s[0], &s[1]};
    std::map<std::string, double> worst;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        nets::NetworkConfig c;
        c.horizon = 4;
        c.history = 6;
        c.feature_width = 8;
        c.hidden = 6;
        c.controller_hidden = 5;
        c.lane_points = 3;
        c.init_seed = seed + 1;
        nets::Model m(c);
        std::mt19937_64 rng(seed);
        const auto noise = nets::BatchNoise::sampled(2, 4, seed);
        const Tensor w_lk = random_tensor({8, 2}, rng, 0.5, 1.5);
        const Tensor w_bike = random_tensor({8, 2}, rng, 0.5, 1.5);
        auto loss = [&](Graph& g) {
            auto fp = nets::forward(g, m, batch, noise, true);
            return ad::sum(fp.decoded_lk * g.constant(w_lk)) + ad::sum(fp.decoded_bike * g.constant(w_bike)) +
                   nets::kl_regularizer(fp.posterior);
        };
        for (const char* group : nets::kParameterGroups) {
            const auto r = check_gradients(m.params().group(group), loss, rng, 6);
            worst[group] = std::max(worst[group], r.max_rel_error);
        }
    }
    return worst;
}

}  // namespace lksde::testing
