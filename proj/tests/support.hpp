#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lksde/ad/graph.hpp"
#include "lksde/ad/parameter.hpp"

namespace lksde::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    ad::Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// near-zero derivatives from turning rounding noise into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Central differences with step h against the reverse sweep. `loss` must
/// build a fresh scalar on the graph it is given. At most `per_param`
/// entries of each parameter are probed (all when 0).
inline GradientCheck check_gradients(const std::vector<ad::Parameter*>& params,
                                     const std::function<ad::Var(ad::Graph&)>& loss, std::mt19937_64& rng,
                                     std::size_t per_param = 0, double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    {
        ad::Graph g;
        g.backward(loss(g));
    }
    auto eval = [&] {
        ad::Graph g;
        return loss(g).value().item();
    };
    GradientCheck out;
    for (auto* p : params) {
        std::vector<std::size_t> idx(p->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (per_param > 0 && idx.size() > per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(per_param);
        }
        for (std::size_t i : idx) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = eval();
            p->value[i] = saved - h;
            const double down = eval();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            out.max_rel_error = std::max(out.max_rel_error, relative_error(p->grad[i], numeric));
            ++out.checked;
        }
    }
    for (auto* p : params) p->zero_grad();
    return out;
}

}  // namespace lksde::testing
