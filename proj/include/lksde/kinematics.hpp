#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "lksde/ad/graph.hpp"
#include "lksde/ad/layers.hpp"

namespace lksde::kinematics {

class KinematicsError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Kinematic latent state. psi is kept unwrapped.
struct LatentState {
    double x = 0.0;
    double y = 0.0;
    double v = 0.0;
    double psi = 0.0;

    std::array<double, 4> to_array() const { return {x, y, v, psi}; }
    static LatentState from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(v) && std::isfinite(psi); }

    friend bool operator==(const LatentState&, const LatentState&) = default;
};

inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kControlDim = 2;

struct BicycleParams {
    double l_f = 1.5;
    double l_r = 1.5;
    double delta = 0.1;

    void validate() const;
    double rear_ratio() const { return l_r / (l_f + l_r); }
};

struct ControlInput {
    double u1 = 0.0;  // acceleration
    double u2 = 0.0;  // front-wheel steering angle
};

namespace detail {

template <class S>
struct StepResult {
    S x, y, v, psi;
};

// Single source of the bicycle update, shared by the scalar and graph paths.
template <class S>
S slip(const S& u2, double rear_ratio) {
    using std::atan;
    using std::tan;
    return atan(tan(u2) * rear_ratio);
}

template <class S>
StepResult<S> bicycle_update(const S& x, const S& y, const S& v, const S& psi, const S& u1, const S& u2,
                             const BicycleParams& p) {
    using std::cos;
    using std::sin;
    const S beta = slip(u2, p.rear_ratio());
    const S heading = psi + beta;
    return {
        x + p.delta * (v * cos(heading)),
        y + p.delta * (v * sin(heading)),
        v + p.delta * u1,
        psi + (p.delta / p.l_r) * (v * sin(beta)),
    };
}

}  // namespace detail

/// beta(u2) = atan(tan(u2) * l_r / (l_f + l_r)). Requires |u2| < pi/2.
double slip_angle(double u2, const BicycleParams& params);

/// Deterministic next state h(s, u) of the kinematic bicycle model.
LatentState bicycle_drift(const LatentState& state, const ControlInput& control, const BicycleParams& params);

/// Graph versions over a batch: state [B,4], control [B,2] -> [B,4].
ad::Var slip_angle(ad::Var u2, const BicycleParams& params);
ad::Var bicycle_drift(ad::Var state, ad::Var control, const BicycleParams& params);

/// Fixed per-component scaling applied to latent states before they enter
/// any network, so that positions accumulated over a long horizon do not
/// saturate the first tanh layer.
inline constexpr std::array<double, 4> kStateInputScale = {0.2, 0.2, 0.5, 1.0};
ad::Var network_input(ad::Graph& g, ad::Var state);

struct ControllerConfig {
    std::size_t hidden = 32;
    double u2_max = 0.6;
};

/// Learnable feedback controller pi: state -> (u1, u2) with
/// u2 = u2_max * tanh(.) so |u2| < u2_max < pi/2.
class Controller {
public:
    Controller() = default;
    Controller(ad::ParameterStore& store, const std::string& name, const ControllerConfig& config,
               std::mt19937_64& rng);

    ad::Var apply(ad::Graph& g, ad::Var state) const;
    ControlInput apply(const LatentState& state) const;

    double u2_max() const { return config_.u2_max; }
    const ad::Mlp& network() const { return net_; }

private:
    ControllerConfig config_;
    ad::Mlp net_;
};

}  // namespace lksde::kinematics
