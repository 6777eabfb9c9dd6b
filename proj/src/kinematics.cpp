#include "lksde/kinematics.hpp"

#include <sstream>

namespace lksde::kinematics {

void BicycleParams::validate() const {
    if (!(l_f > 0.0) || !(l_r > 0.0) || !(delta > 0.0)) {
        std::ostringstream os;
        os << "bicycle parameters must be positive (l_f=" << l_f << ", l_r=" << l_r << ", delta=" << delta << ")";
        throw KinematicsError(os.str());
    }
}

namespace {

void check_steering(double u2) {
    if (!(std::abs(u2) < std::numbers::pi / 2)) {
        std::ostringstream os;
        os << "steering angle " << u2 << " outside (-pi/2, pi/2)";
        throw KinematicsError(os.str());
    }
}

}  // namespace

double slip_angle(double u2, const BicycleParams& params) {
    params.validate();
    check_steering(u2);
    return detail::slip(u2, params.rear_ratio());
}

LatentState bicycle_drift(const LatentState& s, const ControlInput& u, const BicycleParams& params) {
    params.validate();
    check_steering(u.u2);
    auto r = detail::bicycle_update(s.x, s.y, s.v, s.psi, u.u1, u.u2, params);
    return {r.x, r.y, r.v, r.psi};
}

ad::Var slip_angle(ad::Var u2, const BicycleParams& params) {
    params.validate();
    for (double v : u2.value().data()) check_steering(v);
    return detail::slip(u2, params.rear_ratio());
}

ad::Var bicycle_drift(ad::Var state, ad::Var control, const BicycleParams& params) {
    params.validate();
    if (state.value().rank() != 2 || state.value().cols() != kStateDim || control.value().rank() != 2 ||
        control.value().cols() != kControlDim || control.value().rows() != state.value().rows()) {
        throw ad::ShapeError("bicycle_drift", state.shape(), control.shape());
    }
    ad::Var u2 = ad::column(control, 1);
    for (double v : u2.value().data()) check_steering(v);
    auto r = detail::bicycle_update(ad::column(state, 0), ad::column(state, 1), ad::column(state, 2),
                                    ad::column(state, 3), ad::column(control, 0), u2, params);
    return ad::concat({r.x, r.y, r.v, r.psi}, 1);
}

ad::Var network_input(ad::Graph& g, ad::Var state) {
    ad::Tensor diag({kStateDim, kStateDim}, 0.0);
    for (std::size_t i = 0; i < kStateDim; ++i) diag.at(i, i) = kStateInputScale[i];
    return g.matmul(state, g.constant(std::move(diag)));
}

Controller::Controller(ad::ParameterStore& store, const std::string& name, const ControllerConfig& config,
                       std::mt19937_64& rng)
    : config_(config),
      net_(store, name, {kStateDim, config.hidden, config.hidden, kControlDim}, rng, 0.1) {
    if (!(config.u2_max > 0.0 && config.u2_max < std::numbers::pi / 2)) {
        throw KinematicsError("u2_max must lie in (0, pi/2)");
    }
}

ad::Var Controller::apply(ad::Graph& g, ad::Var state) const {
    ad::Var raw = net_(g, network_input(g, state));
    ad::Var u1 = ad::column(raw, 0);
    ad::Var u2 = config_.u2_max * ad::tanh(ad::column(raw, 1));
    return ad::concat({u1, u2}, 1);
}

ControlInput Controller::apply(const LatentState& state) const {
    ad::Graph g;
    auto s = state.to_array();
    ad::Var out = apply(g, g.constant(ad::Tensor({1, kStateDim}, std::vector<double>(s.begin(), s.end()))));
    return {out.value()[0], out.value()[1]};
}

}  // namespace lksde::kinematics
