#include "lksde/ad/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace lksde::ad {

void sgd_step(std::span<Parameter* const> params, double learning_rate) {
    for (Parameter* p : params) {
        auto value = p->value.data();
        auto grad = p->grad.data();
        for (std::size_t i = 0; i < value.size(); ++i) value[i] -= learning_rate * grad[i];
        p->zero_grad();
    }
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
}

void Adam::step(std::span<Parameter* const> params) {
    if (m_.empty()) {
        for (Parameter* p : params) {
            m_.push_back(Tensor::zeros_like(p->value));
            v_.push_back(Tensor::zeros_like(p->value));
        }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto value = params[k]->value.data();
        auto grad = params[k]->grad.data();
        auto m = m_[k].data();
        auto v = v_[k].data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
        params[k]->zero_grad();
    }
}

}  // namespace lksde::ad
