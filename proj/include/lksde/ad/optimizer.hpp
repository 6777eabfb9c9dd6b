#pragma once

#include <span>
#include <vector>

#include "lksde/ad/parameter.hpp"

namespace lksde::ad {

/// value -= learning_rate * grad, then grad = 0.
void sgd_step(std::span<Parameter* const> params, double learning_rate);

/// Adam with bias correction. Moment buffers are keyed by position in the
/// parameter list passed to the first step, so callers must pass the same
/// list every time.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(std::span<Parameter* const> params);
    long steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace lksde::ad
