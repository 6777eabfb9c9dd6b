#pragma once

#include <random>
#include <string>
#include <vector>

#include "lksde/ad/graph.hpp"
#include "lksde/ad/parameter.hpp"

namespace lksde::ad {

/// y = x W + b for a batch of row vectors x: [batch, in].
struct Linear {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         std::mt19937_64& rng, double gain = 1.0);

    std::size_t in_features() const { return weight->value.rows(); }
    std::size_t out_features() const { return weight->value.cols(); }

    Var operator()(Graph& g, Var x) const;
};

/// Broadcasts a [1, n] row over `rows` rows via an outer product with ones.
Var repeat_rows(Graph& g, Var row, std::size_t rows);

/// Fully connected stack with tanh between layers and a linear output.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths, std::mt19937_64& rng,
        double output_gain = 1.0);

    Var operator()(Graph& g, Var x) const;

    const Linear& layer(std::size_t i) const { return layers_.at(i); }
    std::size_t depth() const { return layers_.size(); }
    std::size_t in_features() const { return layers_.front().in_features(); }
    std::size_t out_features() const { return layers_.back().out_features(); }

private:
    std::vector<Linear> layers_;
};

}  // namespace lksde::ad
