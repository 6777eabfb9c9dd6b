#include "lksde/ad/layers.hpp"

#include <stdexcept>

namespace lksde::ad {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng, double gain) {
    Linear l;
    l.weight = &store.add(name + ".weight", glorot_uniform(in, out, rng, gain));
    l.bias = &store.add(name + ".bias", Tensor({1, out}, 0.0));
    return l;
}

Var repeat_rows(Graph& g, Var row, std::size_t rows) {
    if (rows == 1) return row;
    return g.matmul(g.constant(Tensor({rows, 1}, 1.0)), row);
}

Var Linear::operator()(Graph& g, Var x) const {
    Var y = g.matmul(x, g.param(*weight));
    return g.add(y, repeat_rows(g, g.param(*bias), y.value().rows()));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths, std::mt19937_64& rng,
         double output_gain) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp " + name + ": need at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = i + 2 == widths.size();
        layers_.push_back(Linear::create(store, name + ".layer" + std::to_string(i), widths[i], widths[i + 1], rng,
                                         last ? output_gain : 1.0));
    }
}

Var Mlp::operator()(Graph& g, Var x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        x = layers_[i](g, x);
        if (i + 1 < layers_.size()) x = tanh(x);
    }
    return x;
}

}  // namespace lksde::ad
