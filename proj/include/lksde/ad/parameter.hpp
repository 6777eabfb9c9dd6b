#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lksde/ad/tensor.hpp"

namespace lksde::ad {

/// A trainable tensor that outlives any single graph. Graph leaves created
/// from a parameter add their gradient here after backward.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Owns named parameters in insertion order. Addresses are stable for the
/// lifetime of the store. Names follow "<group>.<rest>"; the group prefix
/// is how training routes and inspects gradients.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Parameter& add(const std::string& name, Tensor value);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::vector<Parameter*> group(const std::string& group_name);
    std::vector<std::string> group_names() const;

    void zero_grad();
    std::size_t parameter_count() const;

    /// Copies values from another store with identical names and shapes.
    void copy_values_from(const ParameterStore& other);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

std::string group_of(const std::string& parameter_name);

/// Uniform Glorot initialization for a fan_in x fan_out weight matrix.
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain = 1.0);

}  // namespace lksde::ad
