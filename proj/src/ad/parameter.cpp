#include "lksde/ad/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace lksde::ad {

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParameterStore::group(const std::string& group_name) {
    std::vector<Parameter*> out;
    for (auto& p : params_) {
        if (group_of(p->name) == group_name) out.push_back(p.get());
    }
    return out;
}

std::vector<std::string> ParameterStore::group_names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) {
        auto g = group_of(p->name);
        if (out.empty() || out.back() != g) out.push_back(g);
    }
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    for (auto& p : params_) {
        const auto& src = other.get(p->name);
        if (src.value.shape() != p->value.shape()) throw ShapeError("copy_values_from " + p->name, p->value.shape(), src.value.shape());
        p->value = src.value;
    }
}

std::string group_of(const std::string& parameter_name) {
    auto dot = parameter_name.find('.');
    return dot == std::string::npos ? parameter_name : parameter_name.substr(0, dot);
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng, double gain) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w({fan_in, fan_out});
    for (auto& v : w.data()) v = dist(rng);
    return w;
}

}  // namespace lksde::ad
