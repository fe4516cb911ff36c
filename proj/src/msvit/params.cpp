// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/params.hpp"

#include <cmath>
#include <stdexcept>

namespace msvit {

const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::gate: return "gate";
        case ParamGroup::prior: return "prior";
    }
    return "unknown";
}

Parameter& ParameterStore::add(std::string name, Tensor value, ParamGroup group) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(Parameter{std::move(name), std::move(value), group});
    return params_.back();
}

std::size_t ParameterStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

Parameter& ParameterStore::get(const std::string& name) { return params_[index_of(name)]; }

const Parameter& ParameterStore::get(const std::string& name) const {
    return params_[index_of(name)];
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Binding::Binding(const ParameterStore& store) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& p : store.all()) vars_.push_back(ad::parameter(p.value));
}

const ad::Var& Binding::operator()(const std::string& name) const {
    return vars_[store_->index_of(name)];
}

std::vector<Tensor> Binding::gradients() const {
    std::vector<Tensor> out;
    out.reserve(vars_.size());
    for (const auto& v : vars_) {
        out.push_back(v->grad.empty() ? Tensor(v->value.shape(), 0.0) : v->grad);
    }
    return out;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(Shape{fan_in, fan_out});
    for (double& x : t.data()) x = rng.uniform(-limit, limit);
    return t;
}

Tensor normal_tensor(Shape shape, double std_dev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = std_dev * rng.normal();
    return t;
}

}  // namespace msvit
