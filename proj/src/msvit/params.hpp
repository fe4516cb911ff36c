// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Named, ordered parameter storage. The insertion order is the checkpoint
// order and the gradient-accumulation order.

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/rng.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

enum class ParamGroup { backbone, gate, prior };

const char* param_group_name(ParamGroup g);

struct Parameter {
    std::string name;
    Tensor value;
    ParamGroup group = ParamGroup::backbone;
};

class ParameterStore {
public:
    Parameter& add(std::string name, Tensor value, ParamGroup group);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;

    std::vector<Parameter>& all() { return params_; }
    const std::vector<Parameter>& all() const { return params_; }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

// Graph leaves for every stored parameter, created once per forward pass.
class Binding {
public:
    explicit Binding(const ParameterStore& store);

    const ad::Var& operator()(const std::string& name) const;
    const std::vector<ad::Var>& vars() const { return vars_; }

    // Gradients in store order; zeros where nothing flowed.
    std::vector<Tensor> gradients() const;

private:
    const ParameterStore* store_;
    std::vector<ad::Var> vars_;
};

// Common initialisers.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_tensor(Shape shape, double std_dev, Rng& rng);

}  // namespace msvit
