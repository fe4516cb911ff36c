// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/gate.hpp"

#include <cmath>
#include <stdexcept>

#include "msvit/errors.hpp"

namespace msvit {

void GateConfig::validate() const {
    if (hidden == 0) throw ConfigError("gate.hidden must be positive");
    if (!(temperature > 0.0)) throw ConfigError("gate.temperature must be positive");
}

void GateWeights::init(ParameterStore& store, const ScaleConfig& scale, const GateConfig& cfg,
                       Rng& rng) {
    const std::size_t in = scale.coarse_patch_dim(), h = cfg.hidden;
    store.add("gate.fc1.weight", xavier_uniform(in, h, rng), ParamGroup::gate);
    store.add("gate.fc1.bias", Tensor(Shape{h}, 0.0), ParamGroup::gate);
    store.add("gate.pos", normal_tensor(Shape{scale.n_coarse(), h}, 0.02, rng), ParamGroup::gate);
    store.add("gate.fc2.weight", xavier_uniform(h, h, rng), ParamGroup::gate);
    store.add("gate.fc2.bias", Tensor(Shape{h}, 0.0), ParamGroup::gate);
    store.add("gate.fc3.weight", xavier_uniform(h, h, rng), ParamGroup::gate);
    store.add("gate.fc3.bias", Tensor(Shape{h}, 0.0), ParamGroup::gate);
    store.add("gate.fc4.weight", normal_tensor(Shape{h, 1}, 0.01, rng), ParamGroup::gate);
    store.add("gate.fc4.bias", Tensor(Shape{1}, cfg.bias_init), ParamGroup::gate);
}

GateWeights GateWeights::bind(const Binding& b) {
    return GateWeights{b("gate.fc1.weight"), b("gate.fc1.bias"), b("gate.pos"),
                       b("gate.fc2.weight"), b("gate.fc2.bias"), b("gate.fc3.weight"),
                       b("gate.fc3.bias"),   b("gate.fc4.weight"), b("gate.fc4.bias")};
}

ad::Var gate_logits(const Tensor& coarse_rows, const GateWeights& w) {
    if (coarse_rows.rank() != 2 || coarse_rows.dim(1) != w.w1->value.dim(0)) {
        throw std::invalid_argument("gate_logits: patch dimension " +
                                    shape_str(coarse_rows.shape()) + " does not match gate input " +
                                    std::to_string(w.w1->value.dim(0)));
    }
    auto h = ad::linear(ad::constant(coarse_rows), w.w1, w.b1);
    h = ad::gelu(ad::add_tiled(h, w.pos));
    h = ad::gelu(ad::linear(h, w.w2, w.b2));
    h = ad::gelu(ad::linear(h, w.w3, w.b3));
    auto out = ad::linear(h, w.w4, w.b4);
    return ad::reshape(out, Shape{coarse_rows.dim(0)});
}

ad::Var gumbel_sigmoid(const ad::Var& logits, double tau, const Tensor& noise) {
    if (!(tau > 0.0)) throw std::invalid_argument("gumbel_sigmoid: temperature must be positive");
    const ad::Var l = ad::constant(noise.reshaped(logits->value.shape()));
    return ad::sigmoid(ad::scale(ad::add(logits, l), 1.0 / tau));
}

double gumbel_sigmoid(double logit, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw std::invalid_argument("gumbel_sigmoid: temperature must be positive");
    const double z = (logit + rng.logistic()) / tau;
    return 1.0 / (1.0 + std::exp(-z));
}

Tensor gate_noise(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch_index,
                  std::size_t batch, std::size_t cells) {
    Tensor noise(Shape{batch, cells});
    for (std::size_t e = 0; e < batch; ++e) {
        Rng rng(derive_key({seed, 0x6761746555ULL, epoch, batch_index, e}));
        for (std::size_t j = 0; j < cells; ++j) noise.at(e, j) = rng.logistic();
    }
    return noise;
}

ad::Var discretize(const ad::Var& soft) { return ad::ste_threshold(soft); }

GateOutput run_gate(const Tensor& coarse_rows, std::size_t batch, const GateWeights& w,
                    const GateConfig& cfg, const Tensor* noise) {
    const std::size_t cells = w.pos->value.dim(0);
    if (coarse_rows.dim(0) != batch * cells) {
        throw std::invalid_argument("run_gate: expected " + std::to_string(batch * cells) +
                                    " coarse patches");
    }
    GateOutput out;
    out.logits = ad::reshape(gate_logits(coarse_rows, w), Shape{batch, cells});
    out.soft = noise ? gumbel_sigmoid(out.logits, cfg.temperature, *noise) : ad::sigmoid(out.logits);
    out.decisions = discretize(out.soft);
    return out;
}

std::vector<double> radial_mask(std::size_t grid_side, double radius) {
    if (radius < 0.0) throw std::invalid_argument("radial_mask: radius must be non-negative");
    std::vector<double> sel(grid_side * grid_side, 0.0);
    const double c = 0.5 * static_cast<double>(grid_side);
    for (std::size_t r = 0; r < grid_side; ++r) {
        for (std::size_t col = 0; col < grid_side; ++col) {
            const double dy = static_cast<double>(r) + 0.5 - c;
            const double dx = static_cast<double>(col) + 0.5 - c;
            // Small slack so cells exactly on the circle count as inside.
            if (std::sqrt(dx * dx + dy * dy) <= radius + 1e-12) sel[r * grid_side + col] = 1.0;
        }
    }
    return sel;
}

std::size_t gate_macs_per_patch(std::size_t input_dim, std::size_t hidden) {
    return input_dim * hidden + 2 * hidden * hidden + hidden;
}

}  // namespace msvit
