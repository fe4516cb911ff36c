// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// The full mixed-scale model: shared embedding, gate, backbone and the GBaS
// priors, all held in one ParameterStore.
//
// Checkpoint layout:
//   bytes 0-7   magic "MSVCKPT1"
//   bytes 8-15  header length H, little-endian u64
//   H bytes     JSON {"format", "version", "config", "parameters": [{name, group,
//               shape, offset, count}]}; offsets count doubles from payload start
//   payload     float64 values of every parameter in store order

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msvit/config.hpp"
#include "msvit/params.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

struct ForwardOptions {
    GateMode mode;
    // Inject Gumbel noise into the learned gate (training).
    bool stochastic = false;
    std::uint64_t noise_seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t batch_index = 0;
    bool trimming = false;
};

struct ForwardResult {
    explicit ForwardResult(Binding b) : binding(std::move(b)) {}

    Binding binding;
    ad::Var logits;        // [B x classes]
    ad::Var soft;          // [B x N_c] gate outputs m; null unless the gate is learned
    Tensor decisions;      // [B x N_c] fine selection actually used
    std::vector<std::size_t> active_tokens;  // per image, class token included
    std::size_t seq_len = 0;                 // per-image sequence length through the backbone
};

class Model {
public:
    // Parameters initialised in the fixed order embed, backbone, gate, prior.
    Model(const ModelConfig& cfg, std::uint64_t seed);
    Model(const ModelConfig& cfg, ParameterStore store);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    ForwardResult forward(std::span<const Tensor> images, const ForwardOptions& opt) const;

    // Gate loss on the soft outputs of a forward pass (zero when fixed).
    ad::Var gate_loss(const ForwardResult& fr) const;

    void save(const std::filesystem::path& path, const RunConfig& run) const;
    // Returns the model and the run configuration stored with it.
    static std::pair<Model, RunConfig> load(const std::filesystem::path& path);

private:
    ModelConfig cfg_;
    ParameterStore store_;
};

// Gate decisions for a fixed mode; empty for learned and none.
std::vector<double> fixed_fine_select(const GateMode& mode, const ScaleConfig& cfg);

}  // namespace msvit
