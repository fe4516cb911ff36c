// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Scale-selection gate: a 4-layer MLP applied to every coarse patch on its
// own, with a gate-specific position encoding added after the first layer.
// Output m close to 1 selects the fine scale for that region.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/params.hpp"
#include "msvit/rng.hpp"
#include "msvit/tokenizer.hpp"

namespace msvit {

struct GateConfig {
    std::size_t hidden = 96;
    double temperature = 0.3;  // Gumbel-Sigmoid temperature
    double bias_init = 6.0;    // sigma(6) ~ 0.9975: every region starts fine

    void validate() const;
};

struct GateWeights {
    ad::Var w1, b1, pos, w2, b2, w3, b3, w4, b4;

    static void init(ParameterStore& store, const ScaleConfig& scale, const GateConfig& cfg,
                     Rng& rng);
    static GateWeights bind(const Binding& b);
};

// Pre-sigmoid gate scores for stacked coarse patches [(B * N_c) x S_c^2 C];
// row r uses position encoding r mod N_c. Returns [B * N_c].
ad::Var gate_logits(const Tensor& coarse_rows, const GateWeights& w);

// sigma((logit + L) / tau) elementwise; noise holds the logistic draws L.
ad::Var gumbel_sigmoid(const ad::Var& logits, double tau, const Tensor& noise);
double gumbel_sigmoid(double logit, double tau, Rng& rng);

// Logistic noise for one batch: element e of batch `batch_index` in `epoch`
// draws from its own stream keyed by (seed, epoch, batch_index, e).
Tensor gate_noise(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch_index,
                  std::size_t batch, std::size_t cells);

struct GateOutput {
    ad::Var logits;     // [B x N_c]
    ad::Var soft;       // m in (0, 1)
    ad::Var decisions;  // straight-through threshold of m, {0, 1}
};

// Training mode when noise is given; otherwise m = sigma(logit).
GateOutput run_gate(const Tensor& coarse_rows, std::size_t batch, const GateWeights& w,
                    const GateConfig& cfg, const Tensor* noise);

// Straight-through discretisation of the soft scores.
ad::Var discretize(const ad::Var& soft);

// Fixed baseline: a cell is fine iff its centre lies within `radius` cells
// of the grid centre.
std::vector<double> radial_mask(std::size_t grid_side, double radius);

// MACs of one gate evaluation on a single coarse patch.
std::size_t gate_macs_per_patch(std::size_t input_dim, std::size_t hidden);

}  // namespace msvit
