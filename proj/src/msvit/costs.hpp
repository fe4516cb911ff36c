// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic multiply-accumulate counts. Only linear layers and the two
// attention matmuls are counted; norms, softmax and activations are free.
//
//   patch embed : n_patches * (S_f^2 C) * d
//   per layer   : 12 n d^2 (q, k, v, out: 4 n d^2; FFN at ratio 4: 8 n d^2)
//                 + 2 n^2 d (scores and weighted values)
//   head        : d * classes
//   gate        : N_c * (S_c^2 C h + 2 h^2 + h)
//
// n counts the class token.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msvit/gate.hpp"
#include "msvit/tokenizer.hpp"
#include "msvit/transformer.hpp"

namespace msvit {

struct MacBreakdown {
    double patch_embed = 0;
    double attention_projections = 0;
    double attention_matmuls = 0;
    double ffn = 0;
    double head = 0;
    double gate = 0;

    double backbone() const {
        return patch_embed + attention_projections + attention_matmuls + ffn + head;
    }
    double total() const { return backbone() + gate; }
};

struct CostModel {
    ScaleConfig scale;
    BackboneConfig backbone;
    std::size_t gate_hidden = 96;
    bool include_gate = true;

    double gate_macs() const;
    // n_active includes the class token; must be >= 1.
    MacBreakdown mac_count(std::size_t n_active) const;
    // Single-scale baseline with every fine patch active.
    MacBreakdown plain_vit() const;
};

double avg_active_tokens(std::span<const std::size_t> counts);
double avg_active_tokens(std::span<const std::vector<double>> masks);

struct CostReport {
    std::string mask_source;
    std::size_t images = 0;
    double mean_active_tokens = 0;
    MacBreakdown mean;  // per-image mean of each component
    bool gate_included = true;

    std::string to_json(const CostModel& model) const;
};

CostReport cost_report(const CostModel& model, std::span<const std::size_t> active_counts,
                       std::string mask_source);

}  // namespace msvit
