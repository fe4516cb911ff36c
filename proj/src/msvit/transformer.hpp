// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Compact pre-norm ViT backbone with activity-masked attention.
//
// Inactive tokens (activity 0) are zeroed on entry, never receive
// attention, and their block outputs are zeroed before every residual add,
// so they carry no state. The class token sits at slot 0 of every sequence.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/params.hpp"
#include "msvit/tokenizer.hpp"

namespace msvit {

struct BackboneConfig {
    std::size_t depth = 4;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t num_classes = 4;

    void validate() const;
};

struct BlockWeights {
    ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct BackboneWeights {
    ad::Var cls;
    std::vector<BlockWeights> blocks;
    ad::Var norm_g, norm_b, head_w, head_b;

    static void init(ParameterStore& store, const BackboneConfig& cfg, Rng& rng);
    static BackboneWeights bind(const Binding& b, const BackboneConfig& cfg);
};

// Masked attention for one head or many; see ad::masked_attention.
ad::Var masked_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                         const ad::Var& mask, std::size_t seq_len, std::size_t heads);

// Token representations after all blocks, [(B * seq_len) x d].
ad::Var encode(const ad::Var& tokens, const ad::Var& activity, std::size_t seq_len,
               const BackboneWeights& w, const BackboneConfig& cfg);

// Class logits [B x num_classes] from stacked sequences.
ad::Var transformer_forward(const ad::Var& tokens, const ad::Var& activity, std::size_t seq_len,
                            const BackboneWeights& w, const BackboneConfig& cfg);
ad::Var transformer_forward(const TokenStream& stream, const BackboneWeights& w,
                            const BackboneConfig& cfg);

// Oracle path: each image's active tokens physically gathered (original
// order) and run one image at a time with no mask. Returns [B x classes].
Tensor gathered_forward(const TokenStream& stream, const BackboneWeights& w,
                        const BackboneConfig& cfg);

// Single attention layer acting on the class-token query (single head,
// projections wq/wk/wv of shape [d x d]). Computes y_0 directly through the
// masked attention and through the coarse/fine split
//   y_0 = Z * (sum_j A_j + B),
//   A_j = s_j * (sum_{C(i)=j} z_i V_i - z_j V_j),  B = z_0 V_0 + sum_j z_j V_j,
// where s_j = 1 selects fine for cell j, and returns max |difference|.
struct DecompositionInputs {
    Tensor tokens;                 // [(1 + N_c + N_f) x d] in stream order
    std::vector<double> fine_select;  // [N_c]
    std::vector<std::size_t> fine_to_coarse;
    Tensor wq, wk, wv;             // [d x d]
};

struct DecompositionResult {
    Tensor direct;      // [d]
    Tensor decomposed;  // [d]
    double residual = 0.0;
};

DecompositionResult appendix_f_decomposition_check(const DecompositionInputs& in);

}  // namespace msvit
