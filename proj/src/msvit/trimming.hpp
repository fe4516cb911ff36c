// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive trimming: reorder each image's non-class tokens by descending
// score and keep the first k, where k is the largest active-token count in
// the batch. The class token stays at slot 0.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/tokenizer.hpp"

namespace msvit {

struct TrimmedBatch {
    ad::Var embeddings;  // [(batch * (1 + k)) x d]
    ad::Var activity;    // [batch * (1 + k)]
    std::size_t batch = 0;
    std::size_t k = 0;
    // permutation[b][slot] = stream index the slot was taken from.
    std::vector<std::vector<std::size_t>> permutation;
    std::vector<std::size_t> active_counts;  // non-class active tokens per image

    std::size_t seq_len() const { return 1 + k; }
};

// Sort keys [B * seq_len]: coarse token j scores 1 - m_j, fine token i
// scores m_C(i), and active tokens get +1, so every active token outranks
// every inactive one. soft is [B x N_c].
std::vector<double> trim_scores(const TokenStream& stream, const Tensor& soft);

// Ties are broken by original stream index.
TrimmedBatch adaptive_trim(const TokenStream& stream, std::span<const double> scores);

}  // namespace msvit
