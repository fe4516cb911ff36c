// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Two-scale patch tokenization with parameters shared across scales.
//
// Stream layout per image: [class | coarse tokens row-major | fine tokens
// row-major], so the index ranges are 0, [1, N_c] and [N_c + 1, N_c + N_f].
// A gate decision s_j = 1 selects the fine scale for coarse cell j: the
// coarse token is then inactive and its r^2 fine children are active.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/params.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

struct ScaleConfig {
    std::size_t image_size = 32;
    std::size_t fine_scale = 4;
    std::size_t coarse_scale = 8;
    std::size_t channels = 3;

    // Throws ConfigError unless S_f | S_c and S_c | W.
    void validate() const;

    std::size_t fine_grid() const { return image_size / fine_scale; }
    std::size_t coarse_grid() const { return image_size / coarse_scale; }
    std::size_t n_fine() const { return fine_grid() * fine_grid(); }
    std::size_t n_coarse() const { return coarse_grid() * coarse_grid(); }
    std::size_t ratio() const { return coarse_scale / fine_scale; }
    std::size_t stream_length() const { return 1 + n_coarse() + n_fine(); }
    std::size_t fine_patch_dim() const { return fine_scale * fine_scale * channels; }
    std::size_t coarse_patch_dim() const { return coarse_scale * coarse_scale * channels; }
};

enum class ScaleTag { cls, coarse, fine };

// Square patches of an H x W x C image in row-major order, each S x S x C.
std::vector<Tensor> patchify(const Tensor& image, std::size_t scale);
// Inverse of patchify for a square grid of patches.
Tensor unpatchify(std::span<const Tensor> patches, std::size_t grid_side);
// All patches flattened as rows of an [N x S*S*C] matrix.
Tensor patch_matrix(const Tensor& image, std::size_t scale);

// C(i): the coarse cell containing fine cell i.
std::size_t coarse_index_of(std::size_t fine_index, const ScaleConfig& cfg);
std::vector<std::size_t> fine_to_coarse_map(const ScaleConfig& cfg);
// Fine indices contained in coarse cell j, row-major.
std::vector<std::size_t> fine_children(std::size_t coarse_index, const ScaleConfig& cfg);

std::vector<ScaleTag> stream_scale_tags(const ScaleConfig& cfg);

// Activity over the full stream for one image.
std::vector<double> expand_mask(std::span<const double> fine_select, const ScaleConfig& cfg);
std::size_t count_active(std::span<const double> activity);

// phi_f and rho_f, bound into a graph. Coarse counterparts are derived.
struct SharedEmbedding {
    ad::Var weight;     // [S_f*S_f*C x d]
    ad::Var bias;       // [d]
    ad::Var pos_fine;   // [N_f x d]

    static void init(ParameterStore& store, const ScaleConfig& cfg, std::size_t width, Rng& rng);
    static SharedEmbedding bind(const Binding& b);

    std::size_t width() const { return weight->value.dim(1); }
    // rho_c: bilinear interpolation of rho_f on the coarse grid.
    ad::Var pos_coarse(const ScaleConfig& cfg) const;
};

// Resize a coarse S_c x S_c x C patch (flattened) down to S_f x S_f x C.
Tensor resize_coarse_patches(const Tensor& coarse_rows, const ScaleConfig& cfg);

// Embeddings of fine patches (rows [N x S_f^2 C]) with rho_f, or of coarse
// patches (rows [N x S_c^2 C]) with rho_c. Rows may stack several images.
ad::Var embed_fine(const Tensor& fine_rows, const SharedEmbedding& emb);
ad::Var embed_coarse(const Tensor& coarse_rows, const SharedEmbedding& emb,
                     const ScaleConfig& cfg);

// A batch of per-image token streams of equal length, stacked row-wise.
struct TokenStream {
    ad::Var embeddings;  // [(batch * seq_len) x d]
    ad::Var activity;    // [batch * seq_len]; differentiable in the gate decisions
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<ScaleTag> scale_tag;          // per stream slot
    std::vector<std::size_t> fine_to_coarse;  // C(i), i in [0, N_f)

    std::vector<double> activity_of(std::size_t image) const;
    std::size_t active_count(std::size_t image) const;
};

// Full mixed-scale streams for a batch. fine_select is [B x N_c] (binary in
// the forward pass; typically the straight-through output of the gate).
TokenStream assemble_token_stream(std::span<const Tensor> images, const ad::Var& fine_select,
                                  const SharedEmbedding& emb, const ad::Var& cls_token,
                                  const ScaleConfig& cfg);

// Plain single-scale stream: class token followed by the N_f fine tokens, all active.
TokenStream assemble_fine_stream(std::span<const Tensor> images, const SharedEmbedding& emb,
                                 const ad::Var& cls_token, const ScaleConfig& cfg);

}  // namespace msvit
