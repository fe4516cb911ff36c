// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/tokenizer.hpp"

#include <stdexcept>
#include <string>

#include "msvit/errors.hpp"

namespace msvit {

void ScaleConfig::validate() const {
    if (image_size == 0 || fine_scale == 0 || coarse_scale == 0 || channels == 0) {
        throw ConfigError("scale: sizes must be positive");
    }
    if (fine_scale >= coarse_scale) {
        throw ConfigError("scale.fine_scale must be smaller than scale.coarse_scale");
    }
    if (coarse_scale % fine_scale != 0) {
        throw ConfigError("scale.fine_scale (" + std::to_string(fine_scale) +
                          ") must divide scale.coarse_scale (" + std::to_string(coarse_scale) + ")");
    }
    if (image_size % coarse_scale != 0) {
        throw ConfigError("scale.coarse_scale (" + std::to_string(coarse_scale) +
                          ") must divide scale.image_size (" + std::to_string(image_size) + ")");
    }
}

std::vector<Tensor> patchify(const Tensor& image, std::size_t scale) {
    if (image.rank() != 3 || image.dim(0) != image.dim(1)) {
        throw std::invalid_argument("patchify: expected square W x W x C image, got " +
                                    shape_str(image.shape()));
    }
    const std::size_t w = image.dim(0), c = image.dim(2);
    if (scale == 0 || w % scale != 0) {
        throw std::invalid_argument("patchify: scale " + std::to_string(scale) +
                                    " does not divide image size " + std::to_string(w));
    }
    const std::size_t g = w / scale;
    std::vector<Tensor> out;
    out.reserve(g * g);
    for (std::size_t pr = 0; pr < g; ++pr) {
        for (std::size_t pc = 0; pc < g; ++pc) {
            Tensor p(Shape{scale, scale, c});
            for (std::size_t y = 0; y < scale; ++y)
                for (std::size_t x = 0; x < scale; ++x)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        p[(y * scale + x) * c + ch] =
                            image[((pr * scale + y) * w + pc * scale + x) * c + ch];
            out.push_back(std::move(p));
        }
    }
    return out;
}

Tensor unpatchify(std::span<const Tensor> patches, std::size_t grid_side) {
    if (patches.size() != grid_side * grid_side || patches.empty()) {
        throw std::invalid_argument("unpatchify: patch count does not match grid");
    }
    const std::size_t s = patches[0].dim(0), c = patches[0].dim(2), w = s * grid_side;
    Tensor image(Shape{w, w, c});
    for (std::size_t k = 0; k < patches.size(); ++k) {
        const std::size_t pr = k / grid_side, pc = k % grid_side;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
                for (std::size_t ch = 0; ch < c; ++ch)
                    image[((pr * s + y) * w + pc * s + x) * c + ch] = patches[k][(y * s + x) * c + ch];
    }
    return image;
}

Tensor patch_matrix(const Tensor& image, std::size_t scale) {
    const auto patches = patchify(image, scale);
    const std::size_t dim = patches[0].size();
    Tensor out(Shape{patches.size(), dim});
    for (std::size_t k = 0; k < patches.size(); ++k)
        std::copy(patches[k].ptr(), patches[k].ptr() + dim, out.ptr() + k * dim);
    return out;
}

std::size_t coarse_index_of(std::size_t fine_index, const ScaleConfig& cfg) {
    if (fine_index >= cfg.n_fine()) {
        throw std::out_of_range("coarse_index_of: fine index " + std::to_string(fine_index) +
                                " out of range " + std::to_string(cfg.n_fine()));
    }
    const std::size_t fg = cfg.fine_grid(), r = cfg.ratio();
    const std::size_t row = fine_index / fg, col = fine_index % fg;
    return (row / r) * cfg.coarse_grid() + col / r;
}

std::vector<std::size_t> fine_to_coarse_map(const ScaleConfig& cfg) {
    std::vector<std::size_t> map(cfg.n_fine());
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = coarse_index_of(i, cfg);
    return map;
}

std::vector<std::size_t> fine_children(std::size_t coarse_index, const ScaleConfig& cfg) {
    if (coarse_index >= cfg.n_coarse()) throw std::out_of_range("fine_children: bad coarse index");
    const std::size_t cg = cfg.coarse_grid(), fg = cfg.fine_grid(), r = cfg.ratio();
    const std::size_t cr = coarse_index / cg, cc = coarse_index % cg;
    std::vector<std::size_t> out;
    for (std::size_t y = 0; y < r; ++y)
        for (std::size_t x = 0; x < r; ++x) out.push_back((cr * r + y) * fg + cc * r + x);
    return out;
}

std::vector<ScaleTag> stream_scale_tags(const ScaleConfig& cfg) {
    std::vector<ScaleTag> tags;
    tags.reserve(cfg.stream_length());
    tags.push_back(ScaleTag::cls);
    tags.insert(tags.end(), cfg.n_coarse(), ScaleTag::coarse);
    tags.insert(tags.end(), cfg.n_fine(), ScaleTag::fine);
    return tags;
}

std::vector<double> expand_mask(std::span<const double> fine_select, const ScaleConfig& cfg) {
    if (fine_select.size() != cfg.n_coarse()) {
        throw std::invalid_argument("expand_mask: expected " + std::to_string(cfg.n_coarse()) +
                                    " decisions, got " + std::to_string(fine_select.size()));
    }
    std::vector<double> act(cfg.stream_length());
    act[0] = 1.0;
    for (std::size_t j = 0; j < cfg.n_coarse(); ++j) act[1 + j] = 1.0 - fine_select[j];
    const std::size_t off = 1 + cfg.n_coarse();
    for (std::size_t i = 0; i < cfg.n_fine(); ++i)
        act[off + i] = fine_select[coarse_index_of(i, cfg)];
    return act;
}

std::size_t count_active(std::span<const double> activity) {
    std::size_t n = 0;
    for (double a : activity) n += a > 0.5 ? 1 : 0;
    return n;
}

void SharedEmbedding::init(ParameterStore& store, const ScaleConfig& cfg, std::size_t width,
                           Rng& rng) {
    store.add("embed.weight", xavier_uniform(cfg.fine_patch_dim(), width, rng), ParamGroup::backbone);
    store.add("embed.bias", Tensor(Shape{width}, 0.0), ParamGroup::backbone);
    store.add("embed.pos_fine", normal_tensor(Shape{cfg.n_fine(), width}, 0.02, rng),
              ParamGroup::backbone);
}

SharedEmbedding SharedEmbedding::bind(const Binding& b) {
    return SharedEmbedding{b("embed.weight"), b("embed.bias"), b("embed.pos_fine")};
}

ad::Var SharedEmbedding::pos_coarse(const ScaleConfig& cfg) const {
    const std::size_t d = width(), fg = cfg.fine_grid(), cg = cfg.coarse_grid();
    if (pos_fine->value.dim(0) != fg * fg) {
        throw std::invalid_argument("pos_coarse: position table does not match fine grid");
    }
    auto grid = ad::reshape(pos_fine, Shape{fg, fg, d});
    return ad::reshape(ad::bilinear_resize(grid, cg, cg), Shape{cg * cg, d});
}

Tensor resize_coarse_patches(const Tensor& coarse_rows, const ScaleConfig& cfg) {
    const std::size_t sc = cfg.coarse_scale, sf = cfg.fine_scale, c = cfg.channels;
    if (coarse_rows.rank() != 2 || coarse_rows.dim(1) != sc * sc * c) {
        throw std::invalid_argument("resize_coarse_patches: rows must have " +
                                    std::to_string(sc * sc * c) + " columns");
    }
    const std::size_t n = coarse_rows.dim(0), out_dim = sf * sf * c;
    Tensor out(Shape{n, out_dim});
    for (std::size_t r = 0; r < n; ++r) {
        Tensor patch(Shape{sc, sc, c},
                     std::vector<double>(coarse_rows.ptr() + r * sc * sc * c,
                                         coarse_rows.ptr() + (r + 1) * sc * sc * c));
        const Tensor small = ad::bilinear_resize(patch, sf, sf);
        std::copy(small.ptr(), small.ptr() + out_dim, out.ptr() + r * out_dim);
    }
    return out;
}

ad::Var embed_fine(const Tensor& fine_rows, const SharedEmbedding& emb) {
    if (fine_rows.rank() != 2 || fine_rows.dim(1) != emb.weight->value.dim(0)) {
        throw std::invalid_argument("embed_fine: patch dimension mismatch");
    }
    return ad::add_tiled(ad::linear(ad::constant(fine_rows), emb.weight, emb.bias), emb.pos_fine);
}

ad::Var embed_coarse(const Tensor& coarse_rows, const SharedEmbedding& emb,
                     const ScaleConfig& cfg) {
    const Tensor resized = resize_coarse_patches(coarse_rows, cfg);
    if (resized.dim(1) != emb.weight->value.dim(0)) {
        throw std::invalid_argument("embed_coarse: patch dimension mismatch");
    }
    return ad::add_tiled(ad::linear(ad::constant(resized), emb.weight, emb.bias),
                         emb.pos_coarse(cfg));
}

std::vector<double> TokenStream::activity_of(std::size_t image) const {
    const auto* p = activity->value.ptr() + image * seq_len;
    return std::vector<double>(p, p + seq_len);
}

std::size_t TokenStream::active_count(std::size_t image) const {
    return count_active(activity_of(image));
}

namespace {

Tensor stack_patches(std::span<const Tensor> images, std::size_t scale) {
    std::vector<Tensor> mats;
    std::size_t rows = 0;
    for (const auto& img : images) {
        mats.push_back(patch_matrix(img, scale));
        rows += mats.back().dim(0);
    }
    const std::size_t dim = mats.at(0).dim(1);
    Tensor out(Shape{rows, dim});
    std::size_t off = 0;
    for (const auto& m : mats) {
        std::copy(m.ptr(), m.ptr() + m.size(), out.ptr() + off);
        off += m.size();
    }
    return out;
}

void check_images(std::span<const Tensor> images, const ScaleConfig& cfg) {
    if (images.empty()) throw std::invalid_argument("token stream: empty batch");
    for (const auto& img : images) {
        if (img.shape() != Shape{cfg.image_size, cfg.image_size, cfg.channels}) {
            throw std::invalid_argument("token stream: image shape " + shape_str(img.shape()) +
                                        " does not match configuration");
        }
    }
}

}  // namespace

TokenStream assemble_token_stream(std::span<const Tensor> images, const ad::Var& fine_select,
                                  const SharedEmbedding& emb, const ad::Var& cls_token,
                                  const ScaleConfig& cfg) {
    cfg.validate();
    check_images(images, cfg);
    const std::size_t b = images.size(), nc = cfg.n_coarse(), nf = cfg.n_fine();
    const std::size_t n = cfg.stream_length(), d = emb.width();
    if (fine_select->value.size() != b * nc) {
        throw std::invalid_argument("assemble_token_stream: expected " + std::to_string(b * nc) +
                                    " gate decisions");
    }
    const ad::Var fine = embed_fine(stack_patches(images, cfg.fine_scale), emb);
    const ad::Var coarse = embed_coarse(stack_patches(images, cfg.coarse_scale), emb, cfg);
    const ad::Var all = ad::concat_rows({ad::reshape(cls_token, Shape{1, d}), coarse, fine});

    const auto c_of = fine_to_coarse_map(cfg);
    std::vector<std::size_t> order;
    std::vector<std::size_t> fine_sel_index;
    order.reserve(b * n);
    for (std::size_t img = 0; img < b; ++img) {
        order.push_back(0);
        for (std::size_t j = 0; j < nc; ++j) order.push_back(1 + img * nc + j);
        for (std::size_t i = 0; i < nf; ++i) {
            order.push_back(1 + b * nc + img * nf + i);
            fine_sel_index.push_back(img * nc + c_of[i]);
        }
    }

    const ad::Var sel = ad::reshape(fine_select, Shape{b * nc});
    const ad::Var act_all = ad::concat_rows({ad::constant(Tensor(Shape{1}, 1.0)),
                                             ad::add_scalar(ad::scale(sel, -1.0), 1.0),
                                             ad::take(sel, std::move(fine_sel_index))});
    // Map stream slots onto act_all's [1 | B*N_c | B*N_f] layout.
    std::vector<std::size_t> act_order;
    act_order.reserve(b * n);
    for (std::size_t img = 0; img < b; ++img) {
        act_order.push_back(0);
        for (std::size_t j = 0; j < nc; ++j) act_order.push_back(1 + img * nc + j);
        for (std::size_t i = 0; i < nf; ++i) act_order.push_back(1 + b * nc + img * nf + i);
    }

    TokenStream ts;
    ts.embeddings = ad::gather_rows(all, std::move(order));
    ts.activity = ad::gather_rows(act_all, std::move(act_order));
    ts.batch = b;
    ts.seq_len = n;
    ts.scale_tag = stream_scale_tags(cfg);
    ts.fine_to_coarse = c_of;
    return ts;
}

TokenStream assemble_fine_stream(std::span<const Tensor> images, const SharedEmbedding& emb,
                                 const ad::Var& cls_token, const ScaleConfig& cfg) {
    cfg.validate();
    check_images(images, cfg);
    const std::size_t b = images.size(), nf = cfg.n_fine(), n = 1 + nf, d = emb.width();
    const ad::Var fine = embed_fine(stack_patches(images, cfg.fine_scale), emb);
    const ad::Var all = ad::concat_rows({ad::reshape(cls_token, Shape{1, d}), fine});
    std::vector<std::size_t> order;
    order.reserve(b * n);
    for (std::size_t img = 0; img < b; ++img) {
        order.push_back(0);
        for (std::size_t i = 0; i < nf; ++i) order.push_back(1 + img * nf + i);
    }
    TokenStream ts;
    ts.embeddings = ad::gather_rows(all, std::move(order));
    ts.activity = ad::constant(Tensor(Shape{b * n}, 1.0));
    ts.batch = b;
    ts.seq_len = n;
    ts.scale_tag.assign(n, ScaleTag::fine);
    ts.scale_tag[0] = ScaleTag::cls;
    ts.fine_to_coarse = fine_to_coarse_map(cfg);
    return ts;
}

}  // namespace msvit
