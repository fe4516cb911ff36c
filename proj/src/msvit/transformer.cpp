// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "msvit/errors.hpp"

namespace msvit {

void BackboneConfig::validate() const {
    if (depth == 0 || width == 0 || heads == 0 || mlp_ratio == 0) {
        throw ConfigError("backbone: depth, width, heads and mlp_ratio must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError("backbone.width (" + std::to_string(width) +
                          ") must be divisible by backbone.heads (" + std::to_string(heads) + ")");
    }
    if (num_classes < 2) throw ConfigError("backbone.num_classes must be at least 2");
}

void BackboneWeights::init(ParameterStore& store, const BackboneConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.width, hd = cfg.width * cfg.mlp_ratio;
    store.add("cls_token", normal_tensor(Shape{d}, 0.02, rng), ParamGroup::backbone);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        store.add(p + "ln1.gamma", Tensor(Shape{d}, 1.0), ParamGroup::backbone);
        store.add(p + "ln1.beta", Tensor(Shape{d}, 0.0), ParamGroup::backbone);
        for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
            store.add(p + name + ".weight", xavier_uniform(d, d, rng), ParamGroup::backbone);
            store.add(p + name + ".bias", Tensor(Shape{d}, 0.0), ParamGroup::backbone);
        }
        store.add(p + "ln2.gamma", Tensor(Shape{d}, 1.0), ParamGroup::backbone);
        store.add(p + "ln2.beta", Tensor(Shape{d}, 0.0), ParamGroup::backbone);
        store.add(p + "mlp.fc1.weight", xavier_uniform(d, hd, rng), ParamGroup::backbone);
        store.add(p + "mlp.fc1.bias", Tensor(Shape{hd}, 0.0), ParamGroup::backbone);
        store.add(p + "mlp.fc2.weight", xavier_uniform(hd, d, rng), ParamGroup::backbone);
        store.add(p + "mlp.fc2.bias", Tensor(Shape{d}, 0.0), ParamGroup::backbone);
    }
    store.add("norm.gamma", Tensor(Shape{d}, 1.0), ParamGroup::backbone);
    store.add("norm.beta", Tensor(Shape{d}, 0.0), ParamGroup::backbone);
    store.add("head.weight", xavier_uniform(d, cfg.num_classes, rng), ParamGroup::backbone);
    store.add("head.bias", Tensor(Shape{cfg.num_classes}, 0.0), ParamGroup::backbone);
}

BackboneWeights BackboneWeights::bind(const Binding& b, const BackboneConfig& cfg) {
    BackboneWeights w;
    w.cls = b("cls_token");
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        w.blocks.push_back(BlockWeights{
            b(p + "ln1.gamma"), b(p + "ln1.beta"),
            b(p + "attn.q.weight"), b(p + "attn.q.bias"),
            b(p + "attn.k.weight"), b(p + "attn.k.bias"),
            b(p + "attn.v.weight"), b(p + "attn.v.bias"),
            b(p + "attn.out.weight"), b(p + "attn.out.bias"),
            b(p + "ln2.gamma"), b(p + "ln2.beta"),
            b(p + "mlp.fc1.weight"), b(p + "mlp.fc1.bias"),
            b(p + "mlp.fc2.weight"), b(p + "mlp.fc2.bias")});
    }
    w.norm_g = b("norm.gamma");
    w.norm_b = b("norm.beta");
    w.head_w = b("head.weight");
    w.head_b = b("head.bias");
    return w;
}

ad::Var masked_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                         const ad::Var& mask, std::size_t seq_len, std::size_t heads) {
    return ad::masked_attention(q, k, v, mask, seq_len, heads);
}

ad::Var encode(const ad::Var& tokens, const ad::Var& activity, std::size_t seq_len,
               const BackboneWeights& w, const BackboneConfig& cfg) {
    if (tokens->value.rank() != 2 || tokens->value.dim(1) != cfg.width) {
        throw std::invalid_argument("transformer: token width does not match backbone");
    }
    if (w.blocks.size() != cfg.depth) throw std::invalid_argument("transformer: depth mismatch");
    ad::Var x = ad::row_scale(tokens, activity);
    for (const BlockWeights& blk : w.blocks) {
        const ad::Var h = ad::layer_norm(x, blk.ln1_g, blk.ln1_b);
        const ad::Var q = ad::linear(h, blk.wq, blk.bq);
        const ad::Var k = ad::linear(h, blk.wk, blk.bk);
        const ad::Var v = ad::linear(h, blk.wv, blk.bv);
        const ad::Var att = ad::masked_attention(q, k, v, activity, seq_len, cfg.heads);
        x = ad::add(x, ad::row_scale(ad::linear(att, blk.wo, blk.bo), activity));
        const ad::Var h2 = ad::layer_norm(x, blk.ln2_g, blk.ln2_b);
        const ad::Var f = ad::linear(ad::gelu(ad::linear(h2, blk.w1, blk.b1)), blk.w2, blk.b2);
        x = ad::add(x, ad::row_scale(f, activity));
    }
    return x;
}

ad::Var transformer_forward(const ad::Var& tokens, const ad::Var& activity, std::size_t seq_len,
                            const BackboneWeights& w, const BackboneConfig& cfg) {
    const ad::Var x = encode(tokens, activity, seq_len, w, cfg);
    const std::size_t batch = tokens->value.dim(0) / seq_len;
    std::vector<std::size_t> cls_rows(batch);
    for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * seq_len;
    const ad::Var cls = ad::layer_norm(ad::gather_rows(x, std::move(cls_rows)), w.norm_g, w.norm_b);
    return ad::linear(cls, w.head_w, w.head_b);
}

ad::Var transformer_forward(const TokenStream& stream, const BackboneWeights& w,
                            const BackboneConfig& cfg) {
    return transformer_forward(stream.embeddings, stream.activity, stream.seq_len, w, cfg);
}

Tensor gathered_forward(const TokenStream& stream, const BackboneWeights& w,
                        const BackboneConfig& cfg) {
    Tensor logits(Shape{stream.batch, cfg.num_classes});
    for (std::size_t b = 0; b < stream.batch; ++b) {
        std::vector<std::size_t> rows;
        for (std::size_t t = 0; t < stream.seq_len; ++t) {
            if (stream.activity->value[b * stream.seq_len + t] > 0.5) rows.push_back(b * stream.seq_len + t);
        }
        const std::size_t n = rows.size();
        const ad::Var tok = ad::constant(ad::gather_rows(stream.embeddings, std::move(rows))->value);
        const ad::Var ones = ad::constant(Tensor(Shape{n}, 1.0));
        const Tensor out = transformer_forward(tok, ones, n, w, cfg)->value;
        for (std::size_t c = 0; c < cfg.num_classes; ++c) logits.at(b, c) = out[c];
    }
    return logits;
}

DecompositionResult appendix_f_decomposition_check(const DecompositionInputs& in) {
    const std::size_t n = in.tokens.dim(0), d = in.tokens.dim(1);
    const std::size_t nc = in.fine_select.size(), nf = in.fine_to_coarse.size();
    if (n != 1 + nc + nf) throw std::invalid_argument("decomposition: stream length mismatch");

    const ad::Var x = ad::constant(in.tokens);
    const ad::Var zero_b = ad::constant(Tensor(Shape{d}, 0.0));
    const Tensor q = ad::linear(x, ad::constant(in.wq), zero_b)->value;
    const Tensor k = ad::linear(x, ad::constant(in.wk), zero_b)->value;
    const Tensor v = ad::linear(x, ad::constant(in.wv), zero_b)->value;

    Tensor act(Shape{n});
    act[0] = 1.0;
    for (std::size_t j = 0; j < nc; ++j) act[1 + j] = 1.0 - in.fine_select[j];
    for (std::size_t i = 0; i < nf; ++i) act[1 + nc + i] = in.fine_select[in.fine_to_coarse[i]];

    DecompositionResult res;
    const Tensor att = ad::masked_attention(ad::constant(q), ad::constant(k), ad::constant(v),
                                            ad::constant(act), n, 1)
                           ->value;
    res.direct = Tensor(Shape{d});
    for (std::size_t t = 0; t < d; ++t) res.direct[t] = att.at(0, t);

    const double sc = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += q.at(0, t) * k.at(i, t);
        z[i] = std::exp(dot * sc);
    }
    double partition = 0.0;
    for (std::size_t i = 0; i < n; ++i) partition += act[i] * z[i];

    // B: class token plus every coarse token, independent of the decisions.
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = 0; i <= nc; ++i)
        for (std::size_t t = 0; t < d; ++t) acc[t] += z[i] * v.at(i, t);
    for (std::size_t j = 0; j < nc; ++j) {
        if (in.fine_select[j] == 0.0) continue;
        for (std::size_t t = 0; t < d; ++t) {
            double fine_sum = 0.0;
            for (std::size_t i = 0; i < nf; ++i)
                if (in.fine_to_coarse[i] == j) fine_sum += z[1 + nc + i] * v.at(1 + nc + i, t);
            acc[t] += in.fine_select[j] * (fine_sum - z[1 + j] * v.at(1 + j, t));
        }
    }
    res.decomposed = Tensor(Shape{d});
    for (std::size_t t = 0; t < d; ++t) {
        res.decomposed[t] = acc[t] / partition;
        res.residual = std::max(res.residual, std::abs(res.decomposed[t] - res.direct[t]));
    }
    return res;
}

}  // namespace msvit
