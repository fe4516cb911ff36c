// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/model.hpp"

#include <array>
#include <bit>
#include <fstream>

#include "json.hpp"
#include "msvit/errors.hpp"
#include "msvit/gate.hpp"
#include "msvit/shaping_losses.hpp"
#include "msvit/tokenizer.hpp"
#include "msvit/transformer.hpp"
#include "msvit/trimming.hpp"

namespace msvit {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::array<char, 8> kCheckpointMagic{'M', 'S', 'V', 'C', 'K', 'P', 'T', '1'};

Tensor stacked_patches(std::span<const Tensor> images, std::size_t scale) {
    std::vector<Tensor> mats;
    std::size_t rows = 0;
    for (const auto& img : images) {
        mats.push_back(patch_matrix(img, scale));
        rows += mats.back().dim(0);
    }
    Tensor out(Shape{rows, mats.at(0).dim(1)});
    double* dst = out.ptr();
    for (const auto& m : mats) dst = std::copy(m.ptr(), m.ptr() + m.size(), dst);
    return out;
}

ParameterStore fresh_store(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterStore store;
    Rng rng(derive_key({seed, 0x696e6974ULL}));
    SharedEmbedding::init(store, cfg.scale, cfg.backbone.width, rng);
    BackboneWeights::init(store, cfg.backbone, rng);
    GateWeights::init(store, cfg.scale, cfg.gate, rng);
    PriorParams::init(store, cfg.scale.coarse_grid(), cfg.loss);
    return store;
}

}  // namespace

std::vector<double> fixed_fine_select(const GateMode& mode, const ScaleConfig& cfg) {
    const std::size_t nc = cfg.n_coarse();
    switch (mode.kind) {
        case GateMode::all_fine: return std::vector<double>(nc, 1.0);
        case GateMode::all_coarse: return std::vector<double>(nc, 0.0);
        case GateMode::radial: return radial_mask(cfg.coarse_grid(), mode.radius);
        default: return {};
    }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(fresh_store(cfg, seed)) {}

Model::Model(const ModelConfig& cfg, ParameterStore store) : cfg_(cfg), store_(std::move(store)) {
    const ParameterStore ref = fresh_store(cfg, 0);
    if (ref.size() != store_.size())
        throw FormatError("parameter count " + std::to_string(store_.size()) + " does not match model (" +
                          std::to_string(ref.size()) + ")");
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto& p = ref.all()[i];
        if (!store_.contains(p.name)) throw FormatError("missing parameter '" + p.name + "'");
        if (store_.all()[i].name != p.name)
            throw FormatError("parameter '" + p.name + "' out of order");
        if (store_.get(p.name).value.shape() != p.value.shape())
            throw FormatError("parameter '" + p.name + "' has shape " +
                              shape_str(store_.get(p.name).value.shape()) + ", expected " +
                              shape_str(p.value.shape()));
    }
}

ForwardResult Model::forward(std::span<const Tensor> images, const ForwardOptions& opt) const {
    if (images.empty()) throw std::invalid_argument("forward: empty batch");
    const auto& sc = cfg_.scale;
    const std::size_t b = images.size(), nc = sc.n_coarse();
    ForwardResult fr(Binding{store_});
    const SharedEmbedding emb = SharedEmbedding::bind(fr.binding);
    const BackboneWeights bb = BackboneWeights::bind(fr.binding, cfg_.backbone);

    if (opt.mode.kind == GateMode::none) {
        const TokenStream ts = assemble_fine_stream(images, emb, bb.cls, sc);
        fr.logits = transformer_forward(ts, bb, cfg_.backbone);
        fr.decisions = Tensor(Shape{b, nc}, 1.0);
        fr.active_tokens.assign(b, ts.seq_len);
        fr.seq_len = ts.seq_len;
        return fr;
    }

    ad::Var select;
    if (opt.mode.kind == GateMode::learned) {
        const Tensor coarse = stacked_patches(images, sc.coarse_scale);
        const GateWeights gw = GateWeights::bind(fr.binding);
        Tensor noise;
        if (opt.stochastic) noise = gate_noise(opt.noise_seed, opt.epoch, opt.batch_index, b, nc);
        const GateOutput go = run_gate(coarse, b, gw, cfg_.gate, opt.stochastic ? &noise : nullptr);
        fr.soft = go.soft;
        select = go.decisions;
    } else {
        const auto mask = fixed_fine_select(opt.mode, sc);
        Tensor sel(Shape{b, nc});
        for (std::size_t i = 0; i < b; ++i) std::copy(mask.begin(), mask.end(), sel.ptr() + i * nc);
        select = ad::constant(std::move(sel));
    }
    fr.decisions = select->value;

    const TokenStream ts = assemble_token_stream(images, select, emb, bb.cls, sc);
    for (std::size_t i = 0; i < b; ++i) fr.active_tokens.push_back(ts.active_count(i));
    if (opt.trimming) {
        const Tensor& keys = fr.soft ? fr.soft->value : fr.decisions;
        const TrimmedBatch tb = adaptive_trim(ts, trim_scores(ts, keys));
        fr.logits = transformer_forward(tb.embeddings, tb.activity, tb.seq_len(), bb, cfg_.backbone);
        fr.seq_len = tb.seq_len();
    } else {
        fr.logits = transformer_forward(ts, bb, cfg_.backbone);
        fr.seq_len = ts.seq_len;
    }
    return fr;
}

ad::Var Model::gate_loss(const ForwardResult& fr) const {
    if (!fr.soft) return ad::constant(Tensor::scalar(0.0));
    const PriorParams priors = PriorParams::bind(fr.binding, cfg_.loss);
    return msvit::gate_loss(fr.soft, cfg_.loss, &priors);
}

void Model::save(const fs::path& path, const RunConfig& run) const {
    ordered_json params = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& p : store_.all()) {
        params.push_back({{"name", p.name},
                          {"group", param_group_name(p.group)},
                          {"shape", p.value.shape()},
                          {"offset", offset},
                          {"count", p.value.size()}});
        offset += p.value.size();
    }
    RunConfig resolved = run;
    resolved.model = cfg_;
    ordered_json header{{"format", "msvit-checkpoint"},
                        {"version", 1},
                        {"dtype", "f64"},
                        {"byte_order", "little"},
                        {"config", ordered_json::parse(run_config_to_json(resolved))},
                        {"parameters", std::move(params)}};
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : store_.all())
            out.write(reinterpret_cast<const char*>(p.value.ptr()),
                      static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

std::pair<Model, RunConfig> Model::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string where = path.string() + ": ";
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 8 || magic != kCheckpointMagic) throw FormatError(where + "not a checkpoint");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (in.gcount() != sizeof len || len > (1u << 24)) throw FormatError(where + "bad header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw FormatError(where + "truncated header");

    ordered_json header;
    try {
        header = ordered_json::parse(text);
    } catch (const ordered_json::exception& e) {
        throw FormatError(where + "malformed header: " + e.what());
    }
    if (header.value("format", std::string()) != "msvit-checkpoint" || header.value("version", 0) != 1)
        throw FormatError(where + "unsupported checkpoint format");
    RunConfig run;
    try {
        run = parse_run_config(header.at("config").dump());
    } catch (const ConfigError& e) {
        throw FormatError(where + "stored config invalid: " + e.what());
    } catch (const ordered_json::exception& e) {
        throw FormatError(where + "missing config");
    }

    std::vector<double> payload;
    {
        const auto start = in.tellg();
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<std::size_t>(in.tellg() - start);
        in.seekg(start);
        if (bytes % sizeof(double) != 0) throw FormatError(where + "payload is not a whole number of f64");
        payload.resize(bytes / sizeof(double));
        in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    }
    ParameterStore store;
    const ParameterStore ref = fresh_store(run.model, 0);
    try {
        for (const auto& e : header.at("parameters")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::size_t>();
            const auto count = e.at("count").get<std::size_t>();
            if (count != shape_numel(shape)) throw FormatError(where + "count/shape mismatch for " + name);
            if (offset + count > payload.size())
                throw FormatError(where + "payload too short: parameter '" + name + "' needs " +
                                  std::to_string((offset + count) * 8) + " bytes, payload has " +
                                  std::to_string(payload.size() * 8));
            if (!ref.contains(name)) throw FormatError(where + "unknown parameter '" + name + "'");
            std::vector<double> v(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                  payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
            store.add(name, Tensor(shape, std::move(v)), ref.get(name).group);
        }
    } catch (const ordered_json::exception& e) {
        throw FormatError(where + "bad parameter table: " + e.what());
    }
    Model model(run.model, std::move(store));
    return {std::move(model), std::move(run)};
}

}  // namespace msvit
