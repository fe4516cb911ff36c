// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/costs.hpp"

#include <stdexcept>

#include "json.hpp"

namespace msvit {

double CostModel::gate_macs() const {
    return static_cast<double>(scale.n_coarse()) *
           static_cast<double>(gate_macs_per_patch(scale.coarse_patch_dim(), gate_hidden));
}

MacBreakdown CostModel::mac_count(std::size_t n_active) const {
    if (n_active < 1) throw std::invalid_argument("mac_count: n_active must be >= 1");
    const double n = static_cast<double>(n_active);
    const double d = static_cast<double>(backbone.width);
    const double depth = static_cast<double>(backbone.depth);
    const double ratio = static_cast<double>(backbone.mlp_ratio);
    MacBreakdown m;
    m.patch_embed = (n - 1.0) * static_cast<double>(scale.fine_patch_dim()) * d;
    m.attention_projections = depth * 4.0 * n * d * d;
    m.ffn = depth * 2.0 * ratio * n * d * d;
    m.attention_matmuls = depth * 2.0 * n * n * d;
    m.head = d * static_cast<double>(backbone.num_classes);
    m.gate = include_gate ? gate_macs() : 0.0;
    return m;
}

MacBreakdown CostModel::plain_vit() const {
    CostModel plain = *this;
    plain.include_gate = false;
    return plain.mac_count(1 + scale.n_fine());
}

double avg_active_tokens(std::span<const std::size_t> counts) {
    if (counts.empty()) throw std::invalid_argument("avg_active_tokens: empty batch");
    double s = 0.0;
    for (std::size_t c : counts) s += static_cast<double>(c);
    return s / static_cast<double>(counts.size());
}

double avg_active_tokens(std::span<const std::vector<double>> masks) {
    std::vector<std::size_t> counts;
    for (const auto& m : masks) counts.push_back(count_active(m));
    return avg_active_tokens(counts);
}

CostReport cost_report(const CostModel& model, std::span<const std::size_t> active_counts,
                       std::string mask_source) {
    CostReport r;
    r.mask_source = std::move(mask_source);
    r.images = active_counts.size();
    r.gate_included = model.include_gate;
    r.mean_active_tokens = avg_active_tokens(active_counts);
    const double inv = 1.0 / static_cast<double>(active_counts.size());
    for (std::size_t n : active_counts) {
        const MacBreakdown m = model.mac_count(n);
        r.mean.patch_embed += m.patch_embed * inv;
        r.mean.attention_projections += m.attention_projections * inv;
        r.mean.attention_matmuls += m.attention_matmuls * inv;
        r.mean.ffn += m.ffn * inv;
        r.mean.head += m.head * inv;
        r.mean.gate += m.gate * inv;
    }
    return r;
}

std::string CostReport::to_json(const CostModel& model) const {
    nlohmann::ordered_json j;
    j["mask_source"] = mask_source;
    j["images"] = images;
    j["mean_active_tokens"] = mean_active_tokens;
    j["gate_included"] = gate_included;
    j["geometry"] = {{"image_size", model.scale.image_size},
                     {"fine_scale", model.scale.fine_scale},
                     {"coarse_scale", model.scale.coarse_scale},
                     {"depth", model.backbone.depth},
                     {"width", model.backbone.width},
                     {"heads", model.backbone.heads},
                     {"num_classes", model.backbone.num_classes},
                     {"gate_hidden", model.gate_hidden}};
    j["macs"] = {{"patch_embed", mean.patch_embed},
                 {"attention_projections", mean.attention_projections},
                 {"attention_matmuls", mean.attention_matmuls},
                 {"ffn", mean.ffn},
                 {"head", mean.head},
                 {"backbone", mean.backbone()},
                 {"gate", mean.gate},
                 {"total", mean.total()}};
    j["gmacs_backbone"] = mean.backbone() * 1e-9;
    j["gmacs_gate"] = mean.gate * 1e-9;
    j["gmacs_total"] = mean.total() * 1e-9;
    return j.dump(2);
}

}  // namespace msvit
