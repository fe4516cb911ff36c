// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/trimming.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace msvit {

std::vector<double> trim_scores(const TokenStream& stream, const Tensor& soft) {
    const std::size_t n = stream.seq_len, b = stream.batch;
    if (soft.rank() != 2 || soft.dim(0) != b) {
        throw std::invalid_argument("trim_scores: soft gate outputs must be [B x N_c]");
    }
    const std::size_t nc = soft.dim(1);
    std::vector<double> scores(b * n, 0.0);
    for (std::size_t img = 0; img < b; ++img) {
        for (std::size_t t = 1; t < n; ++t) {
            double key = 0.0;
            switch (stream.scale_tag.at(t)) {
                case ScaleTag::coarse: key = 1.0 - soft.at(img, t - 1); break;
                case ScaleTag::fine: key = soft.at(img, stream.fine_to_coarse.at(t - 1 - nc)); break;
                case ScaleTag::cls: break;
            }
            const bool active = stream.activity->value[img * n + t] > 0.5;
            scores[img * n + t] = key + (active ? 1.0 : 0.0);
        }
    }
    return scores;
}

TrimmedBatch adaptive_trim(const TokenStream& stream, std::span<const double> scores) {
    const std::size_t n = stream.seq_len, b = stream.batch;
    if (scores.size() != b * n) throw std::invalid_argument("adaptive_trim: score count mismatch");

    TrimmedBatch out;
    out.batch = b;
    for (std::size_t img = 0; img < b; ++img) {
        std::size_t active = 0;
        for (std::size_t t = 1; t < n; ++t) active += stream.activity->value[img * n + t] > 0.5;
        out.active_counts.push_back(active);
    }
    out.k = *std::max_element(out.active_counts.begin(), out.active_counts.end());

    std::vector<std::size_t> rows;
    rows.reserve(b * (1 + out.k));
    for (std::size_t img = 0; img < b; ++img) {
        std::vector<std::size_t> order(n - 1);
        std::iota(order.begin(), order.end(), std::size_t{1});
        const double* s = scores.data() + img * n;
        std::stable_sort(order.begin(), order.end(),
                         [s](std::size_t x, std::size_t y) { return s[x] > s[y]; });
        std::vector<std::size_t> perm{0};
        perm.insert(perm.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(out.k));
        std::size_t kept = 0;
        for (std::size_t slot = 1; slot < perm.size(); ++slot)
            kept += stream.activity->value[img * n + perm[slot]] > 0.5;
        if (kept != out.active_counts[img]) {
            throw std::logic_error("adaptive_trim: an active token was trimmed; scores must rank "
                                   "active tokens first");
        }
        for (std::size_t t : perm) rows.push_back(img * n + t);
        out.permutation.push_back(std::move(perm));
    }
    out.embeddings = ad::gather_rows(stream.embeddings, rows);
    out.activity = ad::gather_rows(stream.activity, std::move(rows));
    return out;
}

}  // namespace msvit
