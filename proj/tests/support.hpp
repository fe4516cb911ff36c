// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: random tensors and central
// finite-difference gradient checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "msvit/autodiff.hpp"
#include "msvit/rng.hpp"
#include "msvit/tensor.hpp"

namespace msvit::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Values in [lo, hi] with pairwise gaps of at least 0.4 (hi - lo) / n, in
// random order. Keeps sort-based losses away from their kinks.
inline Tensor separated_tensor(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    const std::size_t n = t.size();
    const double step = (hi - lo) / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) t[k] = lo + step * (static_cast<double>(k) + rng.uniform(0.2, 0.8));
    for (std::size_t k = n; k > 1; --k) {
        const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(k));
        std::swap(t[k - 1], t[std::min(j, k - 1)]);
    }
    return t;
}

// Reduce any output to a scalar with fixed random weights so every output
// element contributes to the check.
inline ad::Var weighted_sum(const ad::Var& out, Rng& rng) {
    Tensor w = random_tensor(out->value.shape(), rng, 0.5, 1.5);
    return ad::sum(ad::mul(out, ad::constant(std::move(w))));
}

using ScalarFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// ||g_analytic - g_fd|| / max(||g_analytic|| + ||g_fd||, 1e-12) over all
// inputs listed in `check` (indices into inputs).
inline double fd_relative_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                const std::vector<std::size_t>& check, double h = 1e-5) {
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(ad::parameter(t));
    ad::Var loss = f(vars);
    std::vector<ad::Var> wrt;
    for (auto i : check) wrt.push_back(vars[i]);
    const std::vector<Tensor> g = ad::grad(loss, wrt);

    double diff2 = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t c = 0; c < check.size(); ++c) {
        const std::size_t idx = check[c];
        for (std::size_t e = 0; e < inputs[idx].size(); ++e) {
            auto eval = [&](double delta) {
                std::vector<ad::Var> p;
                for (std::size_t k = 0; k < inputs.size(); ++k) {
                    Tensor t = inputs[k];
                    if (k == idx) t[e] += delta;
                    p.push_back(ad::constant(std::move(t)));
                }
                return f(p)->value.item();
            };
            const double num = (eval(h) - eval(-h)) / (2.0 * h);
            const double ana = g[c][e];
            diff2 += (ana - num) * (ana - num);
            norm_a += ana * ana;
            norm_n += num * num;
        }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(norm_a) + std::sqrt(norm_n), 1e-12);
}

// Directional check: for random directions u, compare g.u against
// (f(x + h u) - f(x - h u)) / 2h. Returns the worst relative error. Suited to
// functions with many parameters where per-element differences are too slow.
inline double fd_directional_error(const std::function<double(const std::vector<Tensor>&)>& f,
                                   const std::vector<Tensor>& x, const std::vector<Tensor>& g,
                                   Rng& rng, int directions = 3, double h = 1e-5) {
    double worst = 0.0;
    for (int d = 0; d < directions; ++d) {
        // Unit-norm direction so the step length is h whatever the parameter count.
        std::vector<Tensor> u, plus = x, minus = x;
        double norm2 = 0.0;
        for (const auto& t : x) {
            u.push_back(random_tensor(t.shape(), rng));
            for (double v : u.back().data()) norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        double ana = 0.0;
        for (std::size_t p = 0; p < x.size(); ++p) {
            for (std::size_t e = 0; e < x[p].size(); ++e) {
                u[p][e] *= inv;
                ana += g[p][e] * u[p][e];
                plus[p][e] += h * u[p][e];
                minus[p][e] -= h * u[p][e];
            }
        }
        const double num = (f(plus) - f(minus)) / (2.0 * h);
        worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-12}));
    }
    return worst;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("msvit_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace msvit::test
