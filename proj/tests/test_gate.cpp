// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "msvit/gate.hpp"
#include "support.hpp"

using namespace msvit;
using msvit::test::random_tensor;

namespace {

GateWeights weights_from(const std::vector<ad::Var>& v) {
    return GateWeights{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
}

std::vector<Tensor> random_gate(Rng& r, std::size_t in, std::size_t h, std::size_t cells) {
    return {random_tensor({in, h}, r), random_tensor({h}, r),    random_tensor({cells, h}, r),
            random_tensor({h, h}, r),  random_tensor({h}, r),    random_tensor({h, h}, r),
            random_tensor({h}, r),     random_tensor({h, 1}, r), random_tensor({1}, r)};
}

}  // namespace

TEST_CASE("fresh gate selects fine everywhere") {
    const ScaleConfig scale{32, 4, 8, 3};
    ParameterStore store;
    Rng rng(4);
    GateWeights::init(store, scale, GateConfig{}, rng);
    Binding b(store);
    auto w = GateWeights::bind(b);
    for (int t = 0; t < 5; ++t) {
        Tensor rows = random_tensor({16, 192}, rng, 0, 1);
        auto m = ad::sigmoid(gate_logits(rows, w))->value;
        for (double v : m.data()) CHECK(v >= 0.99);
    }
    CHECK_THROWS_AS(gate_logits(Tensor(Shape{16, 191}), w), std::invalid_argument);
    CHECK_THROWS_AS(run_gate(Tensor(Shape{15, 192}), 1, w, GateConfig{}, nullptr), std::invalid_argument);
    CHECK_THROWS(GateConfig{0, 0.3, 6.0}.validate());
    CHECK_THROWS(GateConfig{96, 0.0, 6.0}.validate());
}

TEST_CASE("gate is local and equivariant") {
    Rng rng(8);
    const std::size_t in = 6, h = 5, cells = 4;
    auto params = random_gate(rng, in, h, cells);
    std::vector<ad::Var> v;
    for (auto& p : params) v.push_back(ad::constant(p));
    auto w = weights_from(v);
    Tensor rows = random_tensor({cells, in}, rng);
    auto base = gate_logits(rows, w)->value;

    // Zeroing one patch changes only its logit.
    Tensor z = rows;
    for (std::size_t c = 0; c < in; ++c) z.at(2, c) = 0.0;
    auto out = gate_logits(z, w)->value;
    for (std::size_t j = 0; j < cells; ++j)
        if (j != 2) CHECK(out[j] == base[j]);

    // Permute patches and position encodings together.
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    Tensor prows(rows.shape()), ppos(params[2].shape());
    for (std::size_t j = 0; j < cells; ++j)
        for (std::size_t c = 0; c < in; ++c) prows.at(j, c) = rows.at(perm[j], c);
    for (std::size_t j = 0; j < cells; ++j)
        for (std::size_t c = 0; c < h; ++c) ppos.at(j, c) = params[2].at(perm[j], c);
    auto v2 = v;
    v2[2] = ad::constant(ppos);
    auto pout = gate_logits(prows, weights_from(v2))->value;
    for (std::size_t j = 0; j < cells; ++j) CHECK(pout[j] == doctest::Approx(base[perm[j]]).epsilon(1e-14));

    // Identical patches differ only through the position table.
    Tensor same(Shape{cells, in});
    for (std::size_t j = 0; j < cells; ++j)
        for (std::size_t c = 0; c < in; ++c) same.at(j, c) = rows.at(0, c);
    auto v3 = v;
    Tensor flat_pos(params[2].shape());
    for (std::size_t j = 0; j < cells; ++j)
        for (std::size_t c = 0; c < h; ++c) flat_pos.at(j, c) = params[2].at(1, c);
    v3[2] = ad::constant(flat_pos);
    auto sout = gate_logits(same, weights_from(v3))->value;
    for (std::size_t j = 1; j < cells; ++j) CHECK(sout[j] == sout[0]);
    CHECK(gate_logits(same, w)->value[0] != gate_logits(same, w)->value[1]);
}

TEST_CASE("gate MLP matches finite differences") {
    Rng rng(31);
    const std::size_t in = 5, h = 4, cells = 3;
    for (int t = 0; t < 100; ++t) {
        auto params = random_gate(rng, in, h, cells);
        Tensor rows = random_tensor({2 * cells, in}, rng);
        Tensor weights = random_tensor({2 * cells}, rng, 0.5, 1.5);
        auto f = [&](const std::vector<ad::Var>& v) {
            auto m = ad::sigmoid(gate_logits(rows, weights_from(v)));
            return ad::sum(ad::mul(m, ad::constant(weights)));
        };
        CHECK(msvit::test::fd_relative_error(f, params, msvit::test::all_indices(9)) < 1e-6);
    }
}

TEST_CASE("gumbel sigmoid sampling statistics") {
    Rng rng(77);
    std::vector<double> ms;
    for (int i = 0; i < 20001; ++i) ms.push_back(gumbel_sigmoid(0.0, 1.7, rng));
    std::nth_element(ms.begin(), ms.begin() + 10000, ms.end());
    CHECK(ms[10000] == doctest::Approx(0.5).epsilon(0.02));

    std::size_t ones = 0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) ones += gumbel_sigmoid(0.0, 0.3, rng) > 0.5;
    CHECK(std::abs(static_cast<double>(ones) / n - 0.5) < 0.002);

    // Large tau: m near 0.5. Small tau: m near {0, 1} with P(1) = sigma(2).
    double max_dev = 0.0;
    for (int i = 0; i < 10000; ++i) max_dev = std::max(max_dev, std::abs(gumbel_sigmoid(2.0, 1e4, rng) - 0.5));
    CHECK(max_dev < 0.01);
    std::size_t hi = 0, extreme = 0;
    for (int i = 0; i < 100000; ++i) {
        const double m = gumbel_sigmoid(2.0, 0.01, rng);
        hi += m > 0.5;
        extreme += (m < 0.01 || m > 0.99);
    }
    CHECK(static_cast<double>(hi) / 1e5 == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(0.01));
    CHECK(extreme > 99000);
    CHECK_THROWS_AS(gumbel_sigmoid(0.0, 0.0, rng), std::invalid_argument);
}

TEST_CASE("empirical P(fine) converges to sigma(logit)") {
    Rng rng(5);
    for (double logit : {-2.0, -0.5, 0.3, 1.5}) {
        const int n = 200000;
        int ones = 0;
        for (int i = 0; i < n; ++i) ones += gumbel_sigmoid(logit, 0.3, rng) > 0.5;
        const double p = 1.0 / (1.0 + std::exp(-logit));
        const double se = std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(ones / static_cast<double>(n) - p) < 4.0 * se);
    }
}

TEST_CASE("gate noise is keyed per element") {
    Tensor a = gate_noise(1, 2, 3, 4, 16);
    Tensor b = gate_noise(1, 2, 3, 4, 16);
    CHECK(a == b);
    Tensor c = gate_noise(1, 2, 3, 6, 16);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(c[i] == a[i]);  // prefix is stable
    CHECK(gate_noise(1, 2, 4, 4, 16) != a);
    CHECK(gate_noise(1, 3, 3, 4, 16) != a);
    CHECK(gate_noise(2, 2, 3, 4, 16) != a);
}

TEST_CASE("eval and train modes of run_gate") {
    const ScaleConfig scale{16, 4, 8, 3};
    ParameterStore store;
    Rng rng(6);
    GateConfig cfg;
    GateWeights::init(store, scale, cfg, rng);
    store.get("gate.fc4.bias").value[0] = 0.0;
    Binding b(store);
    auto w = GateWeights::bind(b);
    Tensor rows = random_tensor({8, 192}, rng, 0, 1);
    auto ev = run_gate(rows, 2, w, cfg, nullptr);
    CHECK(ev.soft->value.shape() == Shape{2, 4});
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(ev.soft->value[i] == doctest::Approx(1.0 / (1.0 + std::exp(-ev.logits->value[i]))));
        CHECK(ev.decisions->value[i] == (ev.soft->value[i] > 0.5 ? 1.0 : 0.0));
    }
    CHECK(run_gate(rows, 2, w, cfg, nullptr).soft->value == ev.soft->value);
    Tensor noise = gate_noise(0, 0, 0, 2, 4);
    auto tr = run_gate(rows, 2, w, cfg, &noise);
    for (std::size_t i = 0; i < 8; ++i) {
        const double z = (ev.logits->value[i] + noise[i]) / cfg.temperature;
        CHECK(tr.soft->value[i] == doctest::Approx(1.0 / (1.0 + std::exp(-z))));
    }
}

TEST_CASE("radial mask") {
    auto count = [](const std::vector<double>& v) { return std::count(v.begin(), v.end(), 1.0); };
    auto r0 = radial_mask(7, 0.0);
    CHECK(count(r0) == 1);
    CHECK(r0[24] == 1.0);
    CHECK(count(radial_mask(7, 3.0 * std::sqrt(2.0))) == 49);
    CHECK(count(radial_mask(7, 2.0)) == 13);
    CHECK(count(radial_mask(4, 0.0)) == 0);
    CHECK(count(radial_mask(4, std::sqrt(0.5))) == 4);
    CHECK_THROWS_AS(radial_mask(7, -1.0), std::invalid_argument);
}

TEST_CASE("gate MAC count per patch") {
    CHECK(gate_macs_per_patch(3072, 96) == 3072 * 96 + 2 * 96 * 96 + 96);
}
