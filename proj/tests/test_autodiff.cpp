// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "msvit/autodiff.hpp"
#include "msvit/errors.hpp"
#include "msvit/rng.hpp"
#include "support.hpp"

using namespace msvit;
using msvit::test::fd_relative_error;
using msvit::test::random_tensor;
using msvit::test::weighted_sum;

namespace {

constexpr int kInstances = 100;
constexpr double kTol = 1e-6;

// Runs `kInstances` random checks of a unary-shaped op.
void check_op(const char* name, const std::function<std::vector<Tensor>(Rng&)>& make_inputs,
              const std::function<ad::Var(const std::vector<ad::Var>&)>& op,
              std::vector<std::size_t> wrt = {}) {
    Rng rng(derive_key({0x6664ULL, std::hash<std::string>{}(name)}));
    double worst = 0.0;
    for (int t = 0; t < kInstances; ++t) {
        auto inputs = make_inputs(rng);
        const std::uint64_t wseed = rng.next_u64();
        auto f = [&](const std::vector<ad::Var>& x) {
            Rng wr(wseed);
            return weighted_sum(op(x), wr);
        };
        auto idx = wrt.empty() ? msvit::test::all_indices(inputs.size()) : wrt;
        worst = std::max(worst, fd_relative_error(f, inputs, idx));
    }
    INFO(name << " worst relative error " << worst);
    CHECK(worst < kTol);
}

std::size_t dim(Rng& r, std::size_t lo, std::size_t hi) { return lo + r.below(hi - lo + 1); }

// Values bounded away from 0 so kinks (relu, clamp) are not straddled.
Tensor away_from(Shape s, Rng& r, double kink, double margin) {
    Tensor t = random_tensor(std::move(s), r, -1.0, 1.0);
    for (auto& v : t.data()) v = kink + (v >= 0 ? margin + v : -margin + v);
    return t;
}

}  // namespace

TEST_CASE("grad of simple scalar functions") {
    auto x = ad::parameter(Tensor::scalar(3.0));
    auto g = ad::grad(ad::square(x), {x});
    CHECK(g[0].item() == doctest::Approx(6.0));

    auto z = ad::parameter(Tensor::scalar(0.0));
    CHECK(ad::grad(ad::sigmoid(z), {z})[0].item() == doctest::Approx(0.25));
}

TEST_CASE("grad rejects a non-scalar loss") {
    auto x = ad::parameter(Tensor(Shape{3}, 1.0));
    CHECK_THROWS_AS(ad::grad(x, {x}), std::invalid_argument);
}

TEST_CASE("unreachable parameters get zero gradients") {
    auto x = ad::parameter(Tensor::scalar(2.0));
    auto y = ad::parameter(Tensor(Shape{2, 2}, 1.0));
    auto g = ad::grad(ad::square(x), {x, y});
    REQUIRE(g.size() == 2);
    CHECK(g[1].shape() == Shape{2, 2});
    for (double v : g[1].data()) CHECK(v == 0.0);
}

TEST_CASE("non-finite forward values name the op") {
    auto x = ad::parameter(Tensor::from({1e308, 1.0}));
    try {
        ad::scale(x, 10.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("'scale'") != std::string::npos);
    }
    auto n = ad::constant(Tensor::from({std::nan(""), 0.0}));
    CHECK_THROWS_AS(ad::add_scalar(n, 1.0), NumericError);
}

TEST_CASE("ste_threshold forward and straight-through backward") {
    auto m = ad::parameter(Tensor::from({0.7, 0.2, 0.5}));
    auto out = ad::ste_threshold(m);
    CHECK(out->value[0] == 1.0);
    CHECK(out->value[1] == 0.0);
    CHECK(out->value[2] == 0.0);
    auto g = ad::grad(ad::sum(out), {m});
    for (double v : g[0].data()) CHECK(v == 1.0);

    auto m3 = ad::parameter(Tensor::scalar(0.3));
    auto loss = ad::square(ad::add_scalar(ad::ste_threshold(m3), -1.0));
    CHECK(loss->value.item() == 1.0);
    CHECK(ad::grad(loss, {m3})[0].item() == doctest::Approx(-2.0));
}

TEST_CASE("bilinear_resize examples") {
    Tensor c(Shape{4, 4, 1}, 5.0);
    Tensor r = ad::bilinear_resize(c, 2, 2);
    CHECK(r.shape() == Shape{2, 2, 1});
    for (double v : r.data()) CHECK(v == doctest::Approx(5.0));

    Tensor g(Shape{2, 2, 1}, std::vector<double>{0, 1, 2, 3});
    Tensor up = ad::bilinear_resize(g, 3, 3);
    CHECK(up[4] == doctest::Approx(1.5));
    CHECK(up[0] == 0.0);
    CHECK(up[2] == 1.0);
    CHECK(up[6] == 2.0);
    CHECK(up[8] == 3.0);

    Tensor ramp(Shape{14, 14, 2});
    for (std::size_t y = 0; y < 14; ++y)
        for (std::size_t x = 0; x < 14; ++x) {
            ramp[(y * 14 + x) * 2] = 0.5 * static_cast<double>(y) - 0.25 * static_cast<double>(x);
            ramp[(y * 14 + x) * 2 + 1] = 3.0 + static_cast<double>(x);
        }
    Tensor down = ad::bilinear_resize(ramp, 7, 7);
    Tensor back = ad::bilinear_resize(down, 14, 14);
    for (std::size_t i = 0; i < ramp.size(); ++i) CHECK(back[i] == doctest::Approx(ramp[i]).epsilon(1e-12));

    CHECK_THROWS_AS(ad::bilinear_resize(g, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(ad::bilinear_resize(Tensor(Shape{4, 4}), 2, 2), std::invalid_argument);

    Tensor one = ad::bilinear_resize(g, 1, 1);
    CHECK(one[0] == doctest::Approx(1.5));
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng);
    auto x = ad::parameter(a);
    auto wv = ad::parameter(w);
    auto l1 = ad::sum(ad::gelu(ad::matmul(x, wv)));
    auto l2 = ad::sum(ad::square(ad::matmul(x, wv)));
    auto g1 = ad::grad(l1, {x, wv});
    auto g2 = ad::grad(l2, {x, wv});
    auto g12 = ad::grad(ad::add(l1, l2), {x, wv});
    for (std::size_t p = 0; p < 2; ++p)
        for (std::size_t i = 0; i < g12[p].size(); ++i)
            CHECK(g12[p][i] == doctest::Approx(g1[p][i] + g2[p][i]).epsilon(1e-14));
}

TEST_CASE("random 3-layer MLP matches finite differences") {
    Rng rng(11);
    // 10 scalar parameters: w1 [2x2], b1 [2], w2 [2x1], b2 [1], w3 [1x1].
    for (int t = 0; t < kInstances; ++t) {
        std::vector<Tensor> in = {random_tensor({5, 2}, rng), random_tensor({2, 2}, rng),
                                 random_tensor({2}, rng),    random_tensor({2, 1}, rng),
                                 random_tensor({1}, rng),    random_tensor({1, 1}, rng)};
        auto f = [](const std::vector<ad::Var>& v) {
            auto h = ad::gelu(ad::linear(v[0], v[1], v[2]));
            h = ad::sigmoid(ad::linear(h, v[3], v[4]));
            return ad::sum(ad::square(ad::matmul(h, v[5])));
        };
        CHECK(fd_relative_error(f, in, {1, 2, 3, 4, 5}) < kTol);
    }
}

TEST_CASE("elementwise ops match finite differences") {
    auto two = [](Rng& r) {
        const std::size_t n = dim(r, 1, 4), m = dim(r, 1, 5);
        return std::vector<Tensor>{random_tensor({n, m}, r), random_tensor({n, m}, r)};
    };
    auto one = [](Rng& r) {
        return std::vector<Tensor>{random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r, -3, 3)};
    };
    check_op("add", two, [](auto& v) { return ad::add(v[0], v[1]); });
    check_op("sub", two, [](auto& v) { return ad::sub(v[0], v[1]); });
    check_op("mul", two, [](auto& v) { return ad::mul(v[0], v[1]); });
    check_op("scale", one, [](auto& v) { return ad::scale(v[0], -1.7); });
    check_op("add_scalar", one, [](auto& v) { return ad::add_scalar(v[0], 0.3); });
    check_op("square", one, [](auto& v) { return ad::square(v[0]); });
    check_op("sigmoid", one, [](auto& v) { return ad::sigmoid(v[0]); });
    check_op("gelu", one, [](auto& v) { return ad::gelu(v[0]); });
    check_op(
        "relu", [](Rng& r) { return std::vector<Tensor>{away_from({dim(r, 1, 4), 3}, r, 0.0, 0.01)}; },
        [](auto& v) { return ad::relu(v[0]); });
    check_op(
        "clamp", [](Rng& r) { return std::vector<Tensor>{away_from({dim(r, 1, 4), 3}, r, 0.5, 0.01)}; },
        [](auto& v) { return ad::clamp(v[0], -0.2, 0.5); });
}

TEST_CASE("reductions and shape ops match finite differences") {
    auto mat = [](Rng& r) { return std::vector<Tensor>{random_tensor({dim(r, 1, 5), dim(r, 1, 5)}, r)}; };
    check_op("sum", mat, [](auto& v) { return ad::sum(v[0]); });
    check_op("mean", mat, [](auto& v) { return ad::mean(v[0]); });
    check_op("row_mean", mat, [](auto& v) { return ad::row_mean(v[0]); });
    check_op("reshape", mat, [](auto& v) {
        return ad::reshape(v[0], {v[0]->value.size()});
    });
    check_op("gather_rows", mat, [](auto& v) {
        const std::size_t n = v[0]->value.dim(0);
        return ad::gather_rows(v[0], {n - 1, 0, n - 1, n / 2});
    });
    check_op("take", mat, [](auto& v) {
        const std::size_t n = v[0]->value.size();
        return ad::take(v[0], {0, n - 1, n / 2, 0});
    });
    check_op(
        "concat_rows",
        [](Rng& r) {
            const std::size_t m = dim(r, 1, 4);
            return std::vector<Tensor>{random_tensor({dim(r, 1, 3), m}, r),
                                       random_tensor({dim(r, 1, 3), m}, r)};
        },
        [](auto& v) { return ad::concat_rows({v[0], v[1], v[0]}); });
}

TEST_CASE("linear algebra ops match finite differences") {
    check_op(
        "matmul",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 6), k = dim(r, 1, 40), m = dim(r, 1, 40);
            return std::vector<Tensor>{random_tensor({n, k}, r), random_tensor({k, m}, r)};
        },
        [](auto& v) { return ad::matmul(v[0], v[1]); });
    check_op(
        "linear",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 6), k = dim(r, 1, 7), m = dim(r, 1, 35);
            return std::vector<Tensor>{random_tensor({n, k}, r), random_tensor({k, m}, r),
                                       random_tensor({m}, r)};
        },
        [](auto& v) { return ad::linear(v[0], v[1], v[2]); });
    check_op(
        "add_tiled",
        [](Rng& r) {
            const std::size_t g = dim(r, 1, 3), n = dim(r, 1, 4), m = dim(r, 1, 4);
            return std::vector<Tensor>{random_tensor({g * n, m}, r), random_tensor({n, m}, r)};
        },
        [](auto& v) { return ad::add_tiled(v[0], v[1]); });
    check_op(
        "row_scale",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 5), m = dim(r, 1, 4);
            return std::vector<Tensor>{random_tensor({n, m}, r), random_tensor({n}, r)};
        },
        [](auto& v) { return ad::row_scale(v[0], v[1]); });
    check_op(
        "layer_norm",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 4), m = dim(r, 2, 8);
            return std::vector<Tensor>{random_tensor({n, m}, r, -2, 2), random_tensor({m}, r),
                                       random_tensor({m}, r)};
        },
        [](auto& v) { return ad::layer_norm(v[0], v[1], v[2]); });
}

TEST_CASE("image and distribution ops match finite differences") {
    check_op(
        "bilinear_resize",
        [](Rng& r) {
            return std::vector<Tensor>{random_tensor({dim(r, 1, 6), dim(r, 1, 6), dim(r, 1, 3)}, r)};
        },
        [](auto& v) { return ad::bilinear_resize(v[0], 3, 5); });
    check_op(
        "cross_entropy",
        [](Rng& r) { return std::vector<Tensor>{random_tensor({dim(r, 1, 5), 4}, r, -3, 3)}; },
        [](auto& v) {
            std::vector<int> labels;
            for (std::size_t i = 0; i < v[0]->value.dim(0); ++i) labels.push_back(static_cast<int>(i % 4));
            return ad::cross_entropy(v[0], labels);
        });
    check_op(
        "relaxed_bernoulli_cdf",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 6);
            return std::vector<Tensor>{random_tensor({n}, r, 0.02, 0.98), random_tensor({n}, r, 0.05, 0.95)};
        },
        [](auto& v) { return ad::relaxed_bernoulli_cdf(v[0], v[1], 0.3); });
    check_op(
        "relaxed_bernoulli_cdf_scalar_pi",
        [](Rng& r) {
            return std::vector<Tensor>{random_tensor({dim(r, 1, 6)}, r, 0.02, 0.98),
                                       random_tensor({1}, r, 0.05, 0.95)};
        },
        [](auto& v) { return ad::relaxed_bernoulli_cdf(v[0], v[1], 1.3); });
    check_op(
        "gaussian_cdf",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 6);
            return std::vector<Tensor>{random_tensor({n}, r), random_tensor({n}, r)};
        },
        [](auto& v) { return ad::gaussian_cdf(v[0], v[1], 0.4); });
    CHECK_THROWS_AS(ad::gaussian_cdf(ad::constant(Tensor::from({0.1})),
                                     ad::constant(Tensor::from({0.0})), 0.0),
                    std::invalid_argument);
}

TEST_CASE("masked attention matches finite differences") {
    check_op(
        "masked_attention",
        [](Rng& r) {
            const std::size_t heads = dim(r, 1, 2), dh = dim(r, 1, 3), n = dim(r, 1, 5), b = dim(r, 1, 2);
            const std::size_t d = heads * dh;
            Tensor act(Shape{b * n});
            for (std::size_t s = 0; s < b; ++s)
                for (std::size_t j = 0; j < n; ++j) act[s * n + j] = (j == 0 || r.uniform() < 0.6) ? 1.0 : 0.0;
            // Layout (seq_len, heads) rides along as an unchecked input.
            Tensor layout = Tensor::from({static_cast<double>(n), static_cast<double>(heads)});
            return std::vector<Tensor>{random_tensor({b * n, d}, r), random_tensor({b * n, d}, r),
                                       random_tensor({b * n, d}, r), act, layout};
        },
        [](auto& v) {
            const auto n = static_cast<std::size_t>(v[4]->value[0]);
            const auto heads = static_cast<std::size_t>(v[4]->value[1]);
            return ad::masked_attention(v[0], v[1], v[2], v[3], n, heads);
        },
        {0, 1, 2});
    // Soft activities are differentiable too.
    check_op(
        "masked_attention_soft_activity",
        [](Rng& r) {
            const std::size_t n = dim(r, 1, 5), d = 4;
            return std::vector<Tensor>{random_tensor({n, d}, r), random_tensor({n, d}, r),
                                       random_tensor({n, d}, r), random_tensor({n}, r, 0.2, 1.0)};
        },
        [](auto& v) { return ad::masked_attention(v[0], v[1], v[2], v[3], v[0]->value.dim(0), 2); });
}

TEST_CASE("masked attention ignores inactive keys") {
    Rng rng(5);
    const std::size_t n = 4, d = 4;
    Tensor q = random_tensor({n, d}, rng), k = random_tensor({n, d}, rng), v = random_tensor({n, d}, rng);
    Tensor act = Tensor::from({1, 0, 1, 0});
    auto out = ad::masked_attention(ad::constant(q), ad::constant(k), ad::constant(v),
                                    ad::constant(act), n, 1)->value;
    Tensor k2 = k, v2 = v;
    for (std::size_t c = 0; c < d; ++c) {
        k2.at(1, c) += 10.0;
        v2.at(3, c) -= 7.0;
    }
    auto out2 = ad::masked_attention(ad::constant(q), ad::constant(k2), ad::constant(v2),
                                     ad::constant(act), n, 1)->value;
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(out2[i]).epsilon(1e-13));
    CHECK_THROWS_AS(ad::masked_attention(ad::constant(q), ad::constant(k), ad::constant(v),
                                         ad::constant(Tensor(Shape{n}, 0.0)), n, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(ad::masked_attention(ad::constant(q), ad::constant(k), ad::constant(v),
                                         ad::constant(act), n, 3),
                    std::invalid_argument);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const double x = a.logistic();
        CHECK(x == b.logistic());
        differs |= x != c.logistic();
    }
    CHECK(differs);
    CHECK(derive_key({1, 2, 3}) == derive_key({1, 2, 3}));
    CHECK(derive_key({1, 2, 3}) != derive_key({1, 3, 2}));
    Rng u(9);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform();
        CHECK((x >= 0.0 && x < 1.0));
        CHECK(u.below(7) < 7u);
    }
}

TEST_CASE("tensor basics") {
    Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(shape_str(t.shape()) == "[2,3]");
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK_THROWS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}));
    CHECK_THROWS(t.item());
    CHECK(Tensor::scalar(4.0).item() == 4.0);
}
