// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "msvit/errors.hpp"
#include "msvit/data.hpp"
#include "support.hpp"

using namespace msvit;
namespace fs = std::filesystem;

namespace {

const ScaleConfig kDesk{32, 4, 8, 3};

// Grey level (channel mean) at pixel (y, x).
double grey(const Tensor& img, std::size_t y, std::size_t x) {
    const std::size_t w = img.dim(1), ch = img.dim(2);
    double s = 0.0;
    for (std::size_t c = 0; c < ch; ++c) s += img[(y * w + x) * ch + c];
    return s / static_cast<double>(ch);
}

bool in_fg(const ClutterSample& s, std::size_t y, std::size_t x) {
    const std::size_t g = kDesk.coarse_grid();
    return s.foreground[(y / kDesk.coarse_scale) * g + x / kDesk.coarse_scale] > 0.5;
}

// Normalised autocorrelation of the foreground at a set of lags.
std::vector<double> texture_features(const ClutterSample& s) {
    static const std::array<std::array<int, 2>, 12> lags = {{{0, 1}, {1, 0}, {1, 1}, {1, -1}, {0, 2}, {2, 0},
                                                            {1, 2}, {2, 1}, {1, -2}, {2, -1}, {2, 2}, {2, -2}}};
    const std::size_t w = s.image.dim(0);
    double mean = 0.0, n = 0.0;
    for (std::size_t y = 0; y < w; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (in_fg(s, y, x)) mean += grey(s.image, y, x), n += 1.0;
    mean /= n;
    double var = 0.0;
    for (std::size_t y = 0; y < w; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (in_fg(s, y, x)) var += std::pow(grey(s.image, y, x) - mean, 2);
    var /= n;
    std::vector<double> f;
    for (const auto& l : lags) {
        double acc = 0.0, cnt = 0.0;
        for (std::size_t y = 0; y < w; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const long y2 = static_cast<long>(y) + l[0], x2 = static_cast<long>(x) + l[1];
                if (y2 < 0 || x2 < 0 || y2 >= static_cast<long>(w) || x2 >= static_cast<long>(w)) continue;
                const auto yy = static_cast<std::size_t>(y2), xx = static_cast<std::size_t>(x2);
                if (!in_fg(s, y, x) || !in_fg(s, yy, xx)) continue;
                acc += (grey(s.image, y, x) - mean) * (grey(s.image, yy, xx) - mean);
                cnt += 1.0;
            }
        f.push_back(acc / cnt / var);
    }
    return f;
}

// Mean squared horizontal plus vertical neighbour difference inside the
// foreground.
double high_freq_energy(const ClutterSample& s) {
    const std::size_t w = s.image.dim(0);
    double e = 0.0, n = 0.0;
    for (std::size_t y = 0; y + 1 < w; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) {
            if (!in_fg(s, y, x)) continue;
            if (in_fg(s, y, x + 1)) e += std::pow(grey(s.image, y, x + 1) - grey(s.image, y, x), 2), n += 1.0;
            if (in_fg(s, y + 1, x)) e += std::pow(grey(s.image, y + 1, x) - grey(s.image, y, x), 2), n += 1.0;
        }
    return e / n;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
    const auto a = gen_clutter_dataset(7, 12, 4, kDesk);
    const auto b = gen_clutter_dataset(7, 12, 4, kDesk);
    REQUIRE(a.size() == 12);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].label == b.samples[i].label);
        CHECK(a.samples[i].foreground == b.samples[i].foreground);
        CHECK(std::memcmp(a.samples[i].image.ptr(), b.samples[i].image.ptr(),
                          a.samples[i].image.size() * sizeof(double)) == 0);
    }
    // Sample i does not depend on the dataset size.
    const auto c = gen_clutter_dataset(7, 5, 4, kDesk);
    CHECK(c.samples[4].image == a.samples[4].image);
    const auto d = gen_clutter_dataset(8, 12, 4, kDesk);
    CHECK_FALSE(d.samples[0].image == a.samples[0].image);
}

TEST_CASE("placements on the 4x4 grid") {
    // Areas 4 or 6 (no 5-cell rectangle fits): 1x4, 4x1, 2x2, 2x3, 3x2.
    const auto p = valid_placements(4);
    CHECK(p.size() == 4 + 4 + 9 + 6 + 6);
    for (const auto& r : p) {
        const std::size_t area = r.height * r.width;
        CHECK(area >= 4);
        CHECK(area <= 6);
        CHECK(r.top + r.height <= 4);
        CHECK(r.left + r.width <= 4);
    }

    const auto ds = gen_clutter_dataset(3, 300, 4, kDesk);
    std::vector<int> seen(p.size(), 0);
    for (const auto& s : ds.samples) {
        REQUIRE(s.foreground.size() == 16);
        std::size_t top = 4, left = 4, bottom = 0, right = 0, area = 0;
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 4; ++c)
                if (s.foreground[r * 4 + c] > 0.5) {
                    ++area;
                    top = std::min(top, r), left = std::min(left, c);
                    bottom = std::max(bottom, r), right = std::max(right, c);
                }
        // Contiguous rectangle: the bounding box is full.
        CHECK(area == (bottom - top + 1) * (right - left + 1));
        CHECK(area >= 4);
        CHECK(area <= 6);
        for (std::size_t k = 0; k < p.size(); ++k)
            if (p[k].top == top && p[k].left == left && p[k].height == bottom - top + 1 &&
                p[k].width == right - left + 1)
                ++seen[k];
    }
    // 300 draws over 29 placements: every one appears.
    for (int v : seen) CHECK(v > 0);
}

TEST_CASE("pixel invariants") {
    const auto ds = gen_clutter_dataset(5, 40, 4, kDesk);
    for (const auto& s : ds.samples) {
        CHECK(s.image.shape() == Shape{32, 32, 3});
        for (double v : s.image.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        // Background: one colour per channel plus noise of std 0.02.
        for (std::size_t c = 0; c < 3; ++c) {
            double sum = 0.0, sq = 0.0, n = 0.0;
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x) {
                    if (in_fg(s, y, x)) continue;
                    const double v = s.image[(y * 32 + x) * 3 + c];
                    sum += v, sq += v * v, n += 1.0;
                }
            const double mean = sum / n;
            const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
            CHECK(sd <= 0.022);
        }
    }
}

TEST_CASE("labels cycle through the classes") {
    const auto ds = gen_clutter_dataset(1, 10, 3, kDesk);
    CHECK(ds.num_classes == 3);
    for (std::size_t i = 0; i < 10; ++i) CHECK(ds.samples[i].label == static_cast<int>(i % 3));
}

TEST_CASE("a nearest-centroid classifier on texture statistics separates the classes") {
    const std::size_t classes = 4;
    const auto train = gen_clutter_dataset(11, 400, classes, kDesk);
    const auto test = gen_clutter_dataset(12, 400, classes, kDesk);
    std::vector<std::vector<double>> centroid(classes);
    std::vector<double> count(classes, 0.0);
    for (const auto& s : train.samples) {
        const auto f = texture_features(s);
        auto& c = centroid[static_cast<std::size_t>(s.label)];
        if (c.empty()) c.assign(f.size(), 0.0);
        for (std::size_t k = 0; k < f.size(); ++k) c[k] += f[k];
        count[static_cast<std::size_t>(s.label)] += 1.0;
    }
    for (std::size_t l = 0; l < classes; ++l)
        for (double& v : centroid[l]) v /= count[l];

    std::size_t correct = 0;
    for (const auto& s : test.samples) {
        const auto f = texture_features(s);
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t l = 0; l < classes; ++l) {
            double d = 0.0;
            for (std::size_t k = 0; k < f.size(); ++k) d += std::pow(f[k] - centroid[l][k], 2);
            if (d < best_d) best_d = d, best = l;
        }
        correct += best == static_cast<std::size_t>(s.label);
    }
    CHECK(static_cast<double>(correct) / 400.0 > 0.95);
}

TEST_CASE("high-frequency energy differs between classes") {
    const std::size_t classes = 4;
    const auto ds = gen_clutter_dataset(21, 200 * classes, classes, kDesk);
    std::vector<std::vector<double>> e(classes);
    for (const auto& s : ds.samples) e[static_cast<std::size_t>(s.label)].push_back(high_freq_energy(s));
    // Welch t-test for every pair, normal approximation (200 per class).
    for (std::size_t a = 0; a < classes; ++a)
        for (std::size_t b = a + 1; b < classes; ++b) {
            auto stats = [](const std::vector<double>& v) {
                double m = 0.0;
                for (double x : v) m += x;
                m /= static_cast<double>(v.size());
                double s2 = 0.0;
                for (double x : v) s2 += (x - m) * (x - m);
                return std::pair{m, s2 / static_cast<double>(v.size() - 1)};
            };
            const auto [ma, va] = stats(e[a]);
            const auto [mb, vb] = stats(e[b]);
            REQUIRE(e[a].size() == 200);
            const double t = (ma - mb) / std::sqrt(va / 200.0 + vb / 200.0);
            const double p = std::erfc(std::abs(t) / std::sqrt(2.0));
            INFO("classes " << a << " vs " << b << " t = " << t);
            CHECK(p < 1e-3);
        }
}

TEST_CASE("generator errors") {
    CHECK_THROWS_AS(gen_clutter_dataset(1, 4, 1, kDesk), ConfigError);
    // One coarse cell: no rectangle covers 20-40% of it.
    CHECK_THROWS_AS(gen_clutter_dataset(1, 4, 2, ScaleConfig{8, 4, 8, 3}), ConfigError);
    CHECK_THROWS_AS(gen_clutter_dataset(1, 0, 2, ScaleConfig{8, 4, 8, 3}), ConfigError);
    CHECK(valid_placements(1).empty());
}

TEST_CASE("tensor file round trip") {
    const auto dir = msvit::test::scratch_dir("tensor");
    Rng rng(4);
    Tensor t = msvit::test::random_tensor({3, 5, 2}, rng, -10, 10);
    store_tensor_file(dir / "a.tensor", t, "weights");
    std::string name;
    const Tensor back = load_tensor_file(dir / "a.tensor", &name);
    CHECK(name == "weights");
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.ptr(), t.ptr(), t.size() * sizeof(double)) == 0);

    store_tensor_file(dir / "b.tensor", t, "", Dtype::f32);
    const Tensor f = load_tensor_file(dir / "b.tensor");
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(f[i] == static_cast<double>(static_cast<float>(t[i])));

    // Scalar: empty shape, one element.
    store_tensor_file(dir / "s.tensor", Tensor::scalar(2.5));
    const Tensor s = load_tensor_file(dir / "s.tensor");
    CHECK(s.rank() == 0);
    CHECK(s.size() == 1);
    CHECK(s.item() == 2.5);
    std::ifstream in(dir / "s.tensor", std::ios::binary);
    in.seekg(8);
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    CHECK(fs::file_size(dir / "s.tensor") == 16 + header_len + 8);
}

TEST_CASE("tensor file errors") {
    const auto dir = msvit::test::scratch_dir("tensor_err");
    store_tensor_file(dir / "a.tensor", Tensor(Shape{4, 4}, 1.0));
    const auto full = fs::file_size(dir / "a.tensor");
    fs::resize_file(dir / "a.tensor", full - 8);
    try {
        load_tensor_file(dir / "a.tensor");
        FAIL("expected a FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected 128") != std::string::npos);
        CHECK(msg.find("found 120") != std::string::npos);
    }

    std::ofstream(dir / "junk.tensor") << "not a tensor file";
    CHECK_THROWS_AS(load_tensor_file(dir / "junk.tensor"), FormatError);
    CHECK_THROWS_AS(load_tensor_file(dir / "missing.tensor"), IoError);
}

TEST_CASE("dataset directory round trip") {
    const auto dir = msvit::test::scratch_dir("dataset");
    const auto ds = gen_clutter_dataset(9, 6, 3, kDesk);
    save_dataset(dir / "d", ds);
    CHECK(fs::exists(dir / "d" / "manifest.json"));
    for (const auto& p : {dir / "d", dir / "d" / "manifest.json"}) {
        const auto back = load_dataset(p);
        REQUIRE(back.size() == 6);
        CHECK(back.num_classes == 3);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(back.samples[i].label == ds.samples[i].label);
            CHECK(back.samples[i].foreground == ds.samples[i].foreground);
            CHECK(back.samples[i].image == ds.samples[i].image);
        }
    }
    CHECK_THROWS_AS(load_dataset(dir / "nowhere"), IoError);
    std::ofstream(dir / "bad.json") << R"({"format": "something-else"})";
    CHECK_THROWS_AS(load_dataset(dir / "bad.json"), FormatError);
}
