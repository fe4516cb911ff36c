// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "msvit/errors.hpp"
#include "msvit/rng.hpp"

namespace msvit {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor files are read and written in native little-endian order");

namespace {

constexpr std::array<char, 8> kTensorMagic{'M', 'S', 'V', 'T', 'N', 'S', 'R', '1'};
constexpr std::uint64_t kMaxHeader = 1u << 20;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

TextureSpec class_texture(int label, std::size_t n_classes, double freq_min, double freq_max) {
    const double c = static_cast<double>(label);
    const double n = static_cast<double>(n_classes);
    return TextureSpec{freq_min + (freq_max - freq_min) * c / (n - 1.0), std::numbers::pi * c / n};
}

std::vector<CellRect> valid_placements(std::size_t grid_side) {
    const std::size_t cells = grid_side * grid_side;
    std::vector<CellRect> out;
    for (std::size_t h = 1; h <= grid_side; ++h) {
        for (std::size_t w = 1; w <= grid_side; ++w) {
            // 0.2 <= area / cells <= 0.4 in integer form
            const std::size_t area = h * w;
            if (5 * area < cells || 5 * area > 2 * cells) continue;
            for (std::size_t top = 0; top + h <= grid_side; ++top)
                for (std::size_t left = 0; left + w <= grid_side; ++left)
                    out.push_back(CellRect{top, left, h, w});
        }
    }
    return out;
}

ClutterSample gen_clutter_sample(std::uint64_t seed, std::size_t index, std::size_t n_classes,
                                 const ScaleConfig& cfg, const ClutterOptions& opt) {
    cfg.validate();
    if (n_classes < 2) throw ConfigError("clutter dataset needs at least 2 classes");
    const std::size_t g = cfg.coarse_grid();
    const auto placements = valid_placements(g);
    if (placements.empty()) {
        throw ConfigError("coarse grid " + std::to_string(g) + "x" + std::to_string(g) +
                          " admits no foreground rectangle covering 20-40% of the cells");
    }
    Rng rng(derive_key({seed, 0x636c7574ULL, index}));

    ClutterSample s;
    s.label = static_cast<int>(index % n_classes);
    const CellRect rect = placements[rng.below(placements.size())];
    s.foreground.assign(g * g, 0.0);
    for (std::size_t r = rect.top; r < rect.top + rect.height; ++r)
        for (std::size_t c = rect.left; c < rect.left + rect.width; ++c) s.foreground[r * g + c] = 1.0;

    const std::size_t w = cfg.image_size, ch = cfg.channels, sc = cfg.coarse_scale;
    std::vector<double> colour(ch);
    for (auto& v : colour) v = rng.uniform(0.2, 0.8);
    const TextureSpec tex = class_texture(s.label, n_classes, opt.freq_min, opt.freq_max);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double kx = 2.0 * std::numbers::pi * tex.frequency * std::cos(tex.orientation);
    const double ky = 2.0 * std::numbers::pi * tex.frequency * std::sin(tex.orientation);

    s.image = Tensor(Shape{w, w, ch});
    for (std::size_t y = 0; y < w; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const bool fg = s.foreground[(y / sc) * g + x / sc] > 0.5;
            const double t = 0.5 + opt.amplitude * std::sin(kx * static_cast<double>(x) +
                                                    ky * static_cast<double>(y) + phase);
            for (std::size_t c = 0; c < ch; ++c) {
                const double v = fg ? t + opt.texture_noise * rng.normal() : colour[c] + 0.02 * rng.normal();
                s.image[(y * w + x) * ch + c] = clamp01(v);
            }
        }
    }
    return s;
}

Dataset gen_clutter_dataset(std::uint64_t seed, std::size_t n_samples, std::size_t n_classes,
                            const ScaleConfig& cfg, const ClutterOptions& opt) {
    Dataset ds;
    ds.num_classes = n_classes;
    ds.samples.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i)
        ds.samples.push_back(gen_clutter_sample(seed, i, n_classes, cfg, opt));
    if (n_samples == 0) gen_clutter_sample(seed, 0, n_classes, cfg, opt);  // still validate
    return ds;
}

void store_tensor_file(const fs::path& path, const Tensor& t, const std::string& name,
                       Dtype dtype) {
    json h;
    h["name"] = name;
    h["dtype"] = dtype == Dtype::f64 ? "f64" : "f32";
    h["shape"] = t.shape();
    h["byte_order"] = "little";
    const std::string header = h.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kTensorMagic.data(), kTensorMagic.size());
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (dtype == Dtype::f64) {
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    } else {
        std::vector<float> buf(t.data().begin(), t.data().end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_tensor_file(const fs::path& path, std::string* name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file " + path.string());
    const std::string where = path.string() + ": ";

    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 8 || magic != kTensorMagic) throw FormatError(where + "bad magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (in.gcount() != sizeof len || len > kMaxHeader) throw FormatError(where + "bad header length");
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw FormatError(where + "truncated header");

    json h;
    Shape shape;
    std::string dtype;
    try {
        h = json::parse(header);
        dtype = h.at("dtype").get<std::string>();
        shape = h.at("shape").get<Shape>();
        if (h.value("byte_order", std::string("little")) != "little")
            throw FormatError(where + "unsupported byte order");
        if (name) *name = h.value("name", std::string());
    } catch (const json::exception& e) {
        throw FormatError(where + "malformed header: " + e.what());
    }
    std::size_t elem = 0;
    if (dtype == "f64") elem = 8;
    else if (dtype == "f32") elem = 4;
    else throw FormatError(where + "unsupported dtype '" + dtype + "'");

    const std::size_t count = shape_numel(shape);
    const std::uint64_t expected = static_cast<std::uint64_t>(count) * elem;
    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const std::uint64_t actual = static_cast<std::uint64_t>(in.tellg() - start);
    in.seekg(start);
    if (actual != expected) {
        throw FormatError(where + "payload size mismatch: expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(actual));
    }
    Tensor t(shape);
    if (elem == 8) {
        in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(expected));
    } else {
        std::vector<float> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
        std::copy(buf.begin(), buf.end(), t.ptr());
    }
    if (!in) throw IoError(where + "read failed");
    return t;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    json samples = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        char file[32];
        std::snprintf(file, sizeof file, "image_%06zu.tensor", i);
        store_tensor_file(dir / file, s.image, file);
        samples.push_back({{"image", file}, {"label", s.label}, {"foreground", s.foreground}});
    }
    json m{{"format", "msvit-dataset"}, {"version", 1}, {"num_classes", ds.num_classes},
           {"samples", std::move(samples)}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << m.dump(1) << '\n';
}

Dataset load_dataset(const fs::path& dir_or_manifest) {
    fs::path manifest = dir_or_manifest;
    if (fs::is_directory(manifest)) manifest /= "manifest.json";
    std::ifstream in(manifest);
    if (!in) throw IoError("dataset manifest not found: " + manifest.string());
    const fs::path base = manifest.parent_path();
    Dataset ds;
    try {
        const json m = json::parse(in);
        if (m.value("format", std::string()) != "msvit-dataset")
            throw FormatError(manifest.string() + ": not a dataset manifest");
        ds.num_classes = m.at("num_classes").get<std::size_t>();
        for (const auto& e : m.at("samples")) {
            ClutterSample s;
            s.image = load_tensor_file(base / e.at("image").get<std::string>());
            s.label = e.at("label").get<int>();
            s.foreground = e.value("foreground", std::vector<double>{});
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= ds.num_classes)
                throw FormatError(manifest.string() + ": label out of range");
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest.string() + ": " + e.what());
    }
    return ds;
}

}  // namespace msvit
