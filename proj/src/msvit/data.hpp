// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic clutter images and on-disk tensors.
//
// A clutter image is a flat, lightly noisy background with one rectangle of
// coarse cells (20-40% of the grid) filled by a class-specific sinusoidal
// texture. The rectangle's cells are recorded as the foreground mask.
//
// Tensor file layout:
//   bytes 0-7   magic "MSVTNSR1"
//   bytes 8-15  header length H, little-endian u64
//   H bytes     JSON {"name", "dtype": "f64"|"f32", "shape", "byte_order": "little"}
//   payload     product(shape) values, little-endian

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msvit/tensor.hpp"
#include "msvit/tokenizer.hpp"

namespace msvit {

struct ClutterSample {
    Tensor image;                   // [W x W x C], values in [0, 1]
    int label = 0;
    std::vector<double> foreground;  // [N_c], 1 inside the rectangle
};

struct Dataset {
    std::vector<ClutterSample> samples;
    std::size_t num_classes = 0;

    std::size_t size() const { return samples.size(); }
};

struct TextureSpec {
    double frequency;    // cycles per pixel
    double orientation;  // radians
};

// Frequencies spread evenly over [freq_min, freq_max] by label.
TextureSpec class_texture(int label, std::size_t n_classes, double freq_min = 0.2, double freq_max = 0.4);

// Every (height, width, top, left) rectangle whose area is 20-40% of the grid.
struct CellRect {
    std::size_t top, left, height, width;
};
std::vector<CellRect> valid_placements(std::size_t grid_side);

struct ClutterOptions {
    double amplitude = 0.35;      // texture sinusoid amplitude around 0.5
    double texture_noise = 0.03;  // per-pixel Gaussian noise inside the foreground
    double freq_min = 0.2;        // class texture frequencies, cycles per pixel
    double freq_max = 0.4;
};

// Sample index i uses label i mod n_classes and its own RNG stream, so a
// sample does not depend on how many others are generated.
// Throws ConfigError for n_classes < 2 or a grid too small for 20% coverage.
Dataset gen_clutter_dataset(std::uint64_t seed, std::size_t n_samples, std::size_t n_classes,
                            const ScaleConfig& cfg, const ClutterOptions& opt = {});
ClutterSample gen_clutter_sample(std::uint64_t seed, std::size_t index, std::size_t n_classes,
                                 const ScaleConfig& cfg, const ClutterOptions& opt = {});

enum class Dtype { f64, f32 };

void store_tensor_file(const std::filesystem::path& path, const Tensor& t,
                       const std::string& name = "", Dtype dtype = Dtype::f64);
Tensor load_tensor_file(const std::filesystem::path& path, std::string* name = nullptr);

// Directory with manifest.json plus one tensor file per image.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir_or_manifest);

}  // namespace msvit
