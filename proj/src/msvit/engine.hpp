// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Joint training of gate and backbone, evaluation, sweeps and mask dumps.
//
// total loss = cross-entropy + lambda * gate loss. Learning rates follow a
// cosine decay over all steps times a linear warmup: warmup_epochs for the
// backbone, gate_warmup_epochs for the gate and the priors.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msvit/config.hpp"
#include "msvit/costs.hpp"
#include "msvit/data.hpp"
#include "msvit/model.hpp"

namespace msvit {

struct EvalReport {
    std::size_t images = 0;
    double accuracy = 0;
    double mean_m = 0;  // soft gate output (the decisions for fixed modes)
    double mean_active_tokens = 0;
    double mean_macs = 0;
    // Mean m over cells inside / outside the ground-truth foreground.
    bool has_foreground = false;
    double foreground_m = 0;
    double background_m = 0;
    std::vector<double> frequency;  // [N_c] fraction of images selecting fine per cell
    std::vector<std::vector<double>> decisions;  // per image [N_c]
    std::vector<std::size_t> active_tokens;      // per image, class token included

    std::string to_json(std::size_t grid_side) const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double task_loss = 0;  // mean over training batches
    double gate_loss = 0;  // unweighted, mean over training batches
    double mean_m = 0;     // eval-set figures from here on
    double mean_active_tokens = 0;
    double mean_macs = 0;
    double accuracy = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    EvalReport final_eval;
};

struct TrainOptions {
    // When set: config.json, metrics.csv and checkpoint.bin are written here.
    std::optional<std::filesystem::path> run_dir;
    // Progress lines (one per epoch); may be empty.
    std::function<void(const std::string&)> log;
    // Evaluate on this set after every epoch; defaults to the training set.
    const Dataset* eval = nullptr;
};

double total_loss_value(double task, double gate, double lambda);
ad::Var total_loss(const ad::Var& task, const ad::Var& gate, double lambda);

// Learning-rate multipliers at a given step.
double cosine_factor(std::size_t step, std::size_t total_steps);
double warmup_factor(std::size_t step, double warmup_steps);

CostModel cost_model_for(const ModelConfig& cfg, const GateMode& mode);

EvalReport evaluate(const Model& model, const Dataset& data, const GateMode& mode,
                    std::size_t batch_size = 64);

// Throws NumericError with epoch/batch context if a loss turns non-finite.
TrainResult train(Model& model, const Dataset& data, const RunConfig& cfg,
                  const TrainOptions& opt = {});

// Training and evaluation sets per the data section. A missing manifest is a
// ConfigError naming the path.
std::pair<Dataset, Dataset> datasets_from_config(const RunConfig& cfg);

std::string metrics_csv(const RunConfig& cfg, const std::vector<EpochMetrics>& rows);

struct SweepCell {
    std::string run_name;
    double g_star = 0;
    double lambda = 0;
    EvalReport report;
};

// One run directory per (g*, lambda) under root plus root/summary.csv,
// rows sorted by mean MACs.
std::vector<SweepCell> sweep(const RunConfig& cfg, const std::filesystem::path& root,
                             const std::function<void(const std::string&)>& log = {});

// mask_NNNNNN.pgm per image (P5, coarse grid, 255 = fine) and frequency.csv.
EvalReport write_masks(const Model& model, const Dataset& data, const GateMode& mode,
                       const std::filesystem::path& out_dir);

// Cost report for a mask source: all-fine, all-coarse, radial:R, plain or
// learned. All-fine, all-coarse and learned count the gate; radial and plain
// are gate-free baselines. learned evaluates model on data.
CostReport cost_for_source(const ModelConfig& cfg, const std::string& source, const Model* model,
                           const Dataset* data);

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<unsigned char>& pixels);

}  // namespace msvit
