// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with sections scale, backbone, gate,
// loss, train, data and sweep. Every key has a default; unknown keys are
// rejected with their dotted path. docs/config.md lists all keys.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msvit/gate.hpp"
#include "msvit/shaping_losses.hpp"
#include "msvit/tokenizer.hpp"
#include "msvit/transformer.hpp"

namespace msvit {

enum class OptimizerKind { sgd, adamw };
enum class ScheduleKind { cosine, constant };

// How the gate decisions are produced.
//   learned    : the MLP gate
//   all-fine   : every cell fine
//   all-coarse : every cell coarse
//   radial:R   : fixed radial pattern of radius R cells
//   none       : no gate, plain single-scale ViT on fine patches
struct GateMode {
    enum Kind { learned, all_fine, all_coarse, radial, none } kind = learned;
    double radius = 0.0;

    static GateMode parse(const std::string& s);
    std::string str() const;
    bool fixed() const { return kind != learned; }
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr = 0.03;
    double momentum = 0.9;
    double beta2 = 0.999;  // adamw only
    double weight_decay = 0.0;
    double grad_clip = 1.0;  // per-group norm (backbone, gate + priors); 0 disables
    double warmup_epochs = 0.5;
    double gate_warmup_epochs = 6.0;
    ScheduleKind schedule = ScheduleKind::cosine;
    std::uint64_t seed = 0;
    bool trimming = true;
    GateMode gate_mode;

    void validate() const;
};

struct DataConfig {
    std::string source = "synthetic";  // synthetic | manifest
    std::size_t n_train = 2000;
    std::size_t n_eval = 500;
    std::uint64_t seed = 1;
    std::string train_manifest;
    std::string eval_manifest;
    double texture_amplitude = 0.35;
    double texture_noise = 0.3;
    double texture_freq_min = 0.2;
    double texture_freq_max = 0.45;

    void validate() const;
};

struct SweepConfig {
    std::vector<double> g_star{0.5, 0.25, 0.1};
    std::vector<double> lambda{1.0, 4.0, 20.0};
};

struct ModelConfig {
    ScaleConfig scale;
    BackboneConfig backbone{.num_classes = 8};
    GateConfig gate;
    LossConfig loss;

    void validate() const;
};

struct RunConfig {
    std::string run_name = "run";
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    SweepConfig sweep;

    void validate() const;
};

// Missing keys keep their defaults. Throws ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved config, every key present.
std::string run_config_to_json(const RunConfig& cfg, int indent = 2);
// Apply one "section.key=value" override, value parsed as JSON (bare words as
// strings). Key and type are checked here; call validate() once all are applied.
void apply_override(RunConfig& cfg, const std::string& assignment);

const char* optimizer_name(OptimizerKind k);
const char* schedule_name(ScheduleKind k);

}  // namespace msvit
