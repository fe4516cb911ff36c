// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0
//
// msvit command-line front end. Uses the C interface only.
//
// Exit codes: 0 success, 1 runtime error, 2 configuration or usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msvit/msvit.h"

namespace fs = std::filesystem;

namespace {

struct Failure {
    int code;
};

int exit_code(msvit_status s) {
    switch (s) {
        case MSVIT_OK: return 0;
        case MSVIT_ERR_CONFIG:
        case MSVIT_ERR_INVALID_ARGUMENT: return 2;
        default: return 1;
    }
}

void check(msvit_status s, const char* what) {
    if (s == MSVIT_OK) return;
    std::cerr << "msvit: " << what << ": " << msvit_last_error() << " [" << msvit_status_name(s)
              << "]\n";
    throw Failure{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& msg) {
    std::cerr << "msvit: " << msg << '\n';
    throw Failure{2};
}

// Owning wrappers around the C handles.
template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
    T** out() { return &p; }
    T* get() const { return p; }
};
using Config = Handle<msvit_config, msvit_config_free>;
using ModelH = Handle<msvit_model, msvit_model_free>;
using DataH = Handle<msvit_dataset, msvit_dataset_free>;

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { msvit_string_free(s); }
    char** out() { return &s; }
    std::string str() const { return s ? s : ""; }
};

void log_line(const char* line, void*) { std::cerr << line << '\n'; }

fs::path run_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MSVIT_RUN_ROOT"); env && *env) return env;
    return "runs";
}

void load_config(Config& cfg, const std::string& path, const std::vector<std::string>& sets) {
    if (path.empty()) check(msvit_config_default(cfg.out()), "config");
    else check(msvit_config_load(path.c_str(), cfg.out()), "config");
    for (const auto& s : sets) check(msvit_config_set(cfg.get(), s.c_str()), "--set");
    check(msvit_config_validate(cfg.get()), "config");
}

std::string config_value(const Config& cfg, const std::string& key) {
    OwnedString js;
    check(msvit_config_to_json(cfg.get(), js.out()), "config");
    const std::string text = js.str();
    const std::string needle = "\"" + key + "\": \"";
    const auto at = text.find(needle);
    if (at == std::string::npos) return "";
    const auto start = at + needle.size();
    return text.substr(start, text.find('"', start) - start);
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) {
        std::cerr << "msvit: cannot write " << p << '\n';
        throw Failure{1};
    }
    out << text << '\n';
}

// Evaluation data: an explicit dataset path, else the eval split (falling
// back to the training split) described by the config.
void resolve_data(DataH& data, const Config& cfg, const std::string& path) {
    if (!path.empty()) {
        if (!fs::exists(path)) usage_error("data path not found: " + path);
        check(msvit_dataset_load(path.c_str(), data.out()), "data");
        return;
    }
    DataH train, eval;
    check(msvit_dataset_from_config(cfg.get(), train.out(), eval.out()), "data");
    if (msvit_dataset_size(eval.get()) > 0) std::swap(data.p, eval.p);
    else std::swap(data.p, train.p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed-scale vision transformer: train, evaluate, sweep, dump masks, report costs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", msvit_version());

    std::string config_path, out_dir, checkpoint, data_path, gate_mode, masks_source, output;
    std::string split = "train";
    std::vector<std::string> sets;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    bool have_seed = false;

    auto* train = app.add_subcommand("train", "Train a model; writes metrics.csv and checkpoint.bin");
    train->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    train->add_option("--set", sets, "Override, e.g. --set loss.lambda=4");
    train->add_option("-o,--out", out_dir, "Run root (default $MSVIT_RUN_ROOT or ./runs)");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints a JSON report");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", data_path, "Dataset directory or manifest (default: from config)");
    eval->add_option("--gate-mode", gate_mode, "learned, all-fine, all-coarse, radial:R or none");
    eval->add_option("--output", output, "Also write the report here");

    auto* sweep = app.add_subcommand("sweep", "Train every (g*, lambda) cell of the sweep grid");
    sweep->add_option("-c,--config", config_path, "Run config (JSON)")->required();
    sweep->add_option("--set", sets, "Override, e.g. --set train.epochs=5");
    sweep->add_option("-o,--out", out_dir, "Sweep root (default $MSVIT_RUN_ROOT/<run_name>)");

    auto* masks = app.add_subcommand("masks", "Write per-image PGM masks and the frequency grid");
    masks->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    masks->add_option("--data", data_path, "Dataset directory or manifest (default: from config)");
    masks->add_option("--gate-mode", gate_mode, "learned, all-fine, all-coarse or radial:R");
    masks->add_option("-o,--out", out_dir, "Output directory")->required();

    auto* cost = app.add_subcommand("cost", "Analytic MAC report as JSON");
    cost->add_option("-c,--config", config_path, "Run config (JSON); defaults if omitted");
    cost->add_option("--set", sets, "Override, e.g. --set backbone.width=384");
    cost->add_option("--masks", masks_source, "all-fine, all-coarse, radial:R, plain or learned")
        ->required();
    cost->add_option("--checkpoint", checkpoint, "Checkpoint (for --masks learned)");
    cost->add_option("--data", data_path, "Dataset (for --masks learned)");
    cost->add_option("--output", output, "Also write the report here");

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic clutter dataset to disk");
    gen->add_option("-c,--config", config_path, "Run config (JSON); defaults if omitted");
    gen->add_option("--set", sets, "Override");
    gen->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
    gen->add_option("-n,--samples", n_samples, "Sample count (default: data.n_train / n_eval)");
    gen->add_option("--seed", seed, "Generator seed (default: from config)")->each([&](const std::string&) {
        have_seed = true;
    });
    gen->add_option("-o,--out", out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train) {
            Config cfg;
            load_config(cfg, config_path, sets);
            DataH tr, ev;
            check(msvit_dataset_from_config(cfg.get(), tr.out(), ev.out()), "data");
            ModelH model;
            check(msvit_model_create(cfg.get(), model.out()), "model");
            const fs::path dir = run_root(out_dir) / config_value(cfg, "run_name");
            check(msvit_train(model.get(), tr.get(), ev.get(), cfg.get(), dir.string().c_str(),
                              log_line, nullptr, nullptr),
                  "train");
            OwnedString report;
            check(msvit_evaluate(model.get(), msvit_dataset_size(ev.get()) ? ev.get() : tr.get(),
                                 config_value(cfg, "gate_mode").c_str(), report.out()),
                  "eval");
            write_file(dir / "eval.json", report.str());
            std::cout << dir.string() << '\n';
        } else if (*eval) {
            ModelH model;
            Config cfg;
            check(msvit_model_load(checkpoint.c_str(), model.out(), cfg.out()), "checkpoint");
            DataH data;
            resolve_data(data, cfg, data_path);
            const std::string mode = gate_mode.empty() ? config_value(cfg, "gate_mode") : gate_mode;
            OwnedString report;
            check(msvit_evaluate(model.get(), data.get(), mode.c_str(), report.out()), "eval");
            if (!output.empty()) write_file(output, report.str());
            std::cout << report.str() << '\n';
        } else if (*sweep) {
            Config cfg;
            load_config(cfg, config_path, sets);
            const fs::path root =
                out_dir.empty() ? run_root("") / config_value(cfg, "run_name") : fs::path(out_dir);
            OwnedString summary;
            check(msvit_sweep(cfg.get(), root.string().c_str(), log_line, nullptr, summary.out()),
                  "sweep");
            std::cout << (root / "summary.csv").string() << '\n';
        } else if (*masks) {
            ModelH model;
            Config cfg;
            check(msvit_model_load(checkpoint.c_str(), model.out(), cfg.out()), "checkpoint");
            DataH data;
            resolve_data(data, cfg, data_path);
            const std::string mode = gate_mode.empty() ? config_value(cfg, "gate_mode") : gate_mode;
            if (mode == "none") usage_error("masks: gate mode 'none' has no masks");
            OwnedString report;
            check(msvit_write_masks(model.get(), data.get(), mode.c_str(), out_dir.c_str(),
                                    report.out()),
                  "masks");
            std::cout << out_dir << '\n';
        } else if (*cost) {
            Config cfg;
            ModelH model;
            DataH data;
            if (!checkpoint.empty()) {
                check(msvit_model_load(checkpoint.c_str(), model.out(), cfg.out()), "checkpoint");
            } else {
                load_config(cfg, config_path, sets);
            }
            if (masks_source == "learned") {
                if (!model.get()) usage_error("cost: --masks learned needs --checkpoint");
                resolve_data(data, cfg, data_path);
            }
            OwnedString report;
            check(msvit_cost_report(cfg.get(), masks_source.c_str(), model.get(), data.get(),
                                    report.out()),
                  "cost");
            if (!output.empty()) write_file(output, report.str());
            std::cout << report.str() << '\n';
        } else if (*gen) {
            Config cfg;
            load_config(cfg, config_path, sets);
            DataH tr, ev;
            if (n_samples == 0 && !have_seed) {
                check(msvit_dataset_from_config(cfg.get(), tr.out(), ev.out()), "data");
                check(msvit_dataset_save(split == "train" ? tr.get() : ev.get(), out_dir.c_str()),
                      "save");
            } else {
                if (n_samples == 0) usage_error("gen-data: --samples is required with --seed");
                check(msvit_dataset_generate(cfg.get(), seed, n_samples, tr.out()), "data");
                check(msvit_dataset_save(tr.get(), out_dir.c_str()), "save");
            }
            std::cout << out_dir << '\n';
        }
    } catch (const Failure& f) {
        return f.code;
    }
    return 0;
}
