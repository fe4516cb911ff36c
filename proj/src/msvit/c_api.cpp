// Copyright (c) 2026, msvit contributors
// SPDX-License-Identifier: Apache-2.0

#include "msvit/msvit.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "json.hpp"
#include "msvit/engine.hpp"
#include "msvit/errors.hpp"

struct msvit_config {
    msvit::RunConfig cfg;
};
struct msvit_model {
    msvit::Model model;
};
struct msvit_dataset {
    msvit::Dataset data;
};

namespace {

thread_local std::string g_last_error;

template <class F>
msvit_status guarded(F&& f) {
    try {
        g_last_error.clear();
        f();
        return MSVIT_OK;
    } catch (const msvit::ConfigError& e) {
        g_last_error = e.what();
        return MSVIT_ERR_CONFIG;
    } catch (const msvit::IoError& e) {
        g_last_error = e.what();
        return MSVIT_ERR_IO;
    } catch (const msvit::FormatError& e) {
        g_last_error = e.what();
        return MSVIT_ERR_FORMAT;
    } catch (const msvit::NumericError& e) {
        g_last_error = e.what();
        return MSVIT_ERR_NUMERIC;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return MSVIT_ERR_INVALID_ARGUMENT;
    } catch (const std::out_of_range& e) {
        g_last_error = e.what();
        return MSVIT_ERR_INVALID_ARGUMENT;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return MSVIT_ERR_RUNTIME;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MSVIT_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return MSVIT_ERR_RUNTIME;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

msvit::GateMode mode_or_learned(const char* s) {
    return s ? msvit::GateMode::parse(s) : msvit::GateMode{};
}

std::function<void(const std::string&)> log_adapter(msvit_log_fn log, void* user) {
    if (!log) return {};
    return [log, user](const std::string& line) { log(line.c_str(), user); };
}

}  // namespace

extern "C" {

const char* msvit_version(void) { return "1.0.0"; }

const char* msvit_status_name(msvit_status status) {
    switch (status) {
        case MSVIT_OK: return "ok";
        case MSVIT_ERR_INVALID_ARGUMENT: return "invalid argument";
        case MSVIT_ERR_CONFIG: return "config error";
        case MSVIT_ERR_IO: return "io error";
        case MSVIT_ERR_FORMAT: return "format error";
        case MSVIT_ERR_NUMERIC: return "numeric error";
        case MSVIT_ERR_RUNTIME: return "runtime error";
    }
    return "unknown status";
}

const char* msvit_last_error(void) { return g_last_error.c_str(); }

void msvit_string_free(char* s) { std::free(s); }

msvit_status msvit_config_default(msvit_config** out) {
    return guarded([&] {
        require(out, "out");
        *out = new msvit_config{};
    });
}

msvit_status msvit_config_parse(const char* json, msvit_config** out) {
    return guarded([&] {
        require(json, "json");
        require(out, "out");
        *out = new msvit_config{msvit::parse_run_config(json)};
    });
}

msvit_status msvit_config_load(const char* path, msvit_config** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new msvit_config{msvit::load_run_config(path)};
    });
}

msvit_status msvit_config_set(msvit_config* cfg, const char* assignment) {
    return guarded([&] {
        require(cfg, "cfg");
        require(assignment, "assignment");
        msvit::apply_override(cfg->cfg, assignment);
    });
}

msvit_status msvit_config_validate(const msvit_config* cfg) {
    return guarded([&] {
        require(cfg, "cfg");
        cfg->cfg.validate();
    });
}

msvit_status msvit_config_to_json(const msvit_config* cfg, char** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out, "out");
        *out = dup_string(msvit::run_config_to_json(cfg->cfg));
    });
}

void msvit_config_free(msvit_config* cfg) { delete cfg; }

msvit_status msvit_dataset_from_config(const msvit_config* cfg, msvit_dataset** train,
                                       msvit_dataset** eval) {
    return guarded([&] {
        require(cfg, "cfg");
        require(train, "train");
        require(eval, "eval");
        cfg->cfg.validate();
        auto [tr, ev] = msvit::datasets_from_config(cfg->cfg);
        auto* t = new msvit_dataset{std::move(tr)};
        try {
            *eval = new msvit_dataset{std::move(ev)};
        } catch (...) {
            delete t;
            throw;
        }
        *train = t;
    });
}

msvit_status msvit_dataset_generate(const msvit_config* cfg, uint64_t seed, size_t n,
                                    msvit_dataset** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out, "out");
        *out = new msvit_dataset{msvit::gen_clutter_dataset(
            seed, n, cfg->cfg.model.backbone.num_classes, cfg->cfg.model.scale)};
    });
}

msvit_status msvit_dataset_save(const msvit_dataset* ds, const char* dir) {
    return guarded([&] {
        require(ds, "ds");
        require(dir, "dir");
        msvit::save_dataset(dir, ds->data);
    });
}

msvit_status msvit_dataset_load(const char* path, msvit_dataset** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new msvit_dataset{msvit::load_dataset(path)};
    });
}

size_t msvit_dataset_size(const msvit_dataset* ds) { return ds ? ds->data.size() : 0; }

void msvit_dataset_free(msvit_dataset* ds) { delete ds; }

msvit_status msvit_model_create(const msvit_config* cfg, msvit_model** out) {
    return guarded([&] {
        require(cfg, "cfg");
        require(out, "out");
        cfg->cfg.validate();
        *out = new msvit_model{msvit::Model(cfg->cfg.model, cfg->cfg.train.seed)};
    });
}

msvit_status msvit_model_load(const char* path, msvit_model** out, msvit_config** cfg_out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        auto [model, run] = msvit::Model::load(path);
        auto* m = new msvit_model{std::move(model)};
        if (cfg_out) {
            try {
                *cfg_out = new msvit_config{std::move(run)};
            } catch (...) {
                delete m;
                throw;
            }
        }
        *out = m;
    });
}

msvit_status msvit_model_save(const msvit_model* model, const msvit_config* cfg, const char* path) {
    return guarded([&] {
        require(model, "model");
        require(cfg, "cfg");
        require(path, "path");
        model->model.save(path, cfg->cfg);
    });
}

size_t msvit_model_parameter_count(const msvit_model* model) {
    return model ? model->model.params().scalar_count() : 0;
}

void msvit_model_free(msvit_model* model) { delete model; }

msvit_status msvit_train(msvit_model* model, const msvit_dataset* train, const msvit_dataset* eval,
                         const msvit_config* cfg, const char* run_dir, msvit_log_fn log, void* user,
                         char** history_json) {
    return guarded([&] {
        require(model, "model");
        require(train, "train");
        require(cfg, "cfg");
        msvit::RunConfig run = cfg->cfg;
        run.model = model->model.config();
        msvit::TrainOptions opt;
        if (run_dir) opt.run_dir = run_dir;
        opt.log = log_adapter(log, user);
        if (eval && eval->data.size()) opt.eval = &eval->data;
        const msvit::TrainResult r = msvit::train(model->model, train->data, run, opt);
        if (history_json) {
            nlohmann::ordered_json h = nlohmann::ordered_json::array();
            for (const auto& e : r.history) {
                h.push_back({{"epoch", e.epoch},
                             {"task_loss", e.task_loss},
                             {"gate_loss", e.gate_loss},
                             {"mean_m", e.mean_m},
                             {"mean_active_tokens", e.mean_active_tokens},
                             {"mean_macs", e.mean_macs},
                             {"accuracy", e.accuracy}});
            }
            *history_json = dup_string(h.dump(2));
        }
    });
}

msvit_status msvit_evaluate(const msvit_model* model, const msvit_dataset* data,
                            const char* gate_mode, char** report_json) {
    return guarded([&] {
        require(model, "model");
        require(data, "data");
        require(report_json, "report_json");
        const auto r = msvit::evaluate(model->model, data->data, mode_or_learned(gate_mode));
        *report_json = dup_string(r.to_json(model->model.config().scale.coarse_grid()));
    });
}

msvit_status msvit_write_masks(const msvit_model* model, const msvit_dataset* data,
                               const char* gate_mode, const char* out_dir, char** report_json) {
    return guarded([&] {
        require(model, "model");
        require(data, "data");
        require(out_dir, "out_dir");
        const auto r = msvit::write_masks(model->model, data->data, mode_or_learned(gate_mode), out_dir);
        if (report_json) *report_json = dup_string(r.to_json(model->model.config().scale.coarse_grid()));
    });
}

msvit_status msvit_cost_report(const msvit_config* cfg, const char* mask_source,
                               const msvit_model* model, const msvit_dataset* data,
                               char** report_json) {
    return guarded([&] {
        require(cfg, "cfg");
        require(mask_source, "mask_source");
        require(report_json, "report_json");
        const msvit::ModelConfig& mc = model ? model->model.config() : cfg->cfg.model;
        mc.validate();
        const auto r = msvit::cost_for_source(mc, mask_source, model ? &model->model : nullptr,
                                              data ? &data->data : nullptr);
        *report_json = dup_string(r.to_json(msvit::cost_model_for(mc, msvit::GateMode{})));
    });
}

msvit_status msvit_sweep(const msvit_config* cfg, const char* root, msvit_log_fn log, void* user,
                         char** summary_json) {
    return guarded([&] {
        require(cfg, "cfg");
        require(root, "root");
        const auto cells = msvit::sweep(cfg->cfg, root, log_adapter(log, user));
        if (summary_json) {
            nlohmann::ordered_json s = nlohmann::ordered_json::array();
            for (const auto& c : cells) {
                s.push_back({{"run", c.run_name},
                             {"g_star", c.g_star},
                             {"lambda", c.lambda},
                             {"accuracy", c.report.accuracy},
                             {"mean_active_tokens", c.report.mean_active_tokens},
                             {"mean_macs", c.report.mean_macs},
                             {"mean_m", c.report.mean_m}});
            }
            *summary_json = dup_string(s.dump(2));
        }
    });
}

}  // extern "C"
