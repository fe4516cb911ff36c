/* Copyright (c) 2026, msvit contributors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the mixed-scale ViT library.
 *
 * All objects are opaque handles released with their *_free function.
 * Functions return MSVIT_OK or an error code; the message for the most
 * recent failure on the calling thread is available from msvit_last_error().
 * Strings returned through char** are owned by the caller and released with
 * msvit_string_free().
 */
#ifndef MSVIT_MSVIT_H
#define MSVIT_MSVIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MSVIT_API __declspec(dllexport)
#else
#define MSVIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum msvit_status {
    MSVIT_OK = 0,
    MSVIT_ERR_INVALID_ARGUMENT = 1,
    MSVIT_ERR_CONFIG = 2,
    MSVIT_ERR_IO = 3,
    MSVIT_ERR_FORMAT = 4,
    MSVIT_ERR_NUMERIC = 5,
    MSVIT_ERR_RUNTIME = 6
} msvit_status;

typedef struct msvit_config msvit_config;
typedef struct msvit_model msvit_model;
typedef struct msvit_dataset msvit_dataset;

/* Receives one progress line per call. */
typedef void (*msvit_log_fn)(const char* line, void* user);

MSVIT_API const char* msvit_version(void);
MSVIT_API const char* msvit_status_name(msvit_status status);
/* Empty string when the last call on this thread succeeded. */
MSVIT_API const char* msvit_last_error(void);
MSVIT_API void msvit_string_free(char* s);

/* ---- configuration ---- */
MSVIT_API msvit_status msvit_config_default(msvit_config** out);
MSVIT_API msvit_status msvit_config_parse(const char* json, msvit_config** out);
MSVIT_API msvit_status msvit_config_load(const char* path, msvit_config** out);
/* "section.key=value"; call msvit_config_validate after a series of sets. */
MSVIT_API msvit_status msvit_config_set(msvit_config* cfg, const char* assignment);
MSVIT_API msvit_status msvit_config_validate(const msvit_config* cfg);
MSVIT_API msvit_status msvit_config_to_json(const msvit_config* cfg, char** out);
MSVIT_API void msvit_config_free(msvit_config* cfg);

/* ---- datasets ---- */
/* Training and evaluation sets per the data section; *eval may be empty. */
MSVIT_API msvit_status msvit_dataset_from_config(const msvit_config* cfg, msvit_dataset** train,
                                                 msvit_dataset** eval);
/* Synthetic clutter samples using the config's scale and class count. */
MSVIT_API msvit_status msvit_dataset_generate(const msvit_config* cfg, uint64_t seed, size_t n,
                                              msvit_dataset** out);
MSVIT_API msvit_status msvit_dataset_save(const msvit_dataset* ds, const char* dir);
MSVIT_API msvit_status msvit_dataset_load(const char* path, msvit_dataset** out);
MSVIT_API size_t msvit_dataset_size(const msvit_dataset* ds);
MSVIT_API void msvit_dataset_free(msvit_dataset* ds);

/* ---- models ---- */
/* Fresh parameters seeded from train.seed. */
MSVIT_API msvit_status msvit_model_create(const msvit_config* cfg, msvit_model** out);
/* cfg_out may be NULL; otherwise receives the config stored in the checkpoint. */
MSVIT_API msvit_status msvit_model_load(const char* path, msvit_model** out,
                                        msvit_config** cfg_out);
MSVIT_API msvit_status msvit_model_save(const msvit_model* model, const msvit_config* cfg,
                                        const char* path);
MSVIT_API size_t msvit_model_parameter_count(const msvit_model* model);
MSVIT_API void msvit_model_free(msvit_model* model);

/* ---- engine ---- */
/* eval, run_dir, log and history_json may be NULL. With run_dir set,
 * config.json, metrics.csv and checkpoint.bin are written there. */
MSVIT_API msvit_status msvit_train(msvit_model* model, const msvit_dataset* train,
                                   const msvit_dataset* eval, const msvit_config* cfg,
                                   const char* run_dir, msvit_log_fn log, void* user,
                                   char** history_json);
/* gate_mode NULL means "learned". report_json receives an evaluation report. */
MSVIT_API msvit_status msvit_evaluate(const msvit_model* model, const msvit_dataset* data,
                                      const char* gate_mode, char** report_json);
/* One P5 PGM per image (255 = fine) plus frequency.csv in out_dir. */
MSVIT_API msvit_status msvit_write_masks(const msvit_model* model, const msvit_dataset* data,
                                         const char* gate_mode, const char* out_dir,
                                         char** report_json);
/* Analytic MAC report. mask_source is all-fine, all-coarse, radial:R, plain
 * or learned; learned needs model and data, the others ignore them. */
MSVIT_API msvit_status msvit_cost_report(const msvit_config* cfg, const char* mask_source,
                                         const msvit_model* model, const msvit_dataset* data,
                                         char** report_json);
/* Trains one run per (g*, lambda) cell under root and writes summary.csv. */
MSVIT_API msvit_status msvit_sweep(const msvit_config* cfg, const char* root, msvit_log_fn log,
                                   void* user, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* MSVIT_MSVIT_H */
