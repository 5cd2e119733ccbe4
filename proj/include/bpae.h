/*
 * bpae - blood pressure estimation from pulse waveforms.
 *
 * C interface to the two-stage pipeline: waveform preprocessing and quality
 * screening, a 1-D convolutional autoencoder whose dense bottleneck provides
 * features, per-target regressors, and BHS/AAMI-style evaluation.
 *
 * All functions returning bpae_status set a thread-local message retrievable
 * with bpae_last_error() on failure. Handles are opaque; every *_open /
 * *_create call pairs with the matching *_free.
 */

#ifndef BPAE_H
#define BPAE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BPAE_API __declspec(dllexport)
#else
#define BPAE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bpae_status {
    BPAE_OK = 0,
    BPAE_ERR_INVALID_ARGUMENT = 1,
    BPAE_ERR_FORMAT = 2,
    BPAE_ERR_INCOMPATIBLE = 3,
    BPAE_ERR_NUMERIC = 4,
    BPAE_ERR_IO = 5,
    BPAE_ERR_INTERNAL = 6
} bpae_status;

/* Channel codes used by the segment container. */
enum {
    BPAE_CHANNEL_PPG = 0,
    BPAE_CHANNEL_VPG = 1,
    BPAE_CHANNEL_APG = 2,
    BPAE_CHANNEL_ECG = 3,
    BPAE_CHANNEL_ABP = 4
};

typedef struct bpae_config bpae_config;
typedef struct bpae_store bpae_store;
typedef struct bpae_model bpae_model;
typedef struct bpae_regressor bpae_regressor;

BPAE_API const char* bpae_version(void);

/* Message for the most recent failure on this thread ("" when none). */
BPAE_API const char* bpae_last_error(void);

/* ---- configuration ----------------------------------------------------- */

/* Fresh configuration with the reference defaults. */
BPAE_API bpae_config* bpae_config_create(void);
BPAE_API void bpae_config_free(bpae_config* cfg);

/* INI-style file: [section] headers, key = value lines. */
BPAE_API bpae_status bpae_config_load_file(bpae_config* cfg, const char* path);

/* Dotted keys, e.g. "unet.width". Unknown keys are rejected. */
BPAE_API bpae_status bpae_config_set(bpae_config* cfg, const char* key, const char* value);
BPAE_API bpae_status bpae_config_get(const bpae_config* cfg, const char* key, char* buf,
                                     size_t bufsize);

/* ---- segment stores ------------------------------------------------------ */

BPAE_API bpae_status bpae_store_open(const char* path, bpae_store** out);
BPAE_API void bpae_store_free(bpae_store* store);
BPAE_API uint32_t bpae_store_segments(const bpae_store* store);
BPAE_API uint32_t bpae_store_segment_length(const bpae_store* store);
BPAE_API uint32_t bpae_store_channels(const bpae_store* store);
BPAE_API bpae_status bpae_store_channel_code(const bpae_store* store, uint32_t index,
                                             uint8_t* out);
BPAE_API bpae_status bpae_store_segment_id(const bpae_store* store, uint32_t index, uint64_t* out);

/* Copies one segment row (segment_length floats) of the given channel. */
BPAE_API bpae_status bpae_store_copy_row(const bpae_store* store, uint32_t segment,
                                         uint8_t channel_code, float* out, size_t capacity);

/* ---- trained models ------------------------------------------------------ */

BPAE_API bpae_status bpae_model_open(const char* path, bpae_model** out);
BPAE_API void bpae_model_free(bpae_model* model);
BPAE_API uint32_t bpae_model_features(const bpae_model* model);
BPAE_API uint32_t bpae_model_segment_length(const bpae_model* model);
BPAE_API uint32_t bpae_model_input_channels(const bpae_model* model);
BPAE_API bpae_status bpae_model_param_counts(const bpae_model* model, uint64_t* conv_params,
                                             uint64_t* dense_params, uint64_t* total);

/*
 * Single-segment inference. input holds input_channels * segment_length
 * floats, channel-major, channels ordered as in the model configuration.
 * recon (segment_length floats) and features (feature count floats) may each
 * be NULL when not wanted.
 */
BPAE_API bpae_status bpae_model_forward(const bpae_model* model, const float* input,
                                        size_t input_len, float* recon, float* features);

/* ---- regressors ----------------------------------------------------------- */

BPAE_API bpae_status bpae_regressor_open(const char* path, bpae_regressor** out);
BPAE_API void bpae_regressor_free(bpae_regressor* reg);
BPAE_API uint32_t bpae_regressor_features(const bpae_regressor* reg);
/* 0 = SBP, 1 = DBP */
BPAE_API int bpae_regressor_target(const bpae_regressor* reg);
BPAE_API bpae_status bpae_regressor_predict_one(const bpae_regressor* reg, const float* features,
                                                size_t n, double* out_mmhg);

/* ---- pipeline commands ----------------------------------------------------
 * File-oriented stages matching the CLI. force != 0 allows overwriting
 * existing outputs. Optional outputs/inputs take NULL.
 */

BPAE_API bpae_status bpae_cmd_synth(const bpae_config* cfg, uint32_t n, uint64_t seed,
                                    const char* out_store, const char* out_labels, int force);

BPAE_API bpae_status bpae_cmd_preprocess(const bpae_config* cfg, const char* input_path,
                                         const char* out_store, const char* out_labels,
                                         const char* out_report, int threads, int force);

/* val_store NULL carves a validation split from the training store. */
BPAE_API bpae_status bpae_cmd_train_ae(const bpae_config* cfg, const char* train_store,
                                       const char* val_store, uint64_t seed, int threads,
                                       int verbose, const char* out_model,
                                       const char* out_history, int force);

BPAE_API bpae_status bpae_cmd_features(const char* model_path, const char* store_path, int threads,
                                       const char* out_features, int force);

/* target: "sbp" or "dbp". */
BPAE_API bpae_status bpae_cmd_train_reg(const bpae_config* cfg, const char* features_path,
                                        const char* labels_path, const char* target,
                                        uint64_t seed, const char* out_regressor, int force);

/* Either regressor may be NULL; the CSV gets one column per target. */
BPAE_API bpae_status bpae_cmd_predict(const char* reg_sbp, const char* reg_dbp,
                                      const char* features_path, const char* out_csv, int force);

BPAE_API bpae_status bpae_cmd_evaluate(const bpae_config* cfg, const char* predictions_csv,
                                       const char* labels_csv, const char* out_report_json,
                                       const char* plots_dir, int force);

/* min/max/mean/std of SBP/DBP/MAP as JSON; out_json NULL prints to stdout. */
BPAE_API bpae_status bpae_cmd_stats(const char* labels_csv, const char* out_json);

/* mode: "holdout", "kfold" or "cross_dataset" (the latter needs store_b/labels_b). */
BPAE_API bpae_status bpae_cmd_experiment(const bpae_config* cfg, const char* mode,
                                         const char* store_path, const char* labels_path,
                                         const char* store_b, const char* labels_b, uint64_t seed,
                                         int threads, int verbose, const char* out_dir, int force);

#ifdef __cplusplus
}
#endif

#endif /* BPAE_H */
