/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#ifndef MEDDEN_H
#define MEDDEN_H

/*
 * C API for the medden denoising pipeline. Every call returns a status code;
 * on failure, mdn_last_error() describes what went wrong (thread-local).
 * Opaque handles own their resources and are released with the matching
 * _free function.
 */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mdn_status {
  MDN_OK = 0,
  MDN_ERR_USAGE = 1,   /* bad flags or configuration */
  MDN_ERR_DATA = 2,    /* unreadable or malformed files */
  MDN_ERR_RUNTIME = 3, /* contract violations, worker failures */
} mdn_status;

const char* mdn_version(void);
const char* mdn_last_error(void);

/* ---- dataset preparation ---- */

typedef struct mdn_prepare_opts {
  const char* input_dir;   /* NULL when synthetic_count > 0 */
  int synthetic_count;     /* > 0 renders phantoms instead of reading files */
  int64_t size;            /* square resize target */
  double split_train, split_val, split_test;
  uint64_t seed;
  const char* out_dir;
  const char* manifest_path; /* NULL: <out_dir>/manifest.json */
  const char* image_format;  /* "pgm" (default) or "png" */
} mdn_prepare_opts;

mdn_status mdn_prepare(const mdn_prepare_opts* opts);

mdn_status mdn_corrupt(const char* manifest_path, double mean, double sigma, uint64_t seed,
                       int clamp);

/* ---- training ---- */

typedef struct mdn_epoch_stats {
  int epoch;
  double train_loss;
  double val_loss;
  double wall_seconds;
  int64_t skipped_steps;
} mdn_epoch_stats;

typedef void (*mdn_epoch_callback)(const mdn_epoch_stats* stats, void* user);

typedef struct mdn_train_opts {
  const char* arch;  /* "unet" | "unetpp" */
  int base_ch;
  int depth;
  int deep_supervision;
  const char* mode;  /* "single" | "dp" | "ddp" */
  int workers;
  int amp;
  int epochs;
  int batch_per_worker;
  double lr;
  uint64_t seed_init, seed_data;
  int early_stop_patience; /* <= 0: disabled */
  int freeze_norm;
  const char* out_dir;
  mdn_epoch_callback epoch_cb; /* optional progress reporting */
  void* epoch_cb_user;
} mdn_train_opts;

typedef struct mdn_train_result {
  double best_val_loss;
  int best_epoch;
  int epochs_run;
  int early_stopped;
  int64_t skipped_steps;
  double total_seconds;
  char best_checkpoint[1024];
} mdn_train_result;

mdn_status mdn_train(const char* manifest_path, const mdn_train_opts* opts,
                     mdn_train_result* result);

/* ---- evaluation, benchmarking, rendering ---- */

typedef struct mdn_eval_result {
  double psnr_mean, psnr_ci95;
  double ssim_mean, ssim_ci95;
  int64_t n;
  int64_t psnr_inf_excluded;
} mdn_eval_result;

mdn_status mdn_evaluate(const char* manifest_path, const char* checkpoint,
                        const char* ssim_variant /* "global" | "windowed" */,
                        const char* out_prefix /* NULL: no report files */,
                        mdn_eval_result* result);

mdn_status mdn_bench(const char* manifest_path, const char* configs_path, const char* out_prefix,
                     char* timing_text, size_t timing_text_cap);

mdn_status mdn_render(const char* manifest_path, const char* unet_checkpoint,
                      const char* unetpp_checkpoint, const char* ids_csv, const char* out_path);

/* ---- manifest handle ---- */

typedef struct mdn_manifest mdn_manifest;

mdn_status mdn_manifest_open(const char* path, mdn_manifest** out);
void mdn_manifest_free(mdn_manifest* m);
int64_t mdn_manifest_record_count(const mdn_manifest* m);
int64_t mdn_manifest_split_count(const mdn_manifest* m, const char* split);
int mdn_manifest_has_noise(const mdn_manifest* m);
double mdn_manifest_noise_mean(const mdn_manifest* m);
double mdn_manifest_noise_sigma(const mdn_manifest* m);
int64_t mdn_manifest_resize_to(const mdn_manifest* m);

/* ---- model handle ---- */

typedef struct mdn_model mdn_model;

mdn_status mdn_model_load(const char* checkpoint, mdn_model** out);
void mdn_model_free(mdn_model* m);
const char* mdn_model_arch(const mdn_model* m);
int64_t mdn_model_param_count(const mdn_model* m);

/* Denoise one grayscale image: `pixels` is h*w row-major in [0,1]; the
 * clamped prediction is written to `out` (also h*w). */
mdn_status mdn_model_denoise(mdn_model* m, const double* pixels, int64_t h, int64_t w,
                             double* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MEDDEN_H */
