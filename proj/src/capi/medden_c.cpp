/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "medden.h"

#include <cstring>
#include <sstream>
#include <string>

#include "core/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

mdn_status to_status(medden::ErrorKind kind) {
  switch (kind) {
    case medden::ErrorKind::Usage: return MDN_ERR_USAGE;
    case medden::ErrorKind::Data: return MDN_ERR_DATA;
    case medden::ErrorKind::Runtime: return MDN_ERR_RUNTIME;
  }
  return MDN_ERR_RUNTIME;
}

// Runs a pipeline call, translating exceptions into status codes.
template <typename Fn>
mdn_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MDN_OK;
  } catch (const medden::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MDN_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown failure";
    return MDN_ERR_RUNTIME;
  }
}

std::string or_empty(const char* s) { return s ? std::string(s) : std::string(); }

void copy_to(char* dst, size_t cap, const std::string& src) {
  if (!dst || cap == 0) return;
  const size_t n = src.size() < cap - 1 ? src.size() : cap - 1;
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

}  // namespace

struct mdn_manifest {
  medden::DatasetManifest m;
};

struct mdn_model {
  medden::Graph g;
};

extern "C" {

const char* mdn_version(void) { return "medden 1.0.0"; }

const char* mdn_last_error(void) { return g_last_error.c_str(); }

mdn_status mdn_prepare(const mdn_prepare_opts* opts) {
  if (!opts) {
    g_last_error = "mdn_prepare: null options";
    return MDN_ERR_USAGE;
  }
  return guarded([&] {
    medden::PrepareOptions po;
    po.input_dir = or_empty(opts->input_dir);
    po.synthetic_count = opts->synthetic_count;
    po.size = opts->size;
    po.splits = {opts->split_train, opts->split_val, opts->split_test};
    po.seed = opts->seed;
    po.out_dir = or_empty(opts->out_dir);
    po.manifest_path = or_empty(opts->manifest_path);
    if (opts->image_format) po.image_format = opts->image_format;
    medden::cmd_prepare(po);
  });
}

mdn_status mdn_corrupt(const char* manifest_path, double mean, double sigma, uint64_t seed,
                       int clamp) {
  return guarded([&] {
    medden::CorruptOptions co;
    co.manifest_path = or_empty(manifest_path);
    co.mean = mean;
    co.sigma = sigma;
    co.seed = seed;
    co.clamp = clamp != 0;
    medden::cmd_corrupt(co);
  });
}

mdn_status mdn_train(const char* manifest_path, const mdn_train_opts* opts,
                     mdn_train_result* result) {
  if (!opts) {
    g_last_error = "mdn_train: null options";
    return MDN_ERR_USAGE;
  }
  return guarded([&] {
    medden::TrainConfig cfg;
    cfg.model.arch = medden::arch_from_name(or_empty(opts->arch));
    cfg.model.base_ch = opts->base_ch;
    cfg.model.depth = opts->depth;
    cfg.model.deep_supervision = opts->deep_supervision != 0;
    cfg.mode = medden::train_mode_from_name(or_empty(opts->mode));
    cfg.workers = opts->workers;
    cfg.amp = opts->amp != 0;
    cfg.epochs = opts->epochs;
    cfg.batch_per_worker = opts->batch_per_worker;
    cfg.lr = opts->lr;
    cfg.seeds.init = opts->seed_init;
    cfg.seeds.data = opts->seed_data;
    if (opts->early_stop_patience > 0) cfg.early_stop_patience = opts->early_stop_patience;
    cfg.freeze_norm = opts->freeze_norm != 0;
    cfg.out_dir = or_empty(opts->out_dir);

    medden::TrainHooks hooks;
    if (opts->epoch_cb) {
      hooks.on_epoch = [cb = opts->epoch_cb, user = opts->epoch_cb_user](
                           const medden::EpochStats& st) {
        mdn_epoch_stats out;
        out.epoch = st.epoch;
        out.train_loss = st.train_loss;
        out.val_loss = st.val_loss;
        out.wall_seconds = st.wall_seconds;
        out.skipped_steps = st.skipped_steps;
        cb(&out, user);
      };
    }

    medden::TrainResult tr =
        medden::cmd_train(or_empty(manifest_path), cfg, opts->epoch_cb ? &hooks : nullptr);
    if (result) {
      std::memset(result, 0, sizeof(*result));
      result->best_val_loss = tr.best_val_loss;
      result->best_epoch = tr.best_epoch;
      result->epochs_run = static_cast<int>(tr.stats.size());
      result->early_stopped = tr.early_stopped ? 1 : 0;
      double total = 0.0;
      int64_t skipped = 0;
      for (const auto& st : tr.stats) {
        total += st.wall_seconds;
        skipped += st.skipped_steps;
      }
      result->total_seconds = total;
      result->skipped_steps = skipped;
      copy_to(result->best_checkpoint, sizeof(result->best_checkpoint), tr.best_checkpoint);
    }
  });
}

mdn_status mdn_evaluate(const char* manifest_path, const char* checkpoint,
                        const char* ssim_variant, const char* out_prefix,
                        mdn_eval_result* result) {
  return guarded([&] {
    medden::EvaluateOptions eo;
    eo.manifest_path = or_empty(manifest_path);
    eo.checkpoint = or_empty(checkpoint);
    eo.variant = medden::ssim_variant_from_name(ssim_variant ? ssim_variant : "windowed");
    eo.out_prefix = or_empty(out_prefix);
    medden::EvalResult ev = medden::cmd_evaluate(eo);
    if (result) {
      result->psnr_mean = ev.psnr.mean;
      result->psnr_ci95 = ev.psnr.ci95;
      result->ssim_mean = ev.ssim.mean;
      result->ssim_ci95 = ev.ssim.ci95;
      result->n = ev.ssim.n;
      result->psnr_inf_excluded = ev.psnr_inf_excluded;
    }
  });
}

mdn_status mdn_bench(const char* manifest_path, const char* configs_path, const char* out_prefix,
                     char* timing_text, size_t timing_text_cap) {
  return guarded([&] {
    medden::BenchOutcome out =
        medden::cmd_bench(or_empty(manifest_path), or_empty(configs_path), or_empty(out_prefix));
    if (timing_text && timing_text_cap > 0) {
      copy_to(timing_text, timing_text_cap, out.timing.formatted());
    }
  });
}

mdn_status mdn_render(const char* manifest_path, const char* unet_checkpoint,
                      const char* unetpp_checkpoint, const char* ids_csv, const char* out_path) {
  return guarded([&] {
    medden::RenderOptions ro;
    ro.manifest_path = or_empty(manifest_path);
    ro.unet_checkpoint = or_empty(unet_checkpoint);
    ro.unetpp_checkpoint = or_empty(unetpp_checkpoint);
    ro.out_path = or_empty(out_path);
    std::stringstream ss(or_empty(ids_csv));
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (!id.empty()) ro.ids.push_back(id);
    }
    medden::cmd_render(ro);
  });
}

mdn_status mdn_manifest_open(const char* path, mdn_manifest** out) {
  if (!out) {
    g_last_error = "mdn_manifest_open: null output";
    return MDN_ERR_USAGE;
  }
  *out = nullptr;
  return guarded([&] { *out = new mdn_manifest{medden::load_manifest(or_empty(path))}; });
}

void mdn_manifest_free(mdn_manifest* m) { delete m; }

int64_t mdn_manifest_record_count(const mdn_manifest* m) {
  return m ? static_cast<int64_t>(m->m.records.size()) : 0;
}

int64_t mdn_manifest_split_count(const mdn_manifest* m, const char* split) {
  if (!m || !split) return 0;
  const std::string s = split;
  if (s == "train") return static_cast<int64_t>(m->m.split.train.size());
  if (s == "val") return static_cast<int64_t>(m->m.split.val.size());
  if (s == "test") return static_cast<int64_t>(m->m.split.test.size());
  return 0;
}

int mdn_manifest_has_noise(const mdn_manifest* m) { return m && m->m.noise ? 1 : 0; }

double mdn_manifest_noise_mean(const mdn_manifest* m) {
  return m && m->m.noise ? m->m.noise->mean : 0.0;
}

double mdn_manifest_noise_sigma(const mdn_manifest* m) {
  return m && m->m.noise ? m->m.noise->sigma : 0.0;
}

int64_t mdn_manifest_resize_to(const mdn_manifest* m) { return m ? m->m.resize_to : 0; }

mdn_status mdn_model_load(const char* checkpoint, mdn_model** out) {
  if (!out) {
    g_last_error = "mdn_model_load: null output";
    return MDN_ERR_USAGE;
  }
  *out = nullptr;
  return guarded([&] { *out = new mdn_model{medden::load_checkpoint(or_empty(checkpoint))}; });
}

void mdn_model_free(mdn_model* m) { delete m; }

const char* mdn_model_arch(const mdn_model* m) {
  return m ? medden::arch_name(m->g.config().arch) : "";
}

int64_t mdn_model_param_count(const mdn_model* m) { return m ? m->g.param_count() : 0; }

mdn_status mdn_model_denoise(mdn_model* m, const double* pixels, int64_t h, int64_t w,
                             double* out) {
  if (!m || !pixels || !out) {
    g_last_error = "mdn_model_denoise: null argument";
    return MDN_ERR_USAGE;
  }
  return guarded([&] {
    medden::ImageRecord rec;
    rec.width = w;
    rec.height = h;
    rec.pixels.assign(pixels, pixels + h * w);
    medden::ImageRecord res = medden::denoise_image(m->g, rec);
    std::memcpy(out, res.pixels.data(), sizeof(double) * static_cast<size_t>(h * w));
  });
}

}  // extern "C"
