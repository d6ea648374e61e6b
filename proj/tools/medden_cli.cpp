/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */

// Command-line front-end over the medden C API. Exit codes: 0 success,
// 1 usage error, 2 data/format error, 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medden.h"

namespace {

using nlohmann::json;

int fail(mdn_status st) {
  std::fprintf(stderr, "error: %s\n", mdn_last_error());
  return static_cast<int>(st);
}

// Flat option bag mirroring every flag a subcommand can take. A --config
// file (JSON object of flag-name keys) fills these first; explicit flags
// override. Unknown keys fail fast.
struct RunConfig {
  // prepare
  std::string input_dir;
  int synthetic = 0;
  std::int64_t size = 256;
  std::vector<double> splits{0.5, 0.33, 0.17};
  std::uint64_t seed = 42;
  std::string out_dir = "data";
  std::string manifest = "data/manifest.json";
  std::string image_format = "pgm";
  // corrupt
  double mean = 0.1;
  double sigma = 0.1;
  std::uint64_t noise_seed = 7;
  bool no_clamp = false;
  // train
  std::string arch = "unet";
  int base_ch = 8;
  int depth = 4;
  bool deep_supervision = false;
  std::string mode = "single";
  int workers = 1;
  bool amp = false;
  int epochs = 50;
  int batch_per_worker = 16;
  double lr = 1e-3;
  std::uint64_t seed_init = 1;
  std::uint64_t seed_data = 2;
  int patience = 0;
  bool freeze_norm = false;
  std::string train_out = "runs/latest";
  // evaluate / render / bench
  std::string checkpoint;
  std::string ssim_variant = "windowed";
  std::string report_prefix;
  std::string unet_ckpt, unetpp_ckpt;
  std::string ids;
  std::string out_image = "grid.png";
  std::string configs;
};

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "input_dir", "synthetic", "size", "split_train", "split_val", "split_test", "seed",
      "out_dir", "manifest", "image_format", "mean", "sigma", "noise_seed", "no_clamp", "arch",
      "base_ch", "depth", "deep_supervision", "mode", "workers", "amp", "epochs",
      "batch_per_worker", "lr", "seed_init", "seed_data", "patience", "freeze_norm", "train_out",
      "checkpoint", "ssim_variant", "report_prefix", "unet_ckpt", "unetpp_ckpt", "ids",
      "out_image", "configs"};
  return keys;
}

// Returns false (after printing) on unknown keys or type errors.
bool apply_config_file(const std::string& path, RunConfig& rc) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open config %s\n", path.c_str());
    return false;
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: bad config %s: %s\n", path.c_str(), e.what());
    return false;
  }
  if (!j.is_object()) {
    std::fprintf(stderr, "error: config must be a JSON object\n");
    return false;
  }
  try {
    for (const auto& [key, value] : j.items()) {
      if (!known_config_keys().count(key)) {
        std::fprintf(stderr, "error: unknown config key \"%s\"\n", key.c_str());
        return false;
      }
      if (key == "input_dir") rc.input_dir = value.get<std::string>();
      else if (key == "synthetic") rc.synthetic = value.get<int>();
      else if (key == "size") rc.size = value.get<std::int64_t>();
      else if (key == "split_train") rc.splits[0] = value.get<double>();
      else if (key == "split_val") rc.splits[1] = value.get<double>();
      else if (key == "split_test") rc.splits[2] = value.get<double>();
      else if (key == "seed") rc.seed = value.get<std::uint64_t>();
      else if (key == "out_dir") rc.out_dir = value.get<std::string>();
      else if (key == "manifest") rc.manifest = value.get<std::string>();
      else if (key == "image_format") rc.image_format = value.get<std::string>();
      else if (key == "mean") rc.mean = value.get<double>();
      else if (key == "sigma") rc.sigma = value.get<double>();
      else if (key == "noise_seed") rc.noise_seed = value.get<std::uint64_t>();
      else if (key == "no_clamp") rc.no_clamp = value.get<bool>();
      else if (key == "arch") rc.arch = value.get<std::string>();
      else if (key == "base_ch") rc.base_ch = value.get<int>();
      else if (key == "depth") rc.depth = value.get<int>();
      else if (key == "deep_supervision") rc.deep_supervision = value.get<bool>();
      else if (key == "mode") rc.mode = value.get<std::string>();
      else if (key == "workers") rc.workers = value.get<int>();
      else if (key == "amp") rc.amp = value.get<bool>();
      else if (key == "epochs") rc.epochs = value.get<int>();
      else if (key == "batch_per_worker") rc.batch_per_worker = value.get<int>();
      else if (key == "lr") rc.lr = value.get<double>();
      else if (key == "seed_init") rc.seed_init = value.get<std::uint64_t>();
      else if (key == "seed_data") rc.seed_data = value.get<std::uint64_t>();
      else if (key == "patience") rc.patience = value.get<int>();
      else if (key == "freeze_norm") rc.freeze_norm = value.get<bool>();
      else if (key == "train_out") rc.train_out = value.get<std::string>();
      else if (key == "checkpoint") rc.checkpoint = value.get<std::string>();
      else if (key == "ssim_variant") rc.ssim_variant = value.get<std::string>();
      else if (key == "report_prefix") rc.report_prefix = value.get<std::string>();
      else if (key == "unet_ckpt") rc.unet_ckpt = value.get<std::string>();
      else if (key == "unetpp_ckpt") rc.unetpp_ckpt = value.get<std::string>();
      else if (key == "ids") rc.ids = value.get<std::string>();
      else if (key == "out_image") rc.out_image = value.get<std::string>();
      else if (key == "configs") rc.configs = value.get<std::string>();
    }
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: config value type: %s\n", e.what());
    return false;
  }
  return true;
}

void print_epoch(const mdn_epoch_stats* st, void*) {
  std::printf("epoch %3d  train %.6f  val %.6f  %.1fs", st->epoch, st->train_loss, st->val_loss,
              st->wall_seconds);
  if (st->skipped_steps > 0) std::printf("  skipped %lld", static_cast<long long>(st->skipped_steps));
  std::printf("\n");
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medden: distributed denoising pipeline for grayscale medical images"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values")
      ->expected(1);

  auto* prepare = app.add_subcommand("prepare", "Resize or synthesize clean images and write a manifest");
  prepare->add_option("--input-dir", rc.input_dir, "Directory of .pgm/.png source images");
  prepare->add_option("--synthetic", rc.synthetic, "Generate N synthetic phantoms instead");
  prepare->add_option("--size", rc.size, "Square resize target (default 256)");
  prepare->add_option("--splits", rc.splits, "Train/val/test fractions (default 0.5 0.33 0.17)")
      ->expected(3);
  prepare->add_option("--seed", rc.seed, "Split/generation seed (default 42)");
  prepare->add_option("--out-dir", rc.out_dir, "Output directory (default data)");
  prepare->add_option("--out-manifest", rc.manifest, "Manifest path (default <out-dir>/manifest.json)");
  prepare->add_option("--format", rc.image_format, "Image format: pgm|png (default pgm)");

  auto* corrupt = app.add_subcommand("corrupt", "Write Gaussian-obfuscated copies of every image");
  corrupt->add_option("--manifest", rc.manifest, "Manifest to update")->required();
  corrupt->add_option("--sigma", rc.sigma, "Noise standard deviation (0.1 = 10% noise)")->required();
  corrupt->add_option("--mean", rc.mean, "Noise mean (default 0.1)");
  corrupt->add_option("--seed", rc.noise_seed, "Noise seed (default 7)");
  corrupt->add_flag("--no-clamp", rc.no_clamp, "Skip clamping noisy pixels to [0,1]");

  auto* train = app.add_subcommand("train", "Train a denoiser on the noisy/clean pairs");
  train->add_option("--manifest", rc.manifest, "Manifest with noise fields populated")->required();
  train->add_option("--arch", rc.arch, "unet|unetpp (default unet)");
  train->add_option("--base-ch", rc.base_ch, "Base channel width (default 8)");
  train->add_option("--depth", rc.depth, "Encoder levels (default 4)");
  train->add_flag("--deep-supervision", rc.deep_supervision, "U-Net++ multi-head training");
  train->add_option("--mode", rc.mode, "single|dp|ddp (default single)");
  train->add_option("--workers", rc.workers, "Worker count for dp/ddp (default 1)");
  train->add_flag("--amp", rc.amp, "Mixed-precision with dynamic loss scaling");
  train->add_option("--epochs", rc.epochs, "Training epochs (default 50)");
  train->add_option("--batch-per-worker", rc.batch_per_worker, "Batch size per worker (default 16)");
  train->add_option("--lr", rc.lr, "Adam learning rate (default 1e-3)");
  train->add_option("--seed-init", rc.seed_init, "Weight init seed (default 1)");
  train->add_option("--seed-data", rc.seed_data, "Data order seed (default 2)");
  train->add_option("--patience", rc.patience, "Early-stop patience in epochs (0 = off)");
  train->add_flag("--freeze-norm", rc.freeze_norm, "Run batch norm on running stats");
  train->add_option("--out-dir", rc.train_out, "Checkpoint/log directory (default runs/latest)");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  evaluate->add_option("--manifest", rc.manifest, "Manifest")->required();
  evaluate->add_option("--ckpt", rc.checkpoint, "Checkpoint to score")->required();
  evaluate->add_option("--ssim-variant", rc.ssim_variant, "global|windowed (default windowed)");
  evaluate->add_option("--out", rc.report_prefix, "Report prefix; writes <out>.csv and <out>.json");

  auto* bench = app.add_subcommand("bench", "Run timed configs and report % time savings");
  bench->add_option("--manifest", rc.manifest, "Manifest")->required();
  bench->add_option("--configs", rc.configs, "JSON bench config file")->required();
  bench->add_option("--out", rc.report_prefix, "Output prefix for reports");

  auto* render = app.add_subcommand("render", "Write a noisy|unet|unetpp|clean comparison grid");
  render->add_option("--manifest", rc.manifest, "Manifest")->required();
  render->add_option("--unet-ckpt", rc.unet_ckpt, "U-Net checkpoint")->required();
  render->add_option("--unetpp-ckpt", rc.unetpp_ckpt, "U-Net++ checkpoint")->required();
  render->add_option("--ids", rc.ids, "Comma-separated record ids")->required();
  render->add_option("--out", rc.out_image, "Output image (default grid.png)");

  // Config file values act as defaults, so apply them before parsing flags.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      if (!apply_config_file(argv[i + 1], rc)) return 1;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc_exit = app.exit(e);
    return rc_exit == 0 ? 0 : 1;
  }

  if (prepare->parsed()) {
    mdn_prepare_opts opts{};
    opts.input_dir = rc.input_dir.empty() ? nullptr : rc.input_dir.c_str();
    opts.synthetic_count = rc.synthetic;
    opts.size = rc.size;
    opts.split_train = rc.splits[0];
    opts.split_val = rc.splits[1];
    opts.split_test = rc.splits[2];
    opts.seed = rc.seed;
    opts.out_dir = rc.out_dir.c_str();
    const std::string manifest_path =
        prepare->count("--out-manifest") ? rc.manifest : rc.out_dir + "/manifest.json";
    opts.manifest_path = manifest_path.c_str();
    opts.image_format = rc.image_format.c_str();
    const mdn_status st = mdn_prepare(&opts);
    if (st != MDN_OK) return fail(st);
    std::printf("manifest written: %s\n", manifest_path.c_str());
    return 0;
  }

  if (corrupt->parsed()) {
    const mdn_status st =
        mdn_corrupt(rc.manifest.c_str(), rc.mean, rc.sigma, rc.noise_seed, rc.no_clamp ? 0 : 1);
    if (st != MDN_OK) return fail(st);
    std::printf("noisy images written; manifest updated: %s\n", rc.manifest.c_str());
    return 0;
  }

  if (train->parsed()) {
    mdn_train_opts opts{};
    opts.arch = rc.arch.c_str();
    opts.base_ch = rc.base_ch;
    opts.depth = rc.depth;
    opts.deep_supervision = rc.deep_supervision ? 1 : 0;
    opts.mode = rc.mode.c_str();
    opts.workers = rc.workers;
    opts.amp = rc.amp ? 1 : 0;
    opts.epochs = rc.epochs;
    opts.batch_per_worker = rc.batch_per_worker;
    opts.lr = rc.lr;
    opts.seed_init = rc.seed_init;
    opts.seed_data = rc.seed_data;
    opts.early_stop_patience = rc.patience;
    opts.freeze_norm = rc.freeze_norm ? 1 : 0;
    opts.out_dir = rc.train_out.c_str();
    opts.epoch_cb = print_epoch;

    mdn_train_result result{};
    const mdn_status st = mdn_train(rc.manifest.c_str(), &opts, &result);
    if (st != MDN_OK) return fail(st);
    std::printf("best val loss %.6f at epoch %d (%d epochs, %.1fs total)%s\n",
                result.best_val_loss, result.best_epoch, result.epochs_run, result.total_seconds,
                result.early_stopped ? " [early stop]" : "");
    std::printf("best checkpoint: %s\n", result.best_checkpoint);
    return 0;
  }

  if (evaluate->parsed()) {
    mdn_eval_result result{};
    const mdn_status st = mdn_evaluate(rc.manifest.c_str(), rc.checkpoint.c_str(),
                                       rc.ssim_variant.c_str(),
                                       rc.report_prefix.empty() ? nullptr : rc.report_prefix.c_str(),
                                       &result);
    if (st != MDN_OK) return fail(st);

    mdn_manifest* m = nullptr;
    mdn_model* model = nullptr;
    double sigma = 0.0;
    std::string arch = "?";
    if (mdn_manifest_open(rc.manifest.c_str(), &m) == MDN_OK) {
      sigma = mdn_manifest_noise_sigma(m);
      mdn_manifest_free(m);
    }
    if (mdn_model_load(rc.checkpoint.c_str(), &model) == MDN_OK) {
      arch = mdn_model_arch(model);
      mdn_model_free(model);
    }
    std::printf("%-8s %4.0f%% noise  PSNR %.2f (±%.2f) dB  SSIM %.4f (±%.4f)  [%s, n=%lld]\n",
                arch.c_str(), sigma * 100.0, result.psnr_mean, result.psnr_ci95, result.ssim_mean,
                result.ssim_ci95, rc.ssim_variant.c_str(), static_cast<long long>(result.n));
    if (result.psnr_inf_excluded > 0) {
      std::printf("note: %lld identical pairs excluded from PSNR aggregation\n",
                  static_cast<long long>(result.psnr_inf_excluded));
    }
    return 0;
  }

  if (bench->parsed()) {
    std::vector<char> timing(16384, '\0');
    const mdn_status st = mdn_bench(rc.manifest.c_str(), rc.configs.c_str(),
                                    rc.report_prefix.empty() ? nullptr : rc.report_prefix.c_str(),
                                    timing.data(), timing.size());
    if (st != MDN_OK) return fail(st);
    std::printf("%s", timing.data());
    return 0;
  }

  if (render->parsed()) {
    const mdn_status st = mdn_render(rc.manifest.c_str(), rc.unet_ckpt.c_str(),
                                     rc.unetpp_ckpt.c_str(), rc.ids.c_str(), rc.out_image.c_str());
    if (st != MDN_OK) return fail(st);
    std::printf("grid written: %s\n", rc.out_image.c_str());
    return 0;
  }

  return 1;
}
