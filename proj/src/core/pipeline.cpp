/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "core/rng.hpp"

namespace medden {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string id_from_filename(const fs::path& p) { return p.stem().string(); }

std::string join_path(const std::string& dir, const std::string& leaf) {
  if (dir.empty()) return leaf;
  return dir.back() == '/' ? dir + leaf : dir + "/" + leaf;
}

}  // namespace

DatasetManifest cmd_prepare(const PrepareOptions& opts) {
  if (opts.size < 1) throw ConfigError("prepare: size must be positive");
  if (opts.image_format != "pgm" && opts.image_format != "png") {
    throw ConfigError("prepare: image format must be pgm or png");
  }
  if (opts.out_dir.empty()) throw ConfigError("prepare: out_dir is required");

  const std::string clean_dir = join_path(opts.out_dir, "clean");
  fs::create_directories(clean_dir);

  std::vector<ImageRecord> images;
  if (opts.synthetic_count > 0) {
    images = gen_synthetic_phantoms(opts.synthetic_count, opts.size, opts.seed);
  } else {
    if (opts.input_dir.empty()) {
      throw ConfigError("prepare: need --input-dir or --synthetic N");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(opts.input_dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ImageRecord rec = decode_image(f.string());
      rec.id = id_from_filename(f);
      images.push_back(resize_bilinear(rec, opts.size));
      images.back().id = rec.id;
    }
    if (images.empty()) {
      throw ConfigError("prepare: no decodable images in " + opts.input_dir);
    }
  }

  DatasetManifest m;
  m.resize_to = opts.size;
  m.created_seed = opts.seed;
  std::vector<std::string> ids;
  for (auto& img : images) {
    const std::string path = join_path(clean_dir, img.id + "." + opts.image_format);
    encode_image(img, path);
    m.records.push_back({img.id, path, ""});
    ids.push_back(img.id);
  }
  m.split = split_dataset(ids, opts.splits, opts.seed);

  const std::string manifest_path =
      opts.manifest_path.empty() ? join_path(opts.out_dir, "manifest.json") : opts.manifest_path;
  save_manifest(m, manifest_path);
  return m;
}

DatasetManifest cmd_corrupt(const CorruptOptions& opts) {
  if (opts.sigma < 0.0) throw ConfigError("corrupt: sigma must be non-negative");
  DatasetManifest m = load_manifest(opts.manifest_path);
  validate_manifest(m, /*require_noisy=*/false);

  const std::string noisy_dir =
      join_path(fs::path(opts.manifest_path).parent_path().string(), "noisy");
  fs::create_directories(noisy_dir);

  NoiseSpec spec;
  spec.mean = opts.mean;
  spec.sigma = opts.sigma;
  spec.seed = opts.seed;
  spec.clamp = opts.clamp;

  for (auto& rec : m.records) {
    ImageRecord clean = decode_image(rec.clean);
    clean.id = rec.id;
    ImageRecord noisy = corrupt(clean, spec);
    const std::string ext = fs::path(rec.clean).extension().string();
    const std::string path = join_path(noisy_dir, rec.id + ext);
    encode_image(noisy, path);
    rec.noisy = path;
  }
  m.noise = spec;
  save_manifest(m, opts.manifest_path);
  return m;
}

TrainResult cmd_train(const std::string& manifest_path, const TrainConfig& cfg,
                      const TrainHooks* hooks) {
  DatasetManifest m = load_manifest(manifest_path);
  validate_manifest(m, /*require_noisy=*/true);
  return train(m, cfg, hooks);
}

EvalResult cmd_evaluate(const EvaluateOptions& opts) {
  DatasetManifest m = load_manifest(opts.manifest_path);
  validate_manifest(m, /*require_noisy=*/true);
  Graph g = load_checkpoint(opts.checkpoint);

  EvalResult result = evaluate_testset(g, m, opts.variant);

  if (!opts.out_prefix.empty()) {
    ReportRow row;
    row.noise_level = m.noise ? m.noise->sigma : 0.0;
    row.model = arch_name(g.config().arch);
    row.mode = "eval";
    row.workers = 1;
    row.amp = false;
    row.psnr = result.psnr;
    row.ssim = result.ssim;
    emit_report({row}, opts.out_prefix + ".csv", opts.out_prefix + ".json");
  }
  return result;
}

BenchOutcome cmd_bench(const std::string& manifest_path, const std::string& configs_path,
                       const std::string& out_prefix) {
  DatasetManifest m = load_manifest(manifest_path);
  validate_manifest(m, /*require_noisy=*/true);

  std::ifstream in(configs_path);
  if (!in) throw IoError("cannot open bench configs: " + configs_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("bad bench configs: " + std::string(e.what()));
  }
  if (!j.contains("configs") || !j["configs"].is_array() || j["configs"].empty()) {
    throw ConfigError("bench: configs file needs a non-empty \"configs\" array");
  }

  struct Entry {
    std::string label;
    TrainConfig cfg;
    bool baseline = false;
    bool run_eval = false;
  };
  std::vector<Entry> entries;
  bool any_baseline = false;
  for (const auto& c : j["configs"]) {
    Entry e;
    e.cfg.model.arch = arch_from_name(c.value("arch", std::string("unet")));
    e.cfg.model.base_ch = c.value("base_ch", 8);
    e.cfg.model.depth = c.value("depth", 4);
    e.cfg.model.deep_supervision = c.value("deep_supervision", false);
    e.cfg.mode = train_mode_from_name(c.value("mode", std::string("single")));
    e.cfg.workers = c.value("workers", e.cfg.mode == TrainMode::Single ? 1 : 2);
    e.cfg.amp = c.value("amp", false);
    e.cfg.epochs = c.value("epochs", 1);
    e.cfg.batch_per_worker = c.value("batch_per_worker", 16);
    e.cfg.lr = c.value("lr", 1e-3);
    e.cfg.seeds.init = c.value("seed_init", 1);
    e.cfg.seeds.data = c.value("seed_data", 2);
    e.baseline = c.value("baseline", false);
    e.run_eval = c.value("evaluate", false);
    e.label = c.value("label", std::string(arch_name(e.cfg.model.arch)) + "-" +
                                   train_mode_name(e.cfg.mode) +
                                   (e.cfg.amp ? "-amp" : ""));
    any_baseline = any_baseline || e.baseline;
    entries.push_back(std::move(e));
  }
  if (!any_baseline) throw ConfigError("bench: flag exactly one baseline per model");

  std::vector<TimingEntry> timing;
  std::vector<ReportRow> rows;
  for (auto& e : entries) {
    TrainConfig cfg = e.cfg;
    if (!out_prefix.empty()) cfg.out_dir = out_prefix + "_" + e.label;
    TrainResult result = train(m, cfg);
    double total = 0.0;
    for (const auto& st : result.stats) total += st.wall_seconds;

    timing.push_back({e.label, arch_name(cfg.model.arch), total, e.baseline});

    ReportRow row;
    row.noise_level = m.noise ? m.noise->sigma : 0.0;
    row.model = arch_name(cfg.model.arch);
    row.mode = train_mode_name(cfg.mode);
    row.workers = cfg.workers;
    row.amp = cfg.amp;
    row.train_seconds = total;
    if (e.run_eval && !result.best_checkpoint.empty()) {
      Graph g = load_checkpoint(result.best_checkpoint);
      EvalResult ev = evaluate_testset(g, m, SsimVariant::Windowed);
      row.psnr = ev.psnr;
      row.ssim = ev.ssim;
    }
    rows.push_back(std::move(row));
  }

  BenchOutcome out;
  out.timing = time_report(timing);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].ts_percent = out.timing.rows[i].ts_percent;
  }
  out.rows = rows;

  if (!out_prefix.empty()) {
    emit_report(rows, out_prefix + ".csv", out_prefix + ".json");
    std::ofstream txt(out_prefix + "_timing.txt", std::ios::trunc);
    txt << out.timing.formatted();
  }
  return out;
}

ImageRecord denoise_image(Graph& g, const ImageRecord& rec) {
  Tensor x = Tensor::from_buffer({1, 1, rec.height, rec.width}, rec.pixels, DType::F32);
  ForwardOptions opts;
  opts.training = false;
  auto heads = g.forward(x, opts);
  const Tensor& pred = Graph::inference_head(heads);

  ImageRecord out;
  out.id = rec.id;
  out.width = rec.width;
  out.height = rec.height;
  out.pixels.resize(rec.pixels.size());
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = std::min(std::max(pred.data()[i], 0.0), 1.0);
  }
  return out;
}

void cmd_render(const RenderOptions& opts) {
  if (opts.ids.empty()) throw ConfigError("render: need at least one id");
  DatasetManifest m = load_manifest(opts.manifest_path);
  validate_manifest(m, /*require_noisy=*/true);

  std::set<std::string> known;
  for (const auto& r : m.records) known.insert(r.id);
  for (const auto& id : opts.ids) {
    if (!known.count(id)) throw ConfigError("render: unknown id " + id);
  }

  Graph unet = load_checkpoint(opts.unet_checkpoint);
  Graph unetpp = load_checkpoint(opts.unetpp_checkpoint);
  if (unet.config().arch != Arch::UNet || unetpp.config().arch != Arch::UNetPP) {
    throw ConfigError("render: pass a unet checkpoint then a unetpp checkpoint");
  }

  std::vector<std::vector<ImageRecord>> rows;
  for (const auto& id : opts.ids) {
    const ManifestRecord& rec = m.record(id);
    ImageRecord noisy = decode_image(rec.noisy);
    ImageRecord clean = decode_image(rec.clean);
    rows.push_back({noisy, denoise_image(unet, noisy), denoise_image(unetpp, noisy), clean});
  }
  encode_image(render_grid(rows), opts.out_path);
}

}  // namespace medden
