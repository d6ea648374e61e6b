/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/metrics.hpp"
#include "core/trainer.hpp"

namespace medden {

// The operator-facing stages: prepare -> corrupt -> train -> evaluate ->
// bench -> render. Each is deterministic given its options and seeds.

struct PrepareOptions {
  std::string input_dir;    // scanned for .pgm/.png when synthetic_count == 0
  int synthetic_count = 0;  // > 0 generates phantoms instead
  std::int64_t size = 256;
  SplitFractions splits;
  std::uint64_t seed = 42;
  std::string out_dir;
  std::string manifest_path;  // defaults to <out_dir>/manifest.json
  std::string image_format = "pgm";
};

DatasetManifest cmd_prepare(const PrepareOptions& opts);

struct CorruptOptions {
  std::string manifest_path;
  double mean = 0.1;
  double sigma = 0.1;
  std::uint64_t seed = 7;
  bool clamp = true;
};

DatasetManifest cmd_corrupt(const CorruptOptions& opts);

TrainResult cmd_train(const std::string& manifest_path, const TrainConfig& cfg,
                      const TrainHooks* hooks = nullptr);

struct EvaluateOptions {
  std::string manifest_path;
  std::string checkpoint;
  SsimVariant variant = SsimVariant::Windowed;
  std::string out_prefix;  // writes <prefix>.csv and <prefix>.json when set
};

EvalResult cmd_evaluate(const EvaluateOptions& opts);

struct BenchOutcome {
  TimingComparison timing;
  std::vector<ReportRow> rows;
};

// Runs every configuration in the JSON config file against one manifest and
// compares wall-clock totals against the flagged baselines.
BenchOutcome cmd_bench(const std::string& manifest_path, const std::string& configs_path,
                       const std::string& out_prefix);

struct RenderOptions {
  std::string manifest_path;
  std::string unet_checkpoint;
  std::string unetpp_checkpoint;
  std::vector<std::string> ids;
  std::string out_path;
};

void cmd_render(const RenderOptions& opts);

// Single-image inference helper (also the C API's model handle entry point).
ImageRecord denoise_image(Graph& g, const ImageRecord& rec);

}  // namespace medden
