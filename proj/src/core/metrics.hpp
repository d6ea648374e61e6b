/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/models.hpp"

namespace medden {

// 10*log10(max_val^2 / MSE) in dB; identical images yield +infinity, which
// aggregation excludes (with a count) rather than capping.
double psnr(const std::vector<double>& a, const std::vector<double>& b, double max_val = 1.0);

enum class SsimVariant { Global, Windowed };

const char* ssim_variant_name(SsimVariant v);
SsimVariant ssim_variant_from_name(const std::string& name);

// Structural similarity with C1=(0.01L)^2, C2=(0.03L)^2, L=1. The global
// variant evaluates the formula once over the whole image with biased
// (co)variances; the windowed variant averages it under an 11x11 Gaussian
// window (sigma 1.5), valid region only, and needs extents >= 11.
double ssim(const std::vector<double>& a, const std::vector<double>& b, std::int64_t h,
            std::int64_t w, SsimVariant variant);

// Mean and 1.96 * s / sqrt(n) with the sample standard deviation (n-1).
std::pair<double, double> confidence_interval(const std::vector<double>& values);

struct MetricSummary {
  std::string metric;
  std::int64_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double ci95 = 0.0;
  std::vector<std::pair<std::string, double>> per_image;
};

MetricSummary summarize_metric(const std::string& metric,
                               const std::vector<std::pair<std::string, double>>& values);

struct EvalResult {
  MetricSummary psnr;
  MetricSummary ssim;
  SsimVariant variant = SsimVariant::Windowed;
  std::int64_t psnr_inf_excluded = 0;
  // e.g. "PSNR 34.95 (±0.04) dB   SSIM 0.9168 (±0.0008)"
  std::string formatted() const;
};

// Runs the model over the test split: predict from noisy, clamp to [0,1],
// score both metrics against clean.
EvalResult evaluate_testset(Graph& g, const DatasetManifest& manifest, SsimVariant variant,
                            std::int64_t batch_size = 8);

// 4-column comparison grid (noisy | unet | unetpp | clean per row) with
// 2-pixel white separators; tiles are clamped to [0,1].
ImageRecord render_grid(const std::vector<std::vector<ImageRecord>>& rows);

struct ReportRow {
  double noise_level = 0.0;
  std::string model;
  std::string mode;
  int workers = 1;
  bool amp = false;
  MetricSummary psnr;
  MetricSummary ssim;
  std::optional<double> train_seconds;
  std::optional<double> ts_percent;
};

// CSV (fixed column set) plus a JSON mirror carrying per-image values.
void emit_report(const std::vector<ReportRow>& rows, const std::string& csv_path,
                 const std::string& json_path);

}  // namespace medden
