/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "core/kernels.hpp"
#include "core/trainer.hpp"

namespace medden {

using nlohmann::json;

double psnr(const std::vector<double>& a, const std::vector<double>& b, double max_val) {
  if (a.size() != b.size() || a.empty()) throw SizeError("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

const char* ssim_variant_name(SsimVariant v) {
  return v == SsimVariant::Global ? "global" : "windowed";
}

SsimVariant ssim_variant_from_name(const std::string& name) {
  if (name == "global") return SsimVariant::Global;
  if (name == "windowed") return SsimVariant::Windowed;
  throw ConfigError("unknown ssim variant: " + name);
}

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

double ssim_formula(double mu_a, double mu_b, double var_a, double var_b, double cov) {
  return ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
}

double ssim_global(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const double mu_a = sa / n, mu_b = sb / n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mu_a, db = b[i] - mu_b;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  return ssim_formula(mu_a, mu_b, va / n, vb / n, cov / n);
}

// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
const std::vector<double>& gaussian_window11() {
  static const std::vector<double> w = [] {
    std::vector<double> out(11 * 11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      for (int j = 0; j < 11; ++j) {
        const double dy = i - 5, dx = j - 5;
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
        out[static_cast<std::size_t>(i * 11 + j)] = v;
        sum += v;
      }
    }
    for (double& v : out) v /= sum;
    return out;
  }();
  return w;
}

double ssim_windowed(const std::vector<double>& a, const std::vector<double>& b, std::int64_t h,
                     std::int64_t w) {
  if (h < 11 || w < 11) throw SizeError("ssim: windowed variant needs extents of at least 11");
  const auto& win = gaussian_window11();
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t cy = 5; cy <= h - 6; ++cy) {
    for (std::int64_t cx = 5; cx <= w - 6; ++cx) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wij = win[static_cast<std::size_t>(i * 11 + j)];
          const std::size_t idx = static_cast<std::size_t>((cy + i - 5) * w + (cx + j - 5));
          mu_a += wij * a[idx];
          mu_b += wij * b[idx];
        }
      }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
          const double wij = win[static_cast<std::size_t>(i * 11 + j)];
          const std::size_t idx = static_cast<std::size_t>((cy + i - 5) * w + (cx + j - 5));
          const double da = a[idx] - mu_a, db = b[idx] - mu_b;
          va += wij * da * da;
          vb += wij * db * db;
          cov += wij * da * db;
        }
      }
      total += ssim_formula(mu_a, mu_b, va, vb, cov);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

double ssim(const std::vector<double>& a, const std::vector<double>& b, std::int64_t h,
            std::int64_t w, SsimVariant variant) {
  if (a.size() != b.size() || static_cast<std::int64_t>(a.size()) != h * w || a.empty()) {
    throw SizeError("ssim: shape mismatch");
  }
  return variant == SsimVariant::Global ? ssim_global(a, b) : ssim_windowed(a, b, h, w);
}

std::pair<double, double> confidence_interval(const std::vector<double>& values) {
  if (values.size() < 2) throw DomainError("confidence_interval: need at least 2 values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * s / std::sqrt(n)};
}

MetricSummary summarize_metric(const std::string& metric,
                               const std::vector<std::pair<std::string, double>>& values) {
  MetricSummary out;
  out.metric = metric;
  out.per_image = values;
  out.n = static_cast<std::int64_t>(values.size());
  if (values.empty()) return out;
  std::vector<double> plain;
  plain.reserve(values.size());
  for (const auto& [id, v] : values) plain.push_back(v);
  if (plain.size() == 1) {
    out.mean = plain[0];
    return out;
  }
  const auto [mean, ci] = confidence_interval(plain);
  double ss = 0.0;
  for (double v : plain) ss += (v - mean) * (v - mean);
  out.mean = mean;
  out.stddev = std::sqrt(ss / (static_cast<double>(plain.size()) - 1.0));
  out.ci95 = ci;
  return out;
}

std::string EvalResult::formatted() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "PSNR %.2f (±%.2f) dB   SSIM %.4f (±%.4f)   [%s, n=%lld%s]",
                psnr.mean, psnr.ci95, ssim.mean, ssim.ci95, ssim_variant_name(variant),
                static_cast<long long>(ssim.n),
                psnr_inf_excluded
                    ? (", " + std::to_string(psnr_inf_excluded) + " inf PSNR excluded").c_str()
                    : "");
  return buf;
}

EvalResult evaluate_testset(Graph& g, const DatasetManifest& manifest, SsimVariant variant,
                            std::int64_t batch_size) {
  if (manifest.split.test.empty()) throw DomainError("evaluate_testset: empty test split");

  PairSet pairs = load_pairs(manifest, manifest.split.test);
  const std::int64_t s = pairs.extent;

  std::vector<std::pair<std::string, double>> psnr_vals, ssim_vals;
  std::int64_t inf_excluded = 0;

  std::vector<std::int64_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

  ForwardOptions opts;
  opts.training = false;
  for (const auto& batch : make_batches(order, batch_size, /*drop_last=*/false)) {
    Tensor x = make_batch(pairs, batch, /*noisy_side=*/true);
    auto heads = g.forward(x, opts);
    const Tensor& pred = Graph::inference_head(heads);

    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto idx = static_cast<std::size_t>(batch[b]);
      const std::string& id = manifest.split.test[idx];
      std::vector<double> out(static_cast<std::size_t>(s * s));
      const double* src = pred.data() + static_cast<std::int64_t>(b) * s * s;
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::min(std::max(src[i], 0.0), 1.0);
      }
      const double p = psnr(out, pairs.clean[idx]);
      if (std::isinf(p)) {
        ++inf_excluded;
      } else {
        psnr_vals.emplace_back(id, p);
      }
      ssim_vals.emplace_back(id, ssim(out, pairs.clean[idx], s, s, variant));
    }
  }

  EvalResult result;
  result.psnr = summarize_metric("psnr", psnr_vals);
  result.ssim = summarize_metric("ssim", ssim_vals);
  result.variant = variant;
  result.psnr_inf_excluded = inf_excluded;
  return result;
}

ImageRecord render_grid(const std::vector<std::vector<ImageRecord>>& rows) {
  if (rows.empty() || rows[0].empty()) throw DomainError("render_grid: no tiles");
  const std::int64_t th = rows[0][0].height, tw = rows[0][0].width;
  const std::size_t cols = rows[0].size();
  for (const auto& row : rows) {
    if (row.size() != cols) throw SizeError("render_grid: ragged rows");
    for (const auto& tile : row) {
      if (tile.height != th || tile.width != tw) {
        throw SizeError("render_grid: tiles must share one size");
      }
    }
  }

  constexpr std::int64_t kSep = 2;  // white separators
  ImageRecord grid;
  grid.width = static_cast<std::int64_t>(cols) * tw + (static_cast<std::int64_t>(cols) - 1) * kSep;
  grid.height = static_cast<std::int64_t>(rows.size()) * th +
                (static_cast<std::int64_t>(rows.size()) - 1) * kSep;
  grid.pixels.assign(static_cast<std::size_t>(grid.width * grid.height), 1.0);

  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& tile = rows[r][c];
      const std::int64_t oy = static_cast<std::int64_t>(r) * (th + kSep);
      const std::int64_t ox = static_cast<std::int64_t>(c) * (tw + kSep);
      for (std::int64_t y = 0; y < th; ++y) {
        for (std::int64_t x = 0; x < tw; ++x) {
          const double v = tile.pixels[static_cast<std::size_t>(y * tw + x)];
          grid.pixels[static_cast<std::size_t>((oy + y) * grid.width + ox + x)] =
              std::min(std::max(v, 0.0), 1.0);
        }
      }
    }
  }
  return grid;
}

void emit_report(const std::vector<ReportRow>& rows, const std::string& csv_path,
                 const std::string& json_path) {
  {
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write report: " + csv_path);
    csv << "noise_level,model,mode,workers,amp,psnr_mean,psnr_ci,ssim_mean,ssim_ci,"
           "train_seconds,ts_percent\n";
    char line[512];
    for (const auto& r : rows) {
      std::string tail;
      if (r.train_seconds) {
        std::snprintf(line, sizeof(line), "%.3f", *r.train_seconds);
        tail += line;
      }
      tail += ",";
      if (r.ts_percent) {
        std::snprintf(line, sizeof(line), "%.2f", *r.ts_percent);
        tail += line;
      }
      std::snprintf(line, sizeof(line), "%.4g,%s,%s,%d,%d,%.6f,%.6f,%.6f,%.6f,", r.noise_level,
                    r.model.c_str(), r.mode.c_str(), r.workers, r.amp ? 1 : 0, r.psnr.mean,
                    r.psnr.ci95, r.ssim.mean, r.ssim.ci95);
      csv << line << tail << '\n';
    }
  }

  json j = json::array();
  for (const auto& r : rows) {
    json row;
    row["noise_level"] = r.noise_level;
    row["model"] = r.model;
    row["mode"] = r.mode;
    row["workers"] = r.workers;
    row["amp"] = r.amp;
    auto summary = [](const MetricSummary& s) {
      json m;
      m["metric"] = s.metric;
      m["n"] = s.n;
      m["mean"] = s.mean;
      m["stddev"] = s.stddev;
      m["ci95"] = s.ci95;
      json per = json::array();
      for (const auto& [id, v] : s.per_image) per.push_back({{"id", id}, {"value", v}});
      m["per_image"] = per;
      return m;
    };
    row["psnr"] = summary(r.psnr);
    row["ssim"] = summary(r.ssim);
    if (r.train_seconds) row["train_seconds"] = *r.train_seconds;
    if (r.ts_percent) row["ts_percent"] = *r.ts_percent;
    j.push_back(row);
  }
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + json_path);
  out << j.dump(2) << '\n';
}

}  // namespace medden
