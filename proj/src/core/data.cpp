/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace medden {

using nlohmann::json;

const ManifestRecord& DatasetManifest::record(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw DomainError("manifest has no record with id " + id);
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  json j;
  j["version"] = m.version;
  json recs = json::array();
  for (const auto& r : m.records) {
    recs.push_back({{"id", r.id}, {"clean", r.clean}, {"noisy", r.noisy}});
  }
  j["records"] = recs;
  j["split"] = {{"train", m.split.train}, {"val", m.split.val}, {"test", m.split.test}};
  if (m.noise) {
    j["noise"] = {{"mean", m.noise->mean},
                  {"sigma", m.noise->sigma},
                  {"seed", m.noise->seed},
                  {"clamp", m.noise->clamp}};
  }
  j["resize_to"] = m.resize_to;
  j["created_seed"] = m.created_seed;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("bad manifest " + path + ": " + e.what());
  }

  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.clean = r.at("clean").get<std::string>();
      rec.noisy = r.value("noisy", std::string());
      m.records.push_back(std::move(rec));
    }
    const auto& s = j.at("split");
    m.split.train = s.at("train").get<std::vector<std::string>>();
    m.split.val = s.at("val").get<std::vector<std::string>>();
    m.split.test = s.at("test").get<std::vector<std::string>>();
    if (j.contains("noise")) {
      NoiseSpec n;
      n.mean = j["noise"].at("mean").get<double>();
      n.sigma = j["noise"].at("sigma").get<double>();
      n.seed = j["noise"].at("seed").get<std::uint64_t>();
      n.clamp = j["noise"].at("clamp").get<bool>();
      m.noise = n;
    }
    m.resize_to = j.at("resize_to").get<std::int64_t>();
    m.created_seed = j.at("created_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path + " is missing fields: " + e.what());
  }
  return m;
}

void validate_manifest(const DatasetManifest& m, bool require_noisy) {
  std::set<std::string> all;
  for (const auto& r : m.records) {
    if (!all.insert(r.id).second) throw FormatError("manifest: duplicate record id " + r.id);
  }
  std::set<std::string> seen;
  auto check_split = [&](const std::vector<std::string>& ids, const char* name) {
    for (const auto& id : ids) {
      if (!all.count(id)) {
        throw FormatError(std::string("manifest: split ") + name + " references unknown id " + id);
      }
      if (!seen.insert(id).second) {
        throw FormatError("manifest: id " + id + " appears in more than one split");
      }
    }
  };
  check_split(m.split.train, "train");
  check_split(m.split.val, "val");
  check_split(m.split.test, "test");
  if (seen.size() != all.size()) {
    throw FormatError("manifest: splits do not cover all records");
  }
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(r.clean)) {
      throw IoError("manifest: missing clean image " + r.clean);
    }
    if (require_noisy) {
      if (r.noisy.empty() || !std::filesystem::exists(r.noisy)) {
        throw IoError("manifest: missing noisy image for id " + r.id);
      }
    }
  }
  if (require_noisy && !m.noise) {
    throw FormatError("manifest: noise parameters not recorded (run the corrupt stage)");
  }
}

ImageRecord corrupt(const ImageRecord& rec, const NoiseSpec& spec) {
  if (spec.sigma < 0.0) throw ConfigError("corrupt: sigma must be non-negative");
  CounterRng rng = CounterRng(spec.seed).split(rec.id);
  ImageRecord out = rec;
  for (double& v : out.pixels) {
    const double n = spec.mean + spec.sigma * rng.next_normal();
    v += n;
    if (spec.clamp) v = std::min(std::max(v, 0.0), 1.0);
  }
  return out;
}

SplitIds split_dataset(const std::vector<std::string>& ids, const SplitFractions& fractions,
                       std::uint64_t seed) {
  if (ids.empty()) throw DomainError("split_dataset: empty id list");
  const double sum = fractions.train + fractions.val + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split_dataset: fractions must sum to 1, got " + std::to_string(sum));
  }
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
    throw ConfigError("split_dataset: fractions must be non-negative");
  }

  std::vector<std::string> shuffled = ids;
  CounterRng rng = CounterRng(seed).split("split");
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next_below(i + 1));
    std::swap(shuffled[i], shuffled[j]);
  }

  const auto n = static_cast<std::int64_t>(shuffled.size());
  const auto n_val = static_cast<std::int64_t>(std::floor(fractions.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::int64_t>(std::floor(fractions.test * static_cast<double>(n)));
  const auto n_train = n - n_val - n_test;  // remainder goes to train

  SplitIds out;
  out.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  out.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
  out.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
  return out;
}

std::vector<std::int64_t> shard_indices(std::int64_t n, int world, int rank, std::int64_t epoch,
                                        bool shuffle, std::uint64_t seed) {
  if (world <= 0) throw ConfigError("shard_indices: world size must be positive");
  if (rank < 0 || rank >= world) throw ConfigError("shard_indices: rank out of range");
  if (n <= 0) return {};

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle) {
    CounterRng rng = CounterRng(seed).split("shard").split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.next_below(i + 1));
      std::swap(order[i], order[j]);
    }
  }

  // Pad to a multiple of world by repeating from the front.
  std::size_t k = 0;
  while (order.size() % static_cast<std::size_t>(world) != 0) {
    order.push_back(order[k % static_cast<std::size_t>(n)]);
    ++k;
  }

  std::vector<std::int64_t> mine;
  mine.reserve(order.size() / static_cast<std::size_t>(world));
  for (std::size_t i = static_cast<std::size_t>(rank); i < order.size();
       i += static_cast<std::size_t>(world)) {
    mine.push_back(order[i]);
  }
  return mine;
}

std::vector<std::vector<std::int64_t>> make_batches(const std::vector<std::int64_t>& indices,
                                                    std::int64_t batch_size, bool drop_last) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be at least 1");
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
    if (drop_last && end - i < static_cast<std::size_t>(batch_size)) break;
    out.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                     indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace {

double smooth_inside(double r2) {
  // 1 at the center, 0 at the boundary, smooth in between.
  if (r2 >= 1.0) return 0.0;
  const double t = 1.0 - r2;
  return t * t * (3.0 - 2.0 * (1.0 - std::sqrt(r2)));
}

}  // namespace

std::vector<ImageRecord> gen_synthetic_phantoms(int count, std::int64_t size, std::uint64_t seed) {
  if (count < 0) throw DomainError("gen_synthetic_phantoms: negative count");
  if (size < 8) throw DomainError("gen_synthetic_phantoms: size too small");

  std::vector<ImageRecord> out;
  out.reserve(static_cast<std::size_t>(count));
  const double S = static_cast<double>(size);

  for (int idx = 0; idx < count; ++idx) {
    CounterRng rng = CounterRng(seed).split("phantom").split(static_cast<std::uint64_t>(idx));

    const double bg = rng.next_uniform(0.03, 0.08);
    const double cx = S * rng.next_uniform(0.46, 0.54);
    const double cy = S * rng.next_uniform(0.48, 0.56);
    const double ax = S * rng.next_uniform(0.30, 0.40);  // thorax semi-axes
    const double ay = S * rng.next_uniform(0.36, 0.45);
    const double body = rng.next_uniform(0.42, 0.55);
    const double lung_dx = ax * rng.next_uniform(0.42, 0.52);
    const double lung_ax = ax * rng.next_uniform(0.34, 0.42);
    const double lung_ay = ay * rng.next_uniform(0.55, 0.70);
    const double lung_drop = rng.next_uniform(0.16, 0.24);
    const double rib_count = rng.next_uniform(4.5, 7.5);
    const double rib_phase = rng.next_uniform(0.0, 6.283185307179586);
    const double rib_amp = rng.next_uniform(0.05, 0.10);
    const double rib_curve = rng.next_uniform(0.25, 0.45);
    const double spine_w = S * rng.next_uniform(0.035, 0.055);
    const double spine_amp = rng.next_uniform(0.08, 0.14);
    const double dia_y = cy + ay * rng.next_uniform(0.55, 0.75);
    const double dia_curve = rng.next_uniform(0.15, 0.35);
    const double dia_amp = rng.next_uniform(0.10, 0.18);
    const double dia_w = S * rng.next_uniform(0.02, 0.04);

    ImageRecord rec;
    rec.id = "phantom_" + std::to_string(idx);
    rec.width = size;
    rec.height = size;
    rec.pixels.resize(static_cast<std::size_t>(size * size));

    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const double px = static_cast<double>(x) + 0.5;
        const double py = static_cast<double>(y) + 0.5;
        double v = bg;

        const double ex = (px - cx) / ax;
        const double ey = (py - cy) / ay;
        const double r2 = ex * ex + ey * ey;
        if (r2 < 1.0) {
          const double inside = smooth_inside(r2);
          v += body * inside;

          // Lung fields darken the upper interior.
          for (int side = -1; side <= 1; side += 2) {
            const double lx = (px - (cx + side * lung_dx)) / lung_ax;
            const double ly = (py - (cy - 0.08 * ay)) / lung_ay;
            const double lr2 = lx * lx + ly * ly;
            if (lr2 < 1.0) v -= lung_drop * smooth_inside(lr2);
          }

          // Rib bands: bright periodic arcs curving downward from the center.
          const double band_coord =
              py / S + rib_curve * (ex * ex) * 0.5;
          const double band = std::sin(6.283185307179586 * rib_count * band_coord + rib_phase);
          if (band > 0.55) v += rib_amp * (band - 0.55) / 0.45 * inside;

          // Diaphragm ridge.
          const double arc = dia_y + dia_curve * (px - cx) * (px - cx) / S - py;
          v += dia_amp * std::exp(-(arc * arc) / (2.0 * dia_w * dia_w)) * inside;
        }

        // Spine column, visible through the mediastinum.
        const double sx = (px - cx) / spine_w;
        if (r2 < 1.0 && std::abs(sx) < 3.0) v += spine_amp * std::exp(-0.5 * sx * sx);

        rec.pixels[static_cast<std::size_t>(y * size + x)] = std::min(std::max(v, 0.0), 1.0);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace medden
