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

#include "core/image_io.hpp"

namespace medden {

struct NoiseSpec {
  double mean = 0.1;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  bool clamp = true;
};

struct ManifestRecord {
  std::string id;
  std::string clean;  // path
  std::string noisy;  // path, empty until the corrupt stage ran
};

struct SplitIds {
  std::vector<std::string> train, val, test;
};

// The site-one -> site-two handoff bundle: which files exist, how they were
// split, and exactly how the noise was produced.
struct DatasetManifest {
  int version = 1;
  std::vector<ManifestRecord> records;
  SplitIds split;
  std::optional<NoiseSpec> noise;
  std::int64_t resize_to = 0;
  std::uint64_t created_seed = 0;

  const ManifestRecord& record(const std::string& id) const;
  bool has_noise() const { return noise.has_value(); }
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
// Splits disjoint and covering, files present; throws on violation.
void validate_manifest(const DatasetManifest& m, bool require_noisy);

// Additive Gaussian obfuscation. The noise stream is keyed by (seed, id), so
// the result is independent of processing order; clamp keeps pixels in [0,1].
ImageRecord corrupt(const ImageRecord& rec, const NoiseSpec& spec);

struct SplitFractions {
  double train = 0.5;
  double val = 0.33;
  double test = 0.17;
};

// Seeded Fisher-Yates shuffle then contiguous slices. val/test counts are
// floor-based; the remainder goes to train.
SplitIds split_dataset(const std::vector<std::string>& ids, const SplitFractions& fractions,
                       std::uint64_t seed);

// Strided shard of [0..n) for one rank: optionally shuffled by (seed, epoch),
// padded by repeating from the front to a multiple of world, then rank r
// takes positions r, r+world, r+2*world, ...
std::vector<std::int64_t> shard_indices(std::int64_t n, int world, int rank, std::int64_t epoch,
                                        bool shuffle, std::uint64_t seed);

std::vector<std::vector<std::int64_t>> make_batches(const std::vector<std::int64_t>& indices,
                                                    std::int64_t batch_size, bool drop_last);

// Deterministic chest-phantom renderer: dark background, bright thorax
// ellipse, periodic rib bands, diaphragm arc; geometry randomized per
// (seed, index).
std::vector<ImageRecord> gen_synthetic_phantoms(int count, std::int64_t size, std::uint64_t seed);

}  // namespace medden
