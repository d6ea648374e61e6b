/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/models.hpp"
#include "core/optim.hpp"

namespace medden {

enum class TrainMode { Single, DP, DDP };

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainSeeds {
  std::uint64_t init = 1;
  std::uint64_t data = 2;
  std::uint64_t noise = 3;
};

struct TrainConfig {
  ModelConfig model;
  TrainMode mode = TrainMode::Single;
  int workers = 1;  // execution contexts; 1 for single mode
  bool amp = false;
  int epochs = 50;
  int batch_per_worker = 16;
  double lr = 1e-3;
  TrainSeeds seeds;
  std::optional<int> early_stop_patience;
  bool shuffle = true;
  bool drop_last = false;
  // Run normalization layers on running statistics even while training; the
  // gradient-equivalence harness needs batch-independent normalization.
  bool freeze_norm = false;
  // Checkpoints and the training log land here; empty disables file output.
  std::string out_dir;
  // Fault injection: poison one gradient with +inf at this global step
  // (exercises the loss-scaler skip path end to end).
  std::optional<std::int64_t> inject_overflow_step;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
  std::int64_t skipped_steps = 0;
};

struct TrainResult {
  Graph model;  // rank-0 replica after the last epoch
  std::string best_checkpoint;
  std::vector<EpochStats> stats;
  double best_val_loss = 0.0;
  int best_epoch = -1;
  bool early_stopped = false;
};

// Rank-0 observation points used by the equivalence and determinism
// harnesses and by progress reporting. after_grads fires once the step's
// gradients are final (averaged under DP/DDP) and before the optimizer
// touches them.
struct TrainHooks {
  std::function<void(std::int64_t step, Graph& replica0)> after_grads;
  std::function<void(std::int64_t step, Graph& replica0)> after_step;
  std::function<void(const EpochStats&)> on_epoch;
};

// A named flat buffer contributed to an all-reduce.
struct GradView {
  std::string name;
  double* data = nullptr;
  std::int64_t n = 0;
};

// Elementwise mean across workers, summed in fixed rank order 0..K-1 and
// written back to every contribution. Throws DivergenceError when names or
// shapes disagree.
void all_reduce_mean(std::vector<std::vector<GradView>>& workers);

// In-process rendezvous used by the DDP worker threads: all_reduce over the
// contributed views, scalar mean reduction, and a rank-0 broadcast. Any
// worker can abort the group, waking everyone with the failure.
class ReduceChannel {
 public:
  explicit ReduceChannel(int world);

  void all_reduce(int rank, std::vector<GradView> grads);
  double scalar_mean(int rank, double value);
  double broadcast_from0(int rank, double value);
  void abort(std::exception_ptr error);

 private:
  // All slot access happens under the lock: contribute on entry, leader_fn
  // once everyone arrived, collect before each worker leaves.
  void rendezvous(const std::function<void()>& contribute, const std::function<void()>& leader_fn,
                  const std::function<void()>& collect);

  int world_;
  std::mutex mu_;
  std::condition_variable cv_;
  int arrived_ = 0;
  std::uint64_t phase_ = 0;
  std::vector<std::vector<GradView>> slots_;
  std::vector<double> scalars_;
  std::exception_ptr error_;
};

// In-memory (noisy, clean) pixel pairs for one split, in split order.
struct PairSet {
  std::int64_t extent = 0;  // square image side
  std::vector<std::vector<double>> noisy;
  std::vector<std::vector<double>> clean;
  std::size_t size() const { return noisy.size(); }
};

PairSet load_pairs(const DatasetManifest& manifest, const std::vector<std::string>& ids);

Tensor make_batch(const PairSet& pairs, const std::vector<std::int64_t>& indices, bool noisy_side);

// Mean L1 over the split under eval-mode forward, batched deterministically.
double validate(Graph& g, const PairSet& pairs, std::int64_t batch_size);
double validate(Graph& g, const std::vector<std::string>& ids, const DatasetManifest& manifest,
                std::int64_t batch_size);

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg,
                  const TrainHooks* hooks = nullptr);

// ---- timing comparison (the speedup table) ----

struct TimingEntry {
  std::string label;
  std::string model;  // groups rows; the baseline is per group
  double total_seconds = 0.0;
  bool is_baseline = false;
};

struct TimingRow {
  std::string label;
  std::string model;
  double total_seconds = 0.0;
  double ts_percent = 0.0;  // 100 * (1 - t / t_baseline)
};

struct TimingComparison {
  std::vector<TimingRow> rows;
  std::string formatted() const;  // aligned text table, TS with two decimals
};

TimingComparison time_report(const std::vector<TimingEntry>& entries);

}  // namespace medden
