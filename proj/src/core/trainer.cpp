/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "core/kernels.hpp"

namespace medden {

namespace fs = std::filesystem;
using nlohmann::json;

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Single: return "single";
    case TrainMode::DP: return "dp";
    case TrainMode::DDP: return "ddp";
  }
  return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "single") return TrainMode::Single;
  if (name == "dp") return TrainMode::DP;
  if (name == "ddp") return TrainMode::DDP;
  throw ConfigError("unknown training mode: " + name);
}

// ---- all-reduce ----

namespace {

void check_matching_views(const std::vector<std::vector<GradView>>& workers) {
  for (std::size_t r = 1; r < workers.size(); ++r) {
    if (workers[r].size() != workers[0].size()) {
      throw DivergenceError("all_reduce: worker " + std::to_string(r) + " contributes " +
                            std::to_string(workers[r].size()) + " buffers, rank 0 has " +
                            std::to_string(workers[0].size()));
    }
    for (std::size_t i = 0; i < workers[r].size(); ++i) {
      if (workers[r][i].name != workers[0][i].name || workers[r][i].n != workers[0][i].n) {
        throw DivergenceError("all_reduce: replica divergence at buffer " + workers[0][i].name);
      }
    }
  }
}

}  // namespace

void all_reduce_mean(std::vector<std::vector<GradView>>& workers) {
  if (workers.empty()) return;
  check_matching_views(workers);
  const auto world = workers.size();
  const float inv = 1.0f / static_cast<float>(world);
  for (std::size_t i = 0; i < workers[0].size(); ++i) {
    const std::int64_t n = workers[0][i].n;
    for (std::int64_t j = 0; j < n; ++j) {
      // Fixed rank-order summation keeps every worker's result identical.
      float acc = 0.f;
      for (std::size_t r = 0; r < world; ++r) {
        acc += static_cast<float>(workers[r][i].data[j]);
      }
      const double mean = static_cast<double>(acc * inv);
      for (std::size_t r = 0; r < world; ++r) workers[r][i].data[j] = mean;
    }
  }
}

ReduceChannel::ReduceChannel(int world) : world_(world) {
  if (world < 1) throw ConfigError("ReduceChannel: world size must be positive");
  slots_.resize(static_cast<std::size_t>(world));
  scalars_.resize(static_cast<std::size_t>(world));
}

void ReduceChannel::rendezvous(const std::function<void()>& contribute,
                               const std::function<void()>& leader_fn,
                               const std::function<void()>& collect) {
  std::unique_lock<std::mutex> lock(mu_);
  if (error_) std::rethrow_exception(error_);
  contribute();
  const std::uint64_t my_phase = phase_;
  if (++arrived_ == world_) {
    try {
      leader_fn();
    } catch (...) {
      error_ = std::current_exception();
      arrived_ = 0;
      ++phase_;
      cv_.notify_all();
      std::rethrow_exception(error_);
    }
    arrived_ = 0;
    ++phase_;
    collect();
    cv_.notify_all();
    return;
  }
  cv_.wait(lock, [&] { return phase_ != my_phase || error_ != nullptr; });
  if (error_) std::rethrow_exception(error_);
  collect();
}

void ReduceChannel::all_reduce(int rank, std::vector<GradView> grads) {
  rendezvous([&] { slots_[static_cast<std::size_t>(rank)] = std::move(grads); },
             [this] { medden::all_reduce_mean(slots_); }, [] {});
}

double ReduceChannel::scalar_mean(int rank, double value) {
  double out = 0.0;
  rendezvous([&] { scalars_[static_cast<std::size_t>(rank)] = value; },
             [this] {
               double acc = 0.0;
               for (double v : scalars_) acc += v;
               scalars_.assign(scalars_.size(), acc / static_cast<double>(world_));
             },
             [&] { out = scalars_[static_cast<std::size_t>(rank)]; });
  return out;
}

double ReduceChannel::broadcast_from0(int rank, double value) {
  double out = 0.0;
  rendezvous([&] { scalars_[static_cast<std::size_t>(rank)] = value; },
             [this] { scalars_.assign(scalars_.size(), scalars_[0]); },
             [&] { out = scalars_[static_cast<std::size_t>(rank)]; });
  return out;
}

void ReduceChannel::abort(std::exception_ptr error) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!error_) error_ = std::move(error);
  ++phase_;
  arrived_ = 0;
  cv_.notify_all();
}

// ---- data plumbing ----

PairSet load_pairs(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
  PairSet out;
  for (const auto& id : ids) {
    const ManifestRecord& rec = manifest.record(id);
    ImageRecord clean = decode_image(rec.clean);
    if (rec.noisy.empty()) throw DomainError("record " + id + " has no noisy image yet");
    ImageRecord noisy = decode_image(rec.noisy);
    if (clean.width != clean.height || noisy.width != clean.width || noisy.height != clean.height) {
      throw SizeError("record " + id + ": images must be square and matching");
    }
    if (out.extent == 0) out.extent = clean.width;
    if (clean.width != out.extent) {
      throw SizeError("record " + id + ": extent differs from the rest of the split");
    }
    out.clean.push_back(std::move(clean.pixels));
    out.noisy.push_back(std::move(noisy.pixels));
  }
  return out;
}

Tensor make_batch(const PairSet& pairs, const std::vector<std::int64_t>& indices, bool noisy_side) {
  if (indices.empty()) throw DomainError("make_batch: empty index list");
  const std::int64_t s = pairs.extent;
  std::vector<double> buf(static_cast<std::size_t>(indices.size()) * static_cast<std::size_t>(s * s));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& src = noisy_side ? pairs.noisy[static_cast<std::size_t>(indices[b])]
                                 : pairs.clean[static_cast<std::size_t>(indices[b])];
    std::memcpy(buf.data() + b * static_cast<std::size_t>(s * s), src.data(),
                sizeof(double) * static_cast<std::size_t>(s * s));
  }
  return Tensor::from_buffer({static_cast<std::int64_t>(indices.size()), 1, s, s}, std::move(buf),
                             DType::F32);
}

double validate(Graph& g, const PairSet& pairs, std::int64_t batch_size) {
  if (pairs.size() == 0) throw DomainError("validate: empty split");
  std::vector<std::int64_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

  double weighted = 0.0;
  ForwardOptions opts;
  opts.training = false;
  for (const auto& batch : make_batches(order, batch_size, /*drop_last=*/false)) {
    Tensor x = make_batch(pairs, batch, /*noisy_side=*/true);
    Tensor y = make_batch(pairs, batch, /*noisy_side=*/false);
    auto heads = g.forward(x, opts);
    const double loss = l1_loss(Graph::inference_head(heads), y).at(0);
    weighted += loss * static_cast<double>(batch.size());
  }
  return weighted / static_cast<double>(pairs.size());
}

double validate(Graph& g, const std::vector<std::string>& ids, const DatasetManifest& manifest,
                std::int64_t batch_size) {
  PairSet pairs = load_pairs(manifest, ids);
  return validate(g, pairs, batch_size);
}

// ---- training ----

namespace {

struct StepOutput {
  double loss = 0.0;
  bool skipped = false;
};

std::vector<GradView> grad_views(Graph& g) {
  std::vector<GradView> views;
  views.reserve(g.num_params());
  for (std::size_t i = 0; i < g.num_params(); ++i) {
    auto& slot = g.param(i).grad_slot();
    views.push_back({g.param_name(i), slot.data(), static_cast<std::int64_t>(slot.size())});
  }
  return views;
}

void inject_overflow(Graph& g) {
  g.param(0).grad_slot()[0] = std::numeric_limits<double>::infinity();
}

std::string format_sigma(const DatasetManifest& manifest) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", manifest.noise ? manifest.noise->sigma : 0.0);
  return buf;
}

// Shared state owned by the coordinating code; workers touch it only through
// the channel's synchronization points.
struct TrainShared {
  ReduceChannel channel;
  TrainResult result;
  PairSet train_pairs, val_pairs;
  const DatasetManifest* manifest = nullptr;
  const TrainConfig* cfg = nullptr;
  const TrainHooks* hooks = nullptr;
  std::string sigma_tag;

  explicit TrainShared(int world) : channel(world) {}
};

// One optimizer-step's worth of work on one replica. Returns the local loss.
double replica_forward_backward(Graph& replica, const PairSet& pairs,
                                const std::vector<std::int64_t>& batch, const TrainConfig& cfg,
                                const LossScalerState& scaler, Tape& tape) {
  (void)tape;  // active via construction in the caller
  Tensor x = make_batch(pairs, batch, /*noisy_side=*/true);
  Tensor y = make_batch(pairs, batch, /*noisy_side=*/false);
  ForwardOptions opts;
  opts.training = true;
  opts.frozen_norm = cfg.freeze_norm;
  opts.amp = cfg.amp;
  auto heads = replica.forward(x, opts);
  Tensor loss = replica.head_loss(heads, y);
  scale_and_backward(loss, scaler);
  return loss.at(0);
}

void write_log_line(const std::string& out_dir, const EpochStats& st) {
  if (out_dir.empty()) return;
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::app);
  json j;
  j["epoch"] = st.epoch;
  j["train_loss"] = st.train_loss;
  j["val_loss"] = st.val_loss;
  j["wall_seconds"] = st.wall_seconds;
  j["skipped_steps"] = st.skipped_steps;
  log << j.dump() << '\n';
}

// Epoch-end bookkeeping on rank 0: validation, stats, checkpointing, early
// stop decision. Returns 1.0 when training should stop.
double epoch_end_rank0(TrainShared& sh, Graph& replica, AdamState& adam, LossScalerState& scaler,
                       int epoch, double train_loss, std::int64_t skipped,
                       std::chrono::steady_clock::time_point epoch_start, int& stall_count) {
  const TrainConfig& cfg = *sh.cfg;
  EpochStats st;
  st.epoch = epoch;
  st.train_loss = train_loss;
  st.skipped_steps = skipped;
  st.val_loss = validate(replica, sh.val_pairs, cfg.batch_per_worker);
  st.wall_seconds = std::max(
      1e-9, std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count());
  sh.result.stats.push_back(st);
  write_log_line(cfg.out_dir, st);
  if (sh.hooks && sh.hooks->on_epoch) sh.hooks->on_epoch(st);

  bool improved = sh.result.best_epoch < 0 || st.val_loss < sh.result.best_val_loss;
  if (improved) {
    sh.result.best_val_loss = st.val_loss;
    sh.result.best_epoch = epoch;
    stall_count = 0;
    if (!cfg.out_dir.empty()) {
      CheckpointExtras extras;
      extras.epoch = epoch;
      extras.val_loss = st.val_loss;
      if (sh.manifest->noise) extras.sigma = sh.manifest->noise->sigma;
      for (std::size_t i = 0; i < replica.num_params(); ++i) {
        extras.opt_m.emplace_back(replica.param_name(i), adam.m(i));
        extras.opt_v.emplace_back(replica.param_name(i), adam.v(i));
      }
      extras.opt_step = adam.step_count();
      extras.loss_scale = scaler.scale;
      extras.scale_streak = scaler.good_step_streak;

      char name[128];
      std::snprintf(name, sizeof(name), "%s_%s_%s_%03d.ckpt", arch_name(cfg.model.arch),
                    train_mode_name(cfg.mode), sh.sigma_tag.c_str(), epoch);
      const std::string path = cfg.out_dir + "/" + name;
      save_checkpoint(path, replica, extras);
      fs::copy_file(path, cfg.out_dir + "/best.ckpt", fs::copy_options::overwrite_existing);
      sh.result.best_checkpoint = cfg.out_dir + "/best.ckpt";
    }
  } else {
    ++stall_count;
  }

  if (cfg.early_stop_patience && stall_count >= *cfg.early_stop_patience) {
    sh.result.early_stopped = true;
    return 1.0;
  }
  return 0.0;
}

// DDP worker body: one replica per rank, lock-step all-reduce each step,
// identical optimizer updates everywhere.
void ddp_worker(int rank, TrainShared& sh) {
  const TrainConfig& cfg = *sh.cfg;
  const int world = cfg.workers;

  Graph replica = Graph::build(cfg.model, cfg.seeds.init);
  AdamState adam(replica, cfg.lr);
  LossScalerState scaler;
  scaler.enabled = cfg.amp;

  std::int64_t global_step = 0;
  int stall_count = 0;
  const auto n_train = static_cast<std::int64_t>(sh.train_pairs.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto indices = shard_indices(n_train, world, rank, epoch, cfg.shuffle, cfg.seeds.data);
    const auto batches = make_batches(indices, cfg.batch_per_worker, cfg.drop_last);

    double loss_acc = 0.0;
    std::int64_t skipped = 0;
    for (const auto& batch : batches) {
      Tape tape;
      loss_acc += replica_forward_backward(replica, sh.train_pairs, batch, cfg, scaler, tape);
      if (rank == 0 && cfg.inject_overflow_step && *cfg.inject_overflow_step == global_step) {
        inject_overflow(replica);
      }
      sh.channel.all_reduce(rank, grad_views(replica));
      if (rank == 0 && sh.hooks && sh.hooks->after_grads) {
        sh.hooks->after_grads(global_step, replica);
      }

      if (cfg.amp) {
        if (unscale_check_update(replica, adam, scaler) == StepOutcome::Skipped) ++skipped;
      } else {
        adam_step(replica, adam);
        replica.zero_grads();
      }
      if (rank == 0 && sh.hooks && sh.hooks->after_step) {
        sh.hooks->after_step(global_step, replica);
      }
      ++global_step;
    }

    const double mean_loss =
        sh.channel.scalar_mean(rank, batches.empty() ? 0.0 : loss_acc / static_cast<double>(batches.size()));

    double stop = 0.0;
    if (rank == 0) {
      stop = epoch_end_rank0(sh, replica, adam, scaler, epoch, mean_loss, skipped, epoch_start,
                             stall_count);
    }
    stop = sh.channel.broadcast_from0(rank, stop);
    if (stop > 0.5) break;
  }

  if (rank == 0) sh.result.model = replica;
}

void run_single_or_dp(TrainShared& sh) {
  const TrainConfig& cfg = *sh.cfg;
  const int world = cfg.mode == TrainMode::Single ? 1 : cfg.workers;

  // Replicas are rebuilt from the same seed, never copied.
  std::vector<Graph> replicas;
  replicas.reserve(static_cast<std::size_t>(world));
  for (int r = 0; r < world; ++r) replicas.push_back(Graph::build(cfg.model, cfg.seeds.init));
  AdamState adam(replicas[0], cfg.lr);
  LossScalerState scaler;
  scaler.enabled = cfg.amp;

  std::int64_t global_step = 0;
  int stall_count = 0;
  const auto n_train = static_cast<std::int64_t>(sh.train_pairs.size());
  const std::int64_t global_batch = static_cast<std::int64_t>(world) * cfg.batch_per_worker;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto sequence = shard_indices(n_train, 1, 0, epoch, cfg.shuffle, cfg.seeds.data);
    const auto batches = make_batches(sequence, global_batch, cfg.drop_last);

    double loss_acc = 0.0;
    std::int64_t skipped = 0;
    for (const auto& gbatch : batches) {
      // Contiguous per-replica sub-batches; trailing replicas may sit out a
      // short final batch.
      std::vector<std::vector<std::int64_t>> sub(static_cast<std::size_t>(world));
      const auto chunk = static_cast<std::size_t>(
          (gbatch.size() + static_cast<std::size_t>(world) - 1) / static_cast<std::size_t>(world));
      for (int r = 0; r < world; ++r) {
        const std::size_t lo = std::min(gbatch.size(), static_cast<std::size_t>(r) * chunk);
        const std::size_t hi = std::min(gbatch.size(), lo + chunk);
        sub[static_cast<std::size_t>(r)].assign(gbatch.begin() + static_cast<std::ptrdiff_t>(lo),
                                                gbatch.begin() + static_cast<std::ptrdiff_t>(hi));
      }

      std::vector<double> losses(static_cast<std::size_t>(world), 0.0);
      int active = 0;
      for (int r = 0; r < world; ++r) {
        if (!sub[static_cast<std::size_t>(r)].empty()) ++active;
      }

      if (world == 1) {
        Tape tape;
        losses[0] =
            replica_forward_backward(replicas[0], sh.train_pairs, sub[0], cfg, scaler, tape);
      } else {
        // One execution context per replica for the step.
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
        for (int r = 0; r < world; ++r) {
          if (sub[static_cast<std::size_t>(r)].empty()) continue;
          threads.emplace_back([&, r] {
            try {
              Tape tape;
              losses[static_cast<std::size_t>(r)] = replica_forward_backward(
                  replicas[static_cast<std::size_t>(r)], sh.train_pairs,
                  sub[static_cast<std::size_t>(r)], cfg, scaler, tape);
            } catch (...) {
              errors[static_cast<std::size_t>(r)] = std::current_exception();
            }
          });
        }
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
      }

      // Sum gradients onto replica 0 in rank order, then average; the step
      // runs on replica 0's master parameters only.
      for (std::size_t i = 0; i < replicas[0].num_params(); ++i) {
        auto& g0 = replicas[0].param(i).grad_slot();
        for (std::int64_t jr = 1; jr < active; ++jr) {
          const auto& gr = replicas[static_cast<std::size_t>(jr)].param(i).grad_slot();
          for (std::size_t j = 0; j < g0.size(); ++j) {
            g0[j] = f32r(g0[j] + gr[j]);
          }
        }
        if (active > 1) {
          const float inv = 1.0f / static_cast<float>(active);
          for (double& v : g0) v = static_cast<double>(static_cast<float>(v) * inv);
        }
      }

      if (cfg.inject_overflow_step && *cfg.inject_overflow_step == global_step) {
        inject_overflow(replicas[0]);
      }
      if (sh.hooks && sh.hooks->after_grads) sh.hooks->after_grads(global_step, replicas[0]);

      if (cfg.amp) {
        if (unscale_check_update(replicas[0], adam, scaler) == StepOutcome::Skipped) ++skipped;
      } else {
        adam_step(replicas[0], adam);
        replicas[0].zero_grads();
      }

      // Parameter (and buffer) broadcast back to the other replicas.
      for (int r = 1; r < world; ++r) {
        replicas[static_cast<std::size_t>(r)].copy_values_from(replicas[0],
                                                               /*include_buffers=*/true);
        replicas[static_cast<std::size_t>(r)].zero_grads();
      }
      if (sh.hooks && sh.hooks->after_step) sh.hooks->after_step(global_step, replicas[0]);

      double lsum = 0.0;
      for (int r = 0; r < active; ++r) lsum += losses[static_cast<std::size_t>(r)];
      loss_acc += lsum / std::max(1, active);
      ++global_step;
    }

    const double mean_loss = batches.empty() ? 0.0 : loss_acc / static_cast<double>(batches.size());
    const double stop = epoch_end_rank0(sh, replicas[0], adam, scaler, epoch, mean_loss, skipped,
                                        epoch_start, stall_count);
    if (stop > 0.5) break;
  }

  sh.result.model = replicas[0];
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainHooks* hooks) {
  if (cfg.workers < 1) throw ConfigError("train: workers must be at least 1");
  if (cfg.mode == TrainMode::Single && cfg.workers != 1) {
    throw ConfigError("train: single mode runs exactly one worker");
  }
  if (cfg.batch_per_worker < 1) throw ConfigError("train: batch_per_worker must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (manifest.split.train.empty()) throw DomainError("train: empty train split");
  if (manifest.split.val.empty()) throw DomainError("train: empty val split");

  const int world = cfg.mode == TrainMode::Single ? 1 : cfg.workers;
  TrainShared sh(world);
  sh.manifest = &manifest;
  sh.cfg = &cfg;
  sh.hooks = hooks;
  sh.sigma_tag = format_sigma(manifest);

  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  // Dataset preparation happens before any clock starts.
  sh.train_pairs = load_pairs(manifest, manifest.split.train);
  sh.val_pairs = load_pairs(manifest, manifest.split.val);

  if (cfg.mode == TrainMode::DDP) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
    for (int r = 0; r < world; ++r) {
      threads.emplace_back([&, r] {
        try {
          ddp_worker(r, sh);
        } catch (...) {
          errors[static_cast<std::size_t>(r)] = std::current_exception();
          sh.channel.abort(std::current_exception());
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) {
        try {
          std::rethrow_exception(e);
        } catch (const Error&) {
          throw;
        } catch (const std::exception& ex) {
          throw DivergenceError(std::string("training aborted: worker failed: ") + ex.what());
        }
      }
    }
  } else {
    run_single_or_dp(sh);
  }

  return std::move(sh.result);
}

// ---- timing report ----

TimingComparison time_report(const std::vector<TimingEntry>& entries) {
  TimingComparison out;
  for (const auto& e : entries) {
    if (!e.is_baseline) continue;
    for (const auto& other : entries) {
      if (other.model == e.model && other.is_baseline && &other != &e) {
        throw ConfigError("time_report: multiple baselines for model " + e.model);
      }
    }
  }
  for (const auto& e : entries) {
    const TimingEntry* baseline = nullptr;
    for (const auto& b : entries) {
      if (b.model == e.model && b.is_baseline) {
        baseline = &b;
        break;
      }
    }
    if (!baseline) throw ConfigError("time_report: no baseline for model " + e.model);
    if (baseline->total_seconds <= 0.0) {
      throw ConfigError("time_report: baseline time must be positive");
    }
    TimingRow row;
    row.label = e.label;
    row.model = e.model;
    row.total_seconds = e.total_seconds;
    row.ts_percent = 100.0 * (1.0 - e.total_seconds / baseline->total_seconds);
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string TimingComparison::formatted() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %-10s %12s %9s\n", "config", "model", "TT (s)", "TS (%)");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-28s %-10s %12.1f %8.2f%%\n", r.label.c_str(),
                  r.model.c_str(), r.total_seconds, r.ts_percent);
    os << line;
  }
  return os.str();
}

}  // namespace medden
