/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace medden {

enum class Arch { UNet, UNetPP };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ModelConfig {
  Arch arch = Arch::UNet;
  int base_ch = 64;
  int depth = 5;
  int in_ch = 1;
  int out_ch = 1;
  bool deep_supervision = false;  // unetpp only
};

struct ForwardOptions {
  bool training = false;
  // Keep batch statistics out of normalization (eval-style BN inside an
  // otherwise training forward); used by the data-parallel equivalence
  // harness.
  bool frozen_norm = false;
  // Suppress running-stat updates without changing normalization; used by
  // gradient checking, where forward must be a pure function.
  bool update_norm = true;
  // Route convolution inputs and weights through binary16.
  bool amp = false;
};

// Named parameters plus buffers and a forward recipe. Iteration order is the
// registration order, identical across replicas built from the same config.
class Graph {
 public:
  Graph() = default;

  static Graph build(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  // One output per head; training on U-Net++ with deep supervision yields
  // depth-1 heads, every other configuration yields exactly one.
  std::vector<Tensor> forward(const Tensor& batch, const ForwardOptions& opts);

  // Mean L1 across heads against a target (the training objective), and the
  // inference output (deepest head).
  Tensor head_loss(const std::vector<Tensor>& heads, const Tensor& target) const;
  static const Tensor& inference_head(const std::vector<Tensor>& heads);

  std::int64_t param_count() const;

  std::size_t num_params() const { return params_.size(); }
  std::size_t num_buffers() const { return buffers_.size(); }
  const std::string& param_name(std::size_t i) const { return params_[i].first; }
  Tensor& param(std::size_t i) { return params_[i].second; }
  const Tensor& param(std::size_t i) const { return params_[i].second; }
  Tensor& param(const std::string& name);
  const std::string& buffer_name(std::size_t i) const { return buffers_[i].first; }
  Tensor& buffer(std::size_t i) { return buffers_[i].second; }
  const Tensor& buffer(std::size_t i) const { return buffers_[i].second; }
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  void zero_grads();

  // Copy parameter (and optionally buffer) values from another replica of
  // the same config.
  void copy_values_from(const Graph& src, bool include_buffers);

 private:
  friend struct GraphBuilder;

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::map<std::string, std::size_t> param_index_;
  std::map<std::string, std::size_t> buffer_index_;
};

// Spelled-out spec operations.
inline Graph build_unet(const ModelConfig& cfg, std::uint64_t seed) { return Graph::build(cfg, seed); }
inline Graph build_unetpp(const ModelConfig& cfg, std::uint64_t seed) { return Graph::build(cfg, seed); }

// ---- checkpoint format ----
//
//   MDNCKPT1\n
//   <header byte count, ASCII decimal>\n
//   <JSON header>
//   <payload: raw little-endian float32 in header entry order>
//
// The header lists {name, shape, dtype, offset, kind} per tensor, the model
// config, the init seed, and free-form scalar extras. Offsets are relative to
// the payload start. Round-trips are bit-exact for F32 values.

struct CheckpointExtras {
  std::optional<int> epoch;
  std::optional<double> val_loss;
  std::optional<double> sigma;
  // Optimizer slots keyed by parameter name (first moment, second moment)
  // plus scalar optimizer/scaler state; absent when the checkpoint only
  // carries a model.
  std::vector<std::pair<std::string, std::vector<double>>> opt_m;
  std::vector<std::pair<std::string, std::vector<double>>> opt_v;
  std::optional<std::int64_t> opt_step;
  std::optional<double> loss_scale;
  std::optional<std::int64_t> scale_streak;
};

void save_checkpoint(const std::string& path, const Graph& g, const CheckpointExtras& extras);
Graph load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

}  // namespace medden
