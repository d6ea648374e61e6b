/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/models.hpp"
#include "core/tensor.hpp"

namespace medden {

// Adam with bias correction over a Graph's parameters. Moments are F32
// master-precision buffers mirroring each parameter; step_count advances only
// when a step is actually applied.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const Graph& g, double lr = 1e-3);

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::int64_t step_count() const { return step_count_; }
  const std::vector<double>& m(std::size_t i) const { return m_[i]; }
  const std::vector<double>& v(std::size_t i) const { return v_[i]; }
  std::vector<double>& m(std::size_t i) { return m_[i]; }
  std::vector<double>& v(std::size_t i) { return v_[i]; }
  std::size_t slots() const { return m_.size(); }
  void set_step_count(std::int64_t s) { step_count_ = s; }

  friend void adam_step(Graph& g, AdamState& s);

 private:
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_count_ = 0;
};

// One Adam update from the parameters' populated grad slots. Grads are left
// untouched; the caller zeroes them. Non-finite grads are a contract
// violation here (the AMP path filters first).
void adam_step(Graph& g, AdamState& s);

// Dynamic loss scaling: start at 2^16, halve on overflow, double after 2000
// consecutive clean steps.
struct LossScalerState {
  double scale = 65536.0;
  std::int64_t growth_interval = 2000;
  double growth_factor = 2.0;
  double backoff_factor = 0.5;
  std::int64_t good_step_streak = 0;
  bool enabled = true;  // false runs the plain path (scale pinned to 1)

  double effective_scale() const { return enabled ? scale : 1.0; }
};

// Forward with the autocast policy applied (convolutions through binary16,
// everything else in F32). With amp off this is bitwise the plain forward.
std::vector<Tensor> autocast_forward(Graph& g, const Tensor& batch, bool amp, bool training = true,
                                     bool frozen_norm = false);

// Backward on loss * scale; grads then hold scaled values.
void scale_and_backward(const Tensor& loss, const LossScalerState& sc);

enum class StepOutcome { Applied, Skipped };

// Unscale grads, skip the step (and back off the scale) if any gradient is
// non-finite, otherwise apply Adam and advance the growth streak. Grads are
// zeroed on both branches. Overflow is a normal outcome, not an error.
StepOutcome unscale_check_update(Graph& g, AdamState& s, LossScalerState& sc);

}  // namespace medden
