/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/optim.hpp"

#include <cmath>

namespace medden {

AdamState::AdamState(const Graph& g, double lr_) : lr(lr_) {
  m_.resize(g.num_params());
  v_.resize(g.num_params());
  for (std::size_t i = 0; i < g.num_params(); ++i) {
    m_[i].assign(static_cast<std::size_t>(g.param(i).numel()), 0.0);
    v_[i].assign(static_cast<std::size_t>(g.param(i).numel()), 0.0);
  }
}

void adam_step(Graph& g, AdamState& s) {
  if (s.m_.size() != g.num_params()) throw ContractError("adam_step: state does not match graph");

  // Master parameters are F32; every stage rounds through binary32 so the
  // update is reproducible independent of surrounding code.
  const float lr = static_cast<float>(s.lr);
  const float b1 = static_cast<float>(s.beta1);
  const float b2 = static_cast<float>(s.beta2);
  const float eps = static_cast<float>(s.eps);

  const std::int64_t t = s.step_count_ + 1;
  const float bc1 = 1.0f - static_cast<float>(std::pow(s.beta1, static_cast<double>(t)));
  const float bc2 = 1.0f - static_cast<float>(std::pow(s.beta2, static_cast<double>(t)));

  for (std::size_t i = 0; i < g.num_params(); ++i) {
    Tensor& p = g.param(i);
    if (!p.has_grad()) throw ContractError("adam_step: missing gradient for " + g.param_name(i));
    const std::vector<double>& grad = p.grad();
    std::vector<double>& m = s.m_[i];
    std::vector<double>& v = s.v_[i];
    double* w = p.mutable_data();
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const float gj = static_cast<float>(grad[j]);
      if (!std::isfinite(gj)) {
        throw ContractError("adam_step: non-finite gradient for " + g.param_name(i));
      }
      const float mj = b1 * static_cast<float>(m[j]) + (1.0f - b1) * gj;
      const float vj = b2 * static_cast<float>(v[j]) + (1.0f - b2) * gj * gj;
      m[j] = static_cast<double>(mj);
      v[j] = static_cast<double>(vj);
      const float mhat = mj / bc1;
      const float vhat = vj / bc2;
      w[j] = static_cast<double>(static_cast<float>(w[j]) - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
  s.step_count_ = t;
}

std::vector<Tensor> autocast_forward(Graph& g, const Tensor& batch, bool amp, bool training,
                                     bool frozen_norm) {
  ForwardOptions opts;
  opts.training = training;
  opts.frozen_norm = frozen_norm;
  opts.amp = amp;
  return g.forward(batch, opts);
}

void scale_and_backward(const Tensor& loss, const LossScalerState& sc) {
  backward(loss, sc.effective_scale());
}

StepOutcome unscale_check_update(Graph& g, AdamState& s, LossScalerState& sc) {
  const double scale = sc.effective_scale();
  bool finite = true;
  for (std::size_t i = 0; i < g.num_params() && finite; ++i) {
    Tensor& p = g.param(i);
    if (!p.has_grad()) throw ContractError("unscale_check_update: missing gradient");
    for (double v : p.grad()) {
      if (!std::isfinite(v)) {
        finite = false;
        break;
      }
    }
  }

  if (!finite) {
    if (sc.enabled) {
      sc.scale *= sc.backoff_factor;
      sc.good_step_streak = 0;
    }
    g.zero_grads();
    return StepOutcome::Skipped;
  }

  if (scale != 1.0) {
    const float inv = 1.0f / static_cast<float>(scale);
    for (std::size_t i = 0; i < g.num_params(); ++i) {
      for (double& v : g.param(i).grad_slot()) {
        v = static_cast<double>(static_cast<float>(v) * inv);
      }
    }
  }
  adam_step(g, s);
  if (sc.enabled) {
    if (++sc.good_step_streak >= sc.growth_interval) {
      sc.scale *= sc.growth_factor;
      sc.good_step_streak = 0;
    }
  }
  g.zero_grads();
  return StepOutcome::Applied;
}

}  // namespace medden
