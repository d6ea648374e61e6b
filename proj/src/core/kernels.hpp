/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include "core/tensor.hpp"

namespace medden {

// 2-D convolution, cross-correlation convention (no kernel flip), zero
// padding. weight is [Cout, Cin, Kh, Kw], bias is [Cout].
// Output extent: (H + 2*padding - Kh) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);

// Transposed convolution with stride 2, kernel 2, no padding: the adjoint of
// the matching conv2d applied as a forward map, so the output extent exactly
// doubles. weight is [Cin, Cout, 2, 2] (input channels first), bias [Cout].
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// 2x2 max pooling with stride 2; H and W must be even. Backward routes the
// gradient to the argmax, ties broken to the first element in row-major
// window order.
Tensor maxpool2d(const Tensor& x);

// Factor-2 bilinear upsampling with half-pixel centers and edge clamping:
// output (i,j) samples the input at ((i+0.5)/2 - 0.5, (j+0.5)/2 - 0.5).
// Linear, so backward is the transposed scatter.
Tensor bilinear_upsample2d(const Tensor& x);

// The shared sampling rule, exposed for the image resizer: dst(i,j) samples
// src at ((i+0.5)*sh/dh - 0.5, (j+0.5)*sw/dw - 0.5), clamped, H*W row-major
// single plane. Pure and tape-free.
void bilinear_resample_plane(const double* src, std::int64_t sh, std::int64_t sw, double* dst,
                             std::int64_t dh, std::int64_t dw);

// Batch normalization over [N,C,H,W]. Train mode normalizes with per-channel
// biased batch statistics and, when update_running is set, moves running
// stats by `momentum` toward them. Eval mode normalizes with running stats
// and never mutates them. gamma/beta are [C] parameters; running_mean/var are
// [C] buffers mutated in place.
struct BatchNormOpts {
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;
  bool update_running = true;
};
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOpts& opts);

// Mean absolute error over all elements; subgradient at ties is zero.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

}  // namespace medden
