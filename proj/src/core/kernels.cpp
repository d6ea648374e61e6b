/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace medden {

namespace {

// Accumulation precision: F32 for F32/F16E tensors, F64 only when an input
// is F64 (the oracle path). Elementwise reads widen stored values exactly.
DType acc_dtype(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

struct ConvDims {
  std::int64_t N, Cin, H, W;
  std::int64_t Cout, KH, KW;
  std::int64_t stride, pad;
  std::int64_t OH, OW;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  if (x.rank() != 4) throw SizeError("conv2d: input must be [N,Cin,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw SizeError("conv2d: weight must be [Cout,Cin,Kh,Kw]");
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw SizeError("conv2d: bias must be [Cout]");
  if (x.dim(1) != w.dim(1)) {
    throw SizeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                    " do not match weight channels " + std::to_string(w.dim(1)));
  }
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");

  ConvDims d;
  d.N = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = w.dim(0);
  d.KH = w.dim(2);
  d.KW = w.dim(3);
  d.stride = stride;
  d.pad = padding;
  if (d.H + 2 * d.pad < d.KH || d.W + 2 * d.pad < d.KW) {
    throw SizeError("conv2d: kernel larger than padded input");
  }
  d.OH = (d.H + 2 * d.pad - d.KH) / d.stride + 1;
  d.OW = (d.W + 2 * d.pad - d.KW) / d.stride + 1;
  return d;
}

// Unfold one image into [Cin*KH*KW, OH*OW] with zero padding.
template <typename A>
void im2col(const double* x, const ConvDims& d, A* cols) {
  const std::int64_t OHW = d.OH * d.OW;
  for (std::int64_t ci = 0; ci < d.Cin; ++ci) {
    const double* plane = x + ci * d.H * d.W;
    for (std::int64_t kh = 0; kh < d.KH; ++kh) {
      for (std::int64_t kw = 0; kw < d.KW; ++kw) {
        A* row = cols + ((ci * d.KH + kh) * d.KW + kw) * OHW;
        for (std::int64_t oh = 0; oh < d.OH; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad + kh;
          A* dst = row + oh * d.OW;
          if (ih < 0 || ih >= d.H) {
            std::fill(dst, dst + d.OW, A(0));
            continue;
          }
          const double* src = plane + ih * d.W;
          for (std::int64_t ow = 0; ow < d.OW; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad + kw;
            dst[ow] = (iw >= 0 && iw < d.W) ? static_cast<A>(src[iw]) : A(0);
          }
        }
      }
    }
  }
}

template <typename A>
void conv2d_forward(const double* x, const double* w, const double* b, const ConvDims& d,
                    double* out) {
  const std::int64_t K = d.Cin * d.KH * d.KW;
  const std::int64_t OHW = d.OH * d.OW;

  std::vector<A> wbuf(static_cast<std::size_t>(d.Cout * K));
  for (std::size_t i = 0; i < wbuf.size(); ++i) wbuf[i] = static_cast<A>(w[i]);

  static thread_local std::vector<A> cols_scratch;
  static thread_local std::vector<A> acc_scratch;
  cols_scratch.resize(static_cast<std::size_t>(K * OHW));
  acc_scratch.resize(static_cast<std::size_t>(OHW));
  A* cols = cols_scratch.data();
  A* acc = acc_scratch.data();

  for (std::int64_t n = 0; n < d.N; ++n) {
    im2col(x + n * d.Cin * d.H * d.W, d, cols);
    for (std::int64_t co = 0; co < d.Cout; ++co) {
      std::fill(acc, acc + OHW, static_cast<A>(b[co]));
      const A* wrow = wbuf.data() + co * K;
      for (std::int64_t k = 0; k < K; ++k) {
        const A wv = wrow[k];
        if (wv == A(0)) continue;
        const A* crow = cols + k * OHW;
        for (std::int64_t j = 0; j < OHW; ++j) acc[j] += wv * crow[j];
      }
      double* orow = out + (n * d.Cout + co) * OHW;
      for (std::int64_t j = 0; j < OHW; ++j) orow[j] = static_cast<double>(acc[j]);
    }
  }
}

// Accumulates into the provided tape buffers; any of gx/gw/gb may be null.
template <typename A>
void conv2d_backward(const double* x, const double* w, const double* g, const ConvDims& d,
                     double* gx, double* gw, double* gb) {
  const std::int64_t K = d.Cin * d.KH * d.KW;
  const std::int64_t OHW = d.OH * d.OW;

  std::vector<A> wbuf;
  if (gx) {
    wbuf.resize(static_cast<std::size_t>(d.Cout * K));
    for (std::size_t i = 0; i < wbuf.size(); ++i) wbuf[i] = static_cast<A>(w[i]);
  }

  static thread_local std::vector<A> cols_scratch2;
  static thread_local std::vector<A> colg_scratch;
  static thread_local std::vector<A> grow_scratch;
  if (gw) cols_scratch2.resize(static_cast<std::size_t>(K * OHW));
  if (gx) colg_scratch.resize(static_cast<std::size_t>(K * OHW));
  grow_scratch.resize(static_cast<std::size_t>(OHW));

  for (std::int64_t n = 0; n < d.N; ++n) {
    const double* gimg = g + n * d.Cout * OHW;

    if (gw) {
      im2col(x + n * d.Cin * d.H * d.W, d, cols_scratch2.data());
      for (std::int64_t co = 0; co < d.Cout; ++co) {
        const double* grow = gimg + co * OHW;
        A* gr = grow_scratch.data();
        for (std::int64_t j = 0; j < OHW; ++j) gr[j] = static_cast<A>(grow[j]);
        for (std::int64_t k = 0; k < K; ++k) {
          const A* crow = cols_scratch2.data() + k * OHW;
          A acc = A(0);
          for (std::int64_t j = 0; j < OHW; ++j) acc += gr[j] * crow[j];
          gw[co * K + k] += static_cast<double>(acc);
        }
      }
    }

    if (gb) {
      for (std::int64_t co = 0; co < d.Cout; ++co) {
        const double* grow = gimg + co * OHW;
        A acc = A(0);
        for (std::int64_t j = 0; j < OHW; ++j) acc += static_cast<A>(grow[j]);
        gb[co] += static_cast<double>(acc);
      }
    }

    if (gx) {
      A* colg = colg_scratch.data();
      std::fill(colg, colg + K * OHW, A(0));
      for (std::int64_t co = 0; co < d.Cout; ++co) {
        const double* grow = gimg + co * OHW;
        A* gr = grow_scratch.data();
        for (std::int64_t j = 0; j < OHW; ++j) gr[j] = static_cast<A>(grow[j]);
        const A* wrow = wbuf.data() + co * K;
        for (std::int64_t k = 0; k < K; ++k) {
          const A wv = wrow[k];
          if (wv == A(0)) continue;
          A* cg = colg + k * OHW;
          for (std::int64_t j = 0; j < OHW; ++j) cg[j] += wv * gr[j];
        }
      }
      // Fold the column gradient back onto the padded input (col2im).
      double* gimg_x = gx + n * d.Cin * d.H * d.W;
      for (std::int64_t ci = 0; ci < d.Cin; ++ci) {
        for (std::int64_t kh = 0; kh < d.KH; ++kh) {
          for (std::int64_t kw = 0; kw < d.KW; ++kw) {
            const A* cg = colg + ((ci * d.KH + kh) * d.KW + kw) * OHW;
            for (std::int64_t oh = 0; oh < d.OH; ++oh) {
              const std::int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.H) continue;
              for (std::int64_t ow = 0; ow < d.OW; ++ow) {
                const std::int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.W) continue;
                gimg_x[(ci * d.H + ih) * d.W + iw] += static_cast<double>(cg[oh * d.OW + ow]);
              }
            }
          }
        }
      }
    }
  }
}

// Half-pixel-center source coordinate with edge clamping; the single sampling
// rule shared by the upsample kernel and the image resizer.
struct Tap {
  std::int64_t lo, hi;
  double frac;
};

Tap half_pixel_tap(std::int64_t i, std::int64_t in_extent, std::int64_t out_extent) {
  double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in_extent) /
                 static_cast<double>(out_extent) -
             0.5;
  s = std::min(std::max(s, 0.0), static_cast<double>(in_extent - 1));
  Tap t;
  t.lo = static_cast<std::int64_t>(s);
  t.hi = std::min(t.lo + 1, in_extent - 1);
  t.frac = s - static_cast<double>(t.lo);
  return t;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const ConvDims d = conv_dims(x, weight, bias, stride, padding);
  const DType dt = acc_dtype(promote(x.dtype(), weight.dtype()), bias.dtype());

  std::vector<double> out(static_cast<std::size_t>(d.N * d.Cout * d.OH * d.OW));
  if (dt == DType::F64) {
    conv2d_forward<double>(x.data(), weight.data(), bias.data(), d, out.data());
  } else {
    conv2d_forward<float>(x.data(), weight.data(), bias.data(), d, out.data());
  }
  Tensor result = Tensor::from_buffer({d.N, d.Cout, d.OH, d.OW}, std::move(out), dt);

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ix = tape->node_of(x), iw = tape->node_of(weight), ib = tape->node_of(bias);
  if (ix < 0 && iw < 0 && ib < 0) return result;

  tape->record("conv2d", {ix, iw, ib}, result,
               [x, weight, d, dt, ix, iw, ib](Tape& t, const double* g) {
                 double* gx = ix >= 0 ? t.grad_buffer(ix) : nullptr;
                 double* gw = iw >= 0 ? t.grad_buffer(iw) : nullptr;
                 double* gb = ib >= 0 ? t.grad_buffer(ib) : nullptr;
                 if (dt == DType::F64) {
                   conv2d_backward<double>(x.data(), weight.data(), g, d, gx, gw, gb);
                 } else {
                   conv2d_backward<float>(x.data(), weight.data(), g, d, gx, gw, gb);
                 }
               });
  return result;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4) throw SizeError("conv_transpose2d: input must be [N,Cin,H,W]");
  if (weight.rank() != 4) throw SizeError("conv_transpose2d: weight must be [Cin,Cout,2,2]");
  if (weight.dim(2) != 2 || weight.dim(3) != 2) {
    throw ConfigError("conv_transpose2d: only kernel 2, stride 2, padding 0 is supported");
  }
  if (x.dim(1) != weight.dim(0)) {
    throw SizeError("conv_transpose2d: input channels " + std::to_string(x.dim(1)) +
                    " do not match weight channels " + std::to_string(weight.dim(0)));
  }
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != Cout) throw SizeError("conv_transpose2d: bias must be [Cout]");
  const std::int64_t OH = 2 * H, OW = 2 * W;
  const DType dt = acc_dtype(promote(x.dtype(), weight.dtype()), bias.dtype());

  // Stride equals kernel, so each output cell receives exactly one tap:
  // out[n,co,2h+u,2w+v] = b[co] + sum_ci x[n,ci,h,w] * w[ci,co,u,v].
  std::vector<double> out(static_cast<std::size_t>(N * Cout * OH * OW));
  auto run_fwd = [&](auto acc_tag) {
    using A = decltype(acc_tag);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t co = 0; co < Cout; ++co) {
        double* oplane = out.data() + (n * Cout + co) * OH * OW;
        const A bv = static_cast<A>(bias.data()[co]);
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          const std::int64_t h = oh >> 1, u = oh & 1;
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            const std::int64_t w = ow >> 1, v = ow & 1;
            A acc = bv;
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
              acc += static_cast<A>(x.data()[((n * Cin + ci) * H + h) * W + w]) *
                     static_cast<A>(weight.data()[((ci * Cout + co) * 2 + u) * 2 + v]);
            }
            oplane[oh * OW + ow] = static_cast<double>(acc);
          }
        }
      }
    }
  };
  if (dt == DType::F64) run_fwd(double{}); else run_fwd(float{});
  Tensor result = Tensor::from_buffer({N, Cout, OH, OW}, std::move(out), dt);

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ix = tape->node_of(x), iw = tape->node_of(weight), ib = tape->node_of(bias);
  if (ix < 0 && iw < 0 && ib < 0) return result;

  tape->record(
      "conv_transpose2d", {ix, iw, ib}, result,
      [x, weight, N, Cin, Cout, H, W, OH, OW, dt, ix, iw, ib](Tape& t, const double* g) {
        double* gx = ix >= 0 ? t.grad_buffer(ix) : nullptr;
        double* gw = iw >= 0 ? t.grad_buffer(iw) : nullptr;
        double* gb = ib >= 0 ? t.grad_buffer(ib) : nullptr;
        auto run = [&](auto acc_tag) {
          using A = decltype(acc_tag);
          for (std::int64_t n = 0; n < N; ++n) {
            if (gb) {
              for (std::int64_t co = 0; co < Cout; ++co) {
                const double* gp = g + (n * Cout + co) * OH * OW;
                A acc = A(0);
                for (std::int64_t j = 0; j < OH * OW; ++j) acc += static_cast<A>(gp[j]);
                gb[co] += static_cast<double>(acc);
              }
            }
            if (gx) {
              for (std::int64_t ci = 0; ci < Cin; ++ci) {
                for (std::int64_t h = 0; h < H; ++h) {
                  for (std::int64_t w = 0; w < W; ++w) {
                    A acc = A(0);
                    for (std::int64_t co = 0; co < Cout; ++co) {
                      const double* gp = g + (n * Cout + co) * OH * OW;
                      for (std::int64_t u = 0; u < 2; ++u) {
                        for (std::int64_t v = 0; v < 2; ++v) {
                          acc += static_cast<A>(gp[(2 * h + u) * OW + 2 * w + v]) *
                                 static_cast<A>(weight.data()[((ci * Cout + co) * 2 + u) * 2 + v]);
                        }
                      }
                    }
                    gx[((n * Cin + ci) * H + h) * W + w] += static_cast<double>(acc);
                  }
                }
              }
            }
            if (gw) {
              for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const double* xp = x.data() + (n * Cin + ci) * H * W;
                for (std::int64_t co = 0; co < Cout; ++co) {
                  const double* gp = g + (n * Cout + co) * OH * OW;
                  for (std::int64_t u = 0; u < 2; ++u) {
                    for (std::int64_t v = 0; v < 2; ++v) {
                      A acc = A(0);
                      for (std::int64_t h = 0; h < H; ++h) {
                        for (std::int64_t w = 0; w < W; ++w) {
                          acc += static_cast<A>(xp[h * W + w]) *
                                 static_cast<A>(gp[(2 * h + u) * OW + 2 * w + v]);
                        }
                      }
                      gw[((ci * Cout + co) * 2 + u) * 2 + v] += static_cast<double>(acc);
                    }
                  }
                }
              }
            }
          }
        };
        if (dt == DType::F64) run(double{}); else run(float{});
      });
  return result;
}

Tensor maxpool2d(const Tensor& x) {
  if (x.rank() != 4) throw SizeError("maxpool2d: input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw SizeError("maxpool2d: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::int64_t OH = H / 2, OW = W / 2;

  std::vector<double> out(static_cast<std::size_t>(N * C * OH * OW));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (std::int64_t p = 0; p < N * C; ++p) {
    const double* plane = x.data() + p * H * W;
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      for (std::int64_t ow = 0; ow < OW; ++ow) {
        // Ties go to the first element in row-major window order.
        std::int64_t best = (2 * oh) * W + 2 * ow;
        double bv = plane[best];
        const std::int64_t cands[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                       (2 * oh + 1) * W + 2 * ow + 1};
        for (std::int64_t c : cands) {
          if (plane[c] > bv) {
            bv = plane[c];
            best = c;
          }
        }
        out[static_cast<std::size_t>(p * OH * OW + oh * OW + ow)] = bv;
        (*argmax)[static_cast<std::size_t>(p * OH * OW + oh * OW + ow)] = p * H * W + best;
      }
    }
  }
  Tensor result = Tensor::from_buffer({N, C, OH, OW}, std::move(out), x.dtype());

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ix = tape->node_of(x);
  if (ix < 0) return result;
  tape->record("maxpool2d", {ix}, result, [ix, argmax](Tape& t, const double* g) {
    double* gx = t.grad_buffer(ix);
    for (std::size_t j = 0; j < argmax->size(); ++j) gx[(*argmax)[j]] += g[j];
  });
  return result;
}

void bilinear_resample_plane(const double* src, std::int64_t sh, std::int64_t sw, double* dst,
                             std::int64_t dh, std::int64_t dw) {
  std::vector<Tap> xt(static_cast<std::size_t>(dw));
  for (std::int64_t j = 0; j < dw; ++j) xt[static_cast<std::size_t>(j)] = half_pixel_tap(j, sw, dw);
  for (std::int64_t i = 0; i < dh; ++i) {
    const Tap ty = half_pixel_tap(i, sh, dh);
    const double* r0 = src + ty.lo * sw;
    const double* r1 = src + ty.hi * sw;
    for (std::int64_t j = 0; j < dw; ++j) {
      const Tap& tx = xt[static_cast<std::size_t>(j)];
      const double top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
      const double bot = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
      dst[i * dw + j] = top + (bot - top) * ty.frac;
    }
  }
}

Tensor bilinear_upsample2d(const Tensor& x) {
  if (x.rank() != 4) throw SizeError("bilinear_upsample2d: input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = 2 * H, OW = 2 * W;
  const DType dt = x.dtype() == DType::F64 ? DType::F64 : DType::F32;

  std::vector<double> out(static_cast<std::size_t>(N * C * OH * OW));
  auto run_fwd = [&](auto acc_tag) {
    using A = decltype(acc_tag);
    std::vector<Tap> yt(static_cast<std::size_t>(OH)), xt(static_cast<std::size_t>(OW));
    for (std::int64_t i = 0; i < OH; ++i) yt[static_cast<std::size_t>(i)] = half_pixel_tap(i, H, OH);
    for (std::int64_t j = 0; j < OW; ++j) xt[static_cast<std::size_t>(j)] = half_pixel_tap(j, W, OW);
    for (std::int64_t p = 0; p < N * C; ++p) {
      const double* plane = x.data() + p * H * W;
      double* oplane = out.data() + p * OH * OW;
      for (std::int64_t i = 0; i < OH; ++i) {
        const Tap& ty = yt[static_cast<std::size_t>(i)];
        const A fy = static_cast<A>(ty.frac);
        for (std::int64_t j = 0; j < OW; ++j) {
          const Tap& tx = xt[static_cast<std::size_t>(j)];
          const A fx = static_cast<A>(tx.frac);
          const A v00 = static_cast<A>(plane[ty.lo * W + tx.lo]);
          const A v01 = static_cast<A>(plane[ty.lo * W + tx.hi]);
          const A v10 = static_cast<A>(plane[ty.hi * W + tx.lo]);
          const A v11 = static_cast<A>(plane[ty.hi * W + tx.hi]);
          const A top = v00 + (v01 - v00) * fx;
          const A bot = v10 + (v11 - v10) * fx;
          oplane[i * OW + j] = static_cast<double>(top + (bot - top) * fy);
        }
      }
    }
  };
  if (dt == DType::F64) run_fwd(double{}); else run_fwd(float{});
  Tensor result = Tensor::from_buffer({N, C, OH, OW}, std::move(out), dt);

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ix = tape->node_of(x);
  if (ix < 0) return result;

  // Linear map: backward scatters each output gradient onto its four taps
  // with the forward weights.
  tape->record("bilinear_upsample2d", {ix}, result, [ix, N, C, H, W, OH, OW](Tape& t, const double* g) {
    double* gx = t.grad_buffer(ix);
    std::vector<Tap> yt(static_cast<std::size_t>(OH)), xt(static_cast<std::size_t>(OW));
    for (std::int64_t i = 0; i < OH; ++i) yt[static_cast<std::size_t>(i)] = half_pixel_tap(i, H, OH);
    for (std::int64_t j = 0; j < OW; ++j) xt[static_cast<std::size_t>(j)] = half_pixel_tap(j, W, OW);
    for (std::int64_t p = 0; p < N * C; ++p) {
      const double* gplane = g + p * OH * OW;
      double* gxp = gx + p * H * W;
      for (std::int64_t i = 0; i < OH; ++i) {
        const Tap& ty = yt[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < OW; ++j) {
          const Tap& tx = xt[static_cast<std::size_t>(j)];
          const double gv = gplane[i * OW + j];
          gxp[ty.lo * W + tx.lo] += gv * (1.0 - ty.frac) * (1.0 - tx.frac);
          gxp[ty.lo * W + tx.hi] += gv * (1.0 - ty.frac) * tx.frac;
          gxp[ty.hi * W + tx.lo] += gv * ty.frac * (1.0 - tx.frac);
          gxp[ty.hi * W + tx.hi] += gv * ty.frac * tx.frac;
        }
      }
    }
  });
  return result;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                   Tensor& running_var, const BatchNormOpts& opts) {
  if (x.rank() != 4) throw SizeError("batchnorm2d: input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C) {
    throw SizeError("batchnorm2d: per-channel parameter size mismatch");
  }
  const std::int64_t m = N * H * W;
  if (opts.training && m < 2) {
    throw DomainError("batchnorm2d: train mode needs at least 2 values per channel");
  }
  const DType dt = x.dtype() == DType::F64 ? DType::F64 : DType::F32;

  // Statistics used for normalization this call (batch or running).
  auto mean_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));
  auto var_c = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));

  if (opts.training) {
    for (std::int64_t c = 0; c < C; ++c) {
      if (dt == DType::F64) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* plane = x.data() + (n * C + c) * H * W;
          for (std::int64_t j = 0; j < H * W; ++j) acc += plane[j];
        }
        const double mu = acc / static_cast<double>(m);
        double vacc = 0.0;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* plane = x.data() + (n * C + c) * H * W;
          for (std::int64_t j = 0; j < H * W; ++j) {
            const double dv = plane[j] - mu;
            vacc += dv * dv;
          }
        }
        (*mean_c)[static_cast<std::size_t>(c)] = mu;
        (*var_c)[static_cast<std::size_t>(c)] = vacc / static_cast<double>(m);
      } else {
        // Row-partial float accumulation keeps the error down at batch scale.
        float acc = 0.f;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* plane = x.data() + (n * C + c) * H * W;
          for (std::int64_t i = 0; i < H; ++i) {
            float row = 0.f;
            for (std::int64_t j = 0; j < W; ++j) row += static_cast<float>(plane[i * W + j]);
            acc += row;
          }
        }
        const float mu = acc / static_cast<float>(m);
        float vacc = 0.f;
        for (std::int64_t n = 0; n < N; ++n) {
          const double* plane = x.data() + (n * C + c) * H * W;
          for (std::int64_t i = 0; i < H; ++i) {
            float row = 0.f;
            for (std::int64_t j = 0; j < W; ++j) {
              const float dv = static_cast<float>(plane[i * W + j]) - mu;
              row += dv * dv;
            }
            vacc += row;
          }
        }
        (*mean_c)[static_cast<std::size_t>(c)] = static_cast<double>(mu);
        (*var_c)[static_cast<std::size_t>(c)] = static_cast<double>(vacc / static_cast<float>(m));
      }
    }
    if (opts.update_running) {
      double* rm = running_mean.mutable_data();
      double* rv = running_var.mutable_data();
      for (std::int64_t c = 0; c < C; ++c) {
        // Running stats track the biased batch statistics.
        rm[c] = f32r((1.0 - opts.momentum) * rm[c] + opts.momentum * (*mean_c)[static_cast<std::size_t>(c)]);
        rv[c] = f32r((1.0 - opts.momentum) * rv[c] + opts.momentum * (*var_c)[static_cast<std::size_t>(c)]);
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      (*mean_c)[static_cast<std::size_t>(c)] = running_mean.data()[c];
      (*var_c)[static_cast<std::size_t>(c)] = running_var.data()[c];
    }
  }

  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  auto run_norm = [&](auto acc_tag) {
    using A = decltype(acc_tag);
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double* plane = x.data() + (n * C + c) * H * W;
        double* oplane = out.data() + (n * C + c) * H * W;
        const A mu = static_cast<A>((*mean_c)[static_cast<std::size_t>(c)]);
        const A inv = A(1) / std::sqrt(static_cast<A>((*var_c)[static_cast<std::size_t>(c)]) +
                                       static_cast<A>(opts.eps));
        const A gm = static_cast<A>(gamma.data()[c]);
        const A bt = static_cast<A>(beta.data()[c]);
        for (std::int64_t j = 0; j < H * W; ++j) {
          oplane[j] = static_cast<double>((static_cast<A>(plane[j]) - mu) * inv * gm + bt);
        }
      }
    }
  };
  if (dt == DType::F64) run_norm(double{}); else run_norm(float{});
  Tensor result = Tensor::from_buffer(x.shape(), std::move(out), dt);

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ix = tape->node_of(x), ig = tape->node_of(gamma), ib = tape->node_of(beta);
  if (ix < 0 && ig < 0 && ib < 0) return result;

  const bool batch_stats = opts.training;
  const double eps = opts.eps;
  tape->record(
      "batchnorm2d", {ix, ig, ib}, result,
      [x, gamma, mean_c, var_c, batch_stats, eps, N, C, H, W, m, ix, ig, ib](Tape& t,
                                                                             const double* g) {
        double* gx = ix >= 0 ? t.grad_buffer(ix) : nullptr;
        double* gg = ig >= 0 ? t.grad_buffer(ig) : nullptr;
        double* gb = ib >= 0 ? t.grad_buffer(ib) : nullptr;
        const std::int64_t HW = H * W;
        for (std::int64_t c = 0; c < C; ++c) {
          const double mu = (*mean_c)[static_cast<std::size_t>(c)];
          const double inv = 1.0 / std::sqrt((*var_c)[static_cast<std::size_t>(c)] + eps);
          const double gm = gamma.data()[c];

          double sum_g = 0.0, sum_g_xhat = 0.0, sum_gx_centered = 0.0, sum_centered = 0.0;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* xp = x.data() + (n * C + c) * HW;
            const double* gp = g + (n * C + c) * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              const double centered = xp[j] - mu;
              sum_g += gp[j];
              sum_g_xhat += gp[j] * centered * inv;
              sum_gx_centered += gp[j] * centered;
              sum_centered += centered;
            }
          }
          if (gg) gg[c] += sum_g_xhat;
          if (gb) gb[c] += sum_g;
          if (!gx) continue;

          if (!batch_stats) {
            // Running statistics are constants w.r.t. x.
            for (std::int64_t n = 0; n < N; ++n) {
              const double* gp = g + (n * C + c) * HW;
              double* gxp = gx + (n * C + c) * HW;
              for (std::int64_t j = 0; j < HW; ++j) gxp[j] += gp[j] * gm * inv;
            }
            continue;
          }

          const double md = static_cast<double>(m);
          const double dvar = gm * sum_gx_centered * (-0.5) * inv * inv * inv;
          const double dmean = -gm * inv * sum_g + dvar * (-2.0 / md) * sum_centered;
          for (std::int64_t n = 0; n < N; ++n) {
            const double* xp = x.data() + (n * C + c) * HW;
            const double* gp = g + (n * C + c) * HW;
            double* gxp = gx + (n * C + c) * HW;
            for (std::int64_t j = 0; j < HW; ++j) {
              gxp[j] += gm * inv * gp[j] + dvar * 2.0 * (xp[j] - mu) / md + dmean / md;
            }
          }
        }
      });
  return result;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw SizeError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                    shape_str(target.shape()));
  }
  const auto n = static_cast<std::size_t>(pred.numel());
  if (n == 0) throw DomainError("l1_loss: empty tensors");
  const DType dt = acc_dtype(pred.dtype(), target.dtype());

  double loss;
  if (dt == DType::F64) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(pred.data()[i] - target.data()[i]);
    loss = acc / static_cast<double>(n);
  } else {
    float acc = 0.f;
    for (std::size_t i = 0; i < n; ++i) {
      acc += std::abs(static_cast<float>(pred.data()[i]) - static_cast<float>(target.data()[i]));
    }
    loss = static_cast<double>(acc / static_cast<float>(n));
  }
  Tensor result = Tensor::from_buffer({1}, {loss}, dt);

  Tape* tape = Tape::current();
  if (!tape) return result;
  const auto ip = tape->node_of(pred), it = tape->node_of(target);
  if (ip < 0 && it < 0) return result;

  const double inv_n = 1.0 / static_cast<double>(n);
  tape->record("l1_loss", {ip, it}, result, [pred, target, ip, it, n, inv_n](Tape& t, const double* g) {
    double* gp = ip >= 0 ? t.grad_buffer(ip) : nullptr;
    double* gt = it >= 0 ? t.grad_buffer(it) : nullptr;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = pred.data()[j] - target.data()[j];
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      const double v = g[0] * s * inv_n;
      if (gp) gp[j] += v;
      if (gt) gt[j] -= v;
    }
  });
  return result;
}

}  // namespace medden
