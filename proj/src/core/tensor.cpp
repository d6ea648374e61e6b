/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "core/fp16.hpp"

namespace medden {

namespace {

thread_local Tape* tls_current_tape = nullptr;
std::atomic<std::uint64_t> g_tape_gen{1};

// Storage invariant: F32 values are exactly representable in binary32 and
// F16E values in binary16, so later float-precision arithmetic is faithful.
void normalize_values(std::vector<double>& v, DType d) {
  switch (d) {
    case DType::F64:
      break;
    case DType::F32:
      for (double& x : v) x = f32r(x);
      break;
    case DType::F16E:
      for (double& x : v) x = static_cast<double>(round_f16(static_cast<float>(x)));
      break;
  }
}

std::shared_ptr<detail::TensorStorage> make_storage(Shape shape, std::vector<double> values,
                                                    DType dtype, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw SizeError("tensor buffer length " + std::to_string(values.size()) +
                    " does not match shape " + shape_str(shape));
  }
  normalize_values(values, dtype);
  auto st = std::make_shared<detail::TensorStorage>();
  st->shape = std::move(shape);
  st->dtype = dtype;
  st->values = std::move(values);
  st->requires_grad = requires_grad;
  return st;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw SizeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  }
}

}  // namespace

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F64: return "f64";
    case DType::F32: return "f32";
    case DType::F16E: return "f16e";
  }
  return "?";
}

DType dtype_from_name(const std::string& name) {
  if (name == "f64") return DType::F64;
  if (name == "f32") return DType::F32;
  if (name == "f16e") return DType::F16E;
  throw FormatError("unknown dtype name: " + name);
}

DType promote(DType a, DType b) {
  if (a == DType::F64 || b == DType::F64) return DType::F64;
  if (a == DType::F32 || b == DType::F32) return DType::F32;
  return DType::F16E;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 0) throw SizeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  const auto n = shape_numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                             dtype, false));
}

Tensor Tensor::full(Shape shape, double fill, DType dtype) {
  const auto n = shape_numel(shape);
  return Tensor(make_storage(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), fill),
                             dtype, false));
}

Tensor Tensor::from_buffer(Shape shape, std::vector<double> buffer, DType dtype) {
  return Tensor(make_storage(std::move(shape), std::move(buffer), dtype, false));
}

Tensor Tensor::scalar(double value, DType dtype) {
  return Tensor(make_storage({1}, {value}, dtype, false));
}

Tensor Tensor::param(Shape shape, std::vector<double> buffer, DType dtype) {
  return Tensor(make_storage(std::move(shape), std::move(buffer), dtype, true));
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return st_->grad;
}

std::vector<double>& Tensor::grad_slot() {
  if (st_->grad.empty()) st_->grad.assign(st_->values.size(), 0.0);
  return st_->grad;
}

void Tensor::zero_grad() {
  if (st_) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

// ---- Tape ----

Tape::Tape() : gen_(g_tape_gen.fetch_add(1, std::memory_order_relaxed)) {
  prev_ = tls_current_tape;
  tls_current_tape = this;
}

Tape::~Tape() { tls_current_tape = prev_; }

Tape* Tape::current() { return tls_current_tape; }

std::int64_t Tape::node_of(const Tensor& t) {
  if (!t.defined()) return -1;
  detail::TensorStorage* st = t.storage();
  if (st->tape_gen == gen_) return st->node;
  if (!st->requires_grad) return -1;
  // First use of a trainable leaf on this tape.
  TapeNode node;
  node.op = "leaf";
  node.out_numel = t.numel();
  node.leaf = t.shared_storage();
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::int64_t>(nodes_.size() - 1);
  st->node = id;
  st->tape_gen = gen_;
  return id;
}

std::int64_t Tape::record(const char* op, std::vector<std::int64_t> inputs, const Tensor& out,
                          std::function<void(Tape&, const double*)> backward) {
  TapeNode node;
  node.op = op;
  node.inputs = std::move(inputs);
  node.out_numel = out.numel();
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::int64_t>(nodes_.size() - 1);
  out.storage()->node = id;
  out.storage()->tape_gen = gen_;
  return id;
}

double* Tape::grad_buffer(std::int64_t node) {
  auto idx = static_cast<std::size_t>(node);
  if (node_grads_.size() < nodes_.size()) node_grads_.resize(nodes_.size());
  if (node_grads_[idx].empty()) {
    node_grads_[idx].assign(static_cast<std::size_t>(nodes_[idx].out_numel), 0.0);
  }
  return node_grads_[idx].data();
}

void Tape::run_backward(std::int64_t root, double seed) {
  node_grads_.assign(nodes_.size(), {});
  visited_.assign(nodes_.size(), 0);
  grad_buffer(root)[0] = seed;
  last_visits_ = 0;

  for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (node_grads_[idx].empty()) continue;  // not reached from the root
    if (visited_[idx]) throw ContractError("tape node visited twice");
    visited_[idx] = 1;
    ++last_visits_;

    TapeNode& node = nodes_[idx];
    if (node.backward) node.backward(*this, node_grads_[idx].data());
    if (node.leaf) {
      // Deposit into the persistent grad slot, accumulating additively.
      // Slots are F32-precision except for F64 tensors.
      detail::TensorStorage* st = node.leaf.get();
      if (st->grad.empty()) st->grad.assign(st->values.size(), 0.0);
      const double* buf = node_grads_[idx].data();
      if (st->dtype == DType::F64) {
        for (std::size_t j = 0; j < st->grad.size(); ++j) st->grad[j] += buf[j];
      } else {
        for (std::size_t j = 0; j < st->grad.size(); ++j) {
          st->grad[j] = f32r(st->grad[j] + f32r(buf[j]));
        }
      }
    }
    node_grads_[idx].clear();
    node_grads_[idx].shrink_to_fit();
  }
}

void backward(const Tensor& loss, double seed) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw ContractError("backward: no tape is active");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  detail::TensorStorage* st = loss.storage();
  if (st->tape_gen != tape->generation() || st->node < 0) {
    throw ContractError("backward: loss is not on the active tape");
  }
  tape->run_backward(st->node, seed);
}

// ---- primitive ops ----

namespace {

// Resolve input ids up front (this may create leaf nodes, preserving the
// inputs-precede-node invariant), then decide whether to record at all.
struct OpInputs {
  Tape* tape = nullptr;
  std::vector<std::int64_t> ids;
  bool tracked = false;

  explicit OpInputs(std::initializer_list<const Tensor*> ins) {
    tape = Tape::current();
    if (!tape) return;
    for (const Tensor* t : ins) {
      const auto id = (t && t->defined()) ? tape->node_of(*t) : -1;
      ids.push_back(id);
      tracked = tracked || id >= 0;
    }
  }
};

double apply_ew(EwOp op, double a, double b, DType dt) {
  switch (dt) {
    case DType::F64:
      switch (op) {
        case EwOp::Add: return a + b;
        case EwOp::Sub: return a - b;
        case EwOp::Mul: return a * b;
        case EwOp::Relu: return a > 0.0 ? a : 0.0;
      }
      break;
    case DType::F32: {
      const float fa = static_cast<float>(a), fb = static_cast<float>(b);
      switch (op) {
        case EwOp::Add: return static_cast<double>(fa + fb);
        case EwOp::Sub: return static_cast<double>(fa - fb);
        case EwOp::Mul: return static_cast<double>(fa * fb);
        case EwOp::Relu: return static_cast<double>(fa > 0.f ? fa : 0.f);
      }
      break;
    }
    case DType::F16E: {
      const float fa = static_cast<float>(a), fb = static_cast<float>(b);
      float r = 0.f;
      switch (op) {
        case EwOp::Add: r = fa + fb; break;
        case EwOp::Sub: r = fa - fb; break;
        case EwOp::Mul: r = fa * fb; break;
        case EwOp::Relu: r = fa > 0.f ? fa : 0.f; break;
      }
      return static_cast<double>(round_f16(r));
    }
  }
  return 0.0;
}

}  // namespace

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  const bool binary = op != EwOp::Relu;
  if (binary) {
    if (!b.defined()) throw ContractError("elementwise: binary op needs two inputs");
    check_same_shape(a, b, "elementwise");
  }

  const DType dt = binary ? promote(a.dtype(), b.dtype()) : a.dtype();
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = apply_ew(op, a.at(static_cast<std::int64_t>(i)),
                      binary ? b.at(static_cast<std::int64_t>(i)) : 0.0, dt);
  }
  Tensor result = Tensor::from_buffer(a.shape(), std::move(out), dt);

  OpInputs in = binary ? OpInputs{&a, &b} : OpInputs{&a};
  if (!in.tracked) return result;

  const auto ia = in.ids[0];
  const auto ib = binary ? in.ids[1] : -1;
  switch (op) {
    case EwOp::Add:
      in.tape->record("add", {ia, ib}, result, [ia, ib, n](Tape& t, const double* g) {
        if (ia >= 0) {
          double* d = t.grad_buffer(ia);
          for (std::size_t j = 0; j < n; ++j) d[j] += g[j];
        }
        if (ib >= 0) {
          double* d = t.grad_buffer(ib);
          for (std::size_t j = 0; j < n; ++j) d[j] += g[j];
        }
      });
      break;
    case EwOp::Sub:
      in.tape->record("sub", {ia, ib}, result, [ia, ib, n](Tape& t, const double* g) {
        if (ia >= 0) {
          double* d = t.grad_buffer(ia);
          for (std::size_t j = 0; j < n; ++j) d[j] += g[j];
        }
        if (ib >= 0) {
          double* d = t.grad_buffer(ib);
          for (std::size_t j = 0; j < n; ++j) d[j] -= g[j];
        }
      });
      break;
    case EwOp::Mul:
      in.tape->record("mul", {ia, ib}, result, [ia, ib, a, b, n](Tape& t, const double* g) {
        if (ia >= 0) {
          double* d = t.grad_buffer(ia);
          for (std::size_t j = 0; j < n; ++j) d[j] += g[j] * b.data()[j];
        }
        if (ib >= 0) {
          double* d = t.grad_buffer(ib);
          for (std::size_t j = 0; j < n; ++j) d[j] += g[j] * a.data()[j];
        }
      });
      break;
    case EwOp::Relu:
      // Subgradient at exactly zero is zero.
      in.tape->record("relu", {ia}, result, [ia, a, n](Tape& t, const double* g) {
        if (ia < 0) return;
        double* d = t.grad_buffer(ia);
        for (std::size_t j = 0; j < n; ++j) {
          if (a.data()[j] > 0.0) d[j] += g[j];
        }
      });
      break;
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Mul, a, b); }
Tensor relu(const Tensor& a) { return elementwise(EwOp::Relu, a); }

Tensor mul_scalar(const Tensor& a, double c) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  const DType dt = a.dtype();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = apply_ew(EwOp::Mul, a.data()[i], c, dt);
  }
  Tensor result = Tensor::from_buffer(a.shape(), std::move(out), dt);

  OpInputs in{&a};
  if (!in.tracked) return result;
  const auto ia = in.ids[0];
  in.tape->record("mul_scalar", {ia}, result, [ia, c, n](Tape& t, const double* g) {
    double* d = t.grad_buffer(ia);
    for (std::size_t j = 0; j < n; ++j) d[j] += g[j] * c;
  });
  return result;
}

Tensor cast(const Tensor& t, DType to) {
  const auto n = static_cast<std::size_t>(t.numel());
  std::vector<double> out(t.values());
  Tensor result = Tensor::from_buffer(t.shape(), std::move(out), to);  // normalized on build

  OpInputs in{&t};
  if (!in.tracked) return result;
  const auto it = in.ids[0];
  // Straight-through: the rounding is identity almost everywhere.
  in.tape->record("cast", {it}, result, [it, n](Tape& tape, const double* g) {
    double* d = tape.grad_buffer(it);
    for (std::size_t j = 0; j < n; ++j) d[j] += g[j];
  });
  return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) {
    throw SizeError("concat_channels: inputs must be [N,C,H,W]");
  }
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw SizeError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  }
  const std::int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2), W = a.dim(3);
  const std::int64_t plane = H * W;
  const DType dt = promote(a.dtype(), b.dtype());

  std::vector<double> out(static_cast<std::size_t>(N * (Ca + Cb) * plane));
  for (std::int64_t n = 0; n < N; ++n) {
    double* dst = out.data() + n * (Ca + Cb) * plane;
    std::memcpy(dst, a.data() + n * Ca * plane, sizeof(double) * static_cast<std::size_t>(Ca * plane));
    std::memcpy(dst + Ca * plane, b.data() + n * Cb * plane,
                sizeof(double) * static_cast<std::size_t>(Cb * plane));
  }
  Tensor result = Tensor::from_buffer({N, Ca + Cb, H, W}, std::move(out), dt);

  OpInputs in{&a, &b};
  if (!in.tracked) return result;
  const auto ia = in.ids[0], ib = in.ids[1];
  in.tape->record("concat_channels", {ia, ib}, result,
                  [ia, ib, N, Ca, Cb, plane](Tape& t, const double* g) {
                    for (std::int64_t n = 0; n < N; ++n) {
                      const double* src = g + n * (Ca + Cb) * plane;
                      if (ia >= 0) {
                        double* d = t.grad_buffer(ia) + n * Ca * plane;
                        for (std::int64_t j = 0; j < Ca * plane; ++j) d[j] += src[j];
                      }
                      if (ib >= 0) {
                        double* d = t.grad_buffer(ib) + n * Cb * plane;
                        for (std::int64_t j = 0; j < Cb * plane; ++j) d[j] += src[Ca * plane + j];
                      }
                    }
                  });
  return result;
}

Tensor reduce_mean(const Tensor& t) {
  const auto n = static_cast<std::size_t>(t.numel());
  if (n == 0) throw DomainError("reduce_mean: empty tensor");

  double mean;
  DType out_dt;
  if (t.dtype() == DType::F64) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += t.data()[i];
    mean = acc / static_cast<double>(n);
    out_dt = DType::F64;
  } else {
    float acc = 0.f;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<float>(t.data()[i]);
    mean = static_cast<double>(acc / static_cast<float>(n));
    out_dt = DType::F32;
  }
  Tensor result = Tensor::from_buffer({1}, {mean}, out_dt);

  OpInputs in{&t};
  if (!in.tracked) return result;
  const auto it = in.ids[0];
  const double inv_n = 1.0 / static_cast<double>(n);
  in.tape->record("reduce_mean", {it}, result, [it, n, inv_n](Tape& tape, const double* g) {
    double* d = tape.grad_buffer(it);
    const double share = g[0] * inv_n;
    for (std::size_t j = 0; j < n; ++j) d[j] += share;
  });
  return result;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  if (x.dtype() != DType::F64) throw ContractError("finite_diff_check: x must be F64");

  // Analytic gradient through the tape.
  Tensor xp = Tensor::param(x.shape(), x.values(), DType::F64);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f(xp);
    if (loss.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
    backward(loss);
    analytic = xp.grad();
  }

  // Central differences, one coordinate at a time, away from any tape.
  const auto n = static_cast<std::size_t>(x.numel());
  std::vector<double> base = x.values();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from_buffer(x.shape(), std::move(plus), DType::F64)).at(0);
    const double fm = f(Tensor::from_buffer(x.shape(), std::move(minus), DType::F64)).at(0);
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max(1e-8, std::abs(analytic[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace medden
