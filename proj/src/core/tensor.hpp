/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace medden {

// F16E is software-emulated binary16: values are stored widened but are
// always exactly representable in binary16.
enum class DType : std::uint8_t { F64, F32, F16E };

const char* dtype_name(DType d);
DType dtype_from_name(const std::string& name);

// Promotion order F16E < F32 < F64.
DType promote(DType a, DType b);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

// Value buffer plus the autograd side-slots. The data buffer is immutable
// once the tensor has been handed out; grad and tape linkage are mutable and
// confined to the owning execution context.
struct TensorStorage {
  Shape shape;
  DType dtype = DType::F32;
  std::vector<double> values;

  bool requires_grad = false;
  std::vector<double> grad;  // sized lazily on first accumulation

  // Tape linkage, valid only while tape_gen matches the live tape.
  std::int64_t node = -1;
  std::uint64_t tape_gen = 0;
};

}  // namespace detail

// Value-semantic handle over shared storage. Copies alias the same buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double fill, DType dtype = DType::F32);
  // Takes ownership of the buffer; length must match the shape.
  static Tensor from_buffer(Shape shape, std::vector<double> buffer, DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32);
  // Trainable leaf: participates in backward and owns a persistent grad slot.
  static Tensor param(Shape shape, std::vector<double> buffer, DType dtype = DType::F32);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  std::int64_t dim(std::size_t i) const { return st_->shape[i]; }
  std::size_t rank() const { return st_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(st_->values.size()); }
  DType dtype() const { return st_->dtype; }

  const double* data() const { return st_->values.data(); }
  double at(std::int64_t i) const { return st_->values[static_cast<std::size_t>(i)]; }
  const std::vector<double>& values() const { return st_->values; }

  // In-place access for initializers, the optimizer and broadcast paths.
  // Not for use on tensors that other contexts may be reading.
  double* mutable_data() { return st_->values.data(); }

  bool requires_grad() const { return st_->requires_grad; }
  bool has_grad() const { return st_ && !st_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_slot();  // sized to numel, zero-filled on first use
  void zero_grad();

  detail::TensorStorage* storage() const { return st_.get(); }
  const std::shared_ptr<detail::TensorStorage>& shared_storage() const { return st_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorStorage> st) : st_(std::move(st)) {}
  std::shared_ptr<detail::TensorStorage> st_;
};

// One recorded primitive application. Inputs always precede the node itself.
struct TapeNode {
  const char* op = "";
  std::vector<std::int64_t> inputs;
  std::int64_t out_numel = 0;
  // Adds into the input nodes' grad buffers given this node's grad buffer.
  std::function<void(Tape&, const double*)> backward;
  // Set on leaf nodes: where accumulated gradient is deposited.
  std::shared_ptr<detail::TensorStorage> leaf;
};

// Reverse-mode tape. Constructing a Tape makes it current for this thread;
// destruction restores the previous one. A tape must stay on the thread that
// created it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // Node id for a tensor on this tape: the memoized leaf node for trainable
  // tensors, the recording node for intermediates, -1 for untracked values.
  std::int64_t node_of(const Tensor& t);

  std::int64_t record(const char* op, std::vector<std::int64_t> inputs, const Tensor& out,
                      std::function<void(Tape&, const double*)> backward);

  // Grad buffer for a node, allocated zero-filled on first touch.
  double* grad_buffer(std::int64_t node);

  std::size_t size() const { return nodes_.size(); }
  // Number of nodes whose backward ran during the last backward() call.
  std::size_t last_backward_visits() const { return last_visits_; }

  std::uint64_t generation() const { return gen_; }

  friend void backward(const Tensor& loss, double seed);

 private:
  void run_backward(std::int64_t root, double seed);

  std::vector<TapeNode> nodes_;
  std::vector<std::vector<double>> node_grads_;
  std::vector<char> visited_;
  std::size_t last_visits_ = 0;
  std::uint64_t gen_;
  Tape* prev_ = nullptr;
};

// Fills grad slots of every tracked leaf reachable from `loss`, accumulating
// additively across calls until zero_grad(). `seed` is the upstream gradient
// of the loss itself (loss scaling passes the scale factor here, which is
// exactly backward on loss*scale by linearity).
void backward(const Tensor& loss, double seed = 1.0);

// ---- primitive ops (all tape-aware) ----

enum class EwOp { Add, Sub, Mul, Relu };

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b = Tensor());
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor mul_scalar(const Tensor& a, double c);

// Round values into the target dtype. F32->F16E uses binary16
// round-to-nearest-even; gradient passes through unchanged.
Tensor cast(const Tensor& t, DType to);

// Channel concatenation of [N,C,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Mean over all elements. Accumulates in F32 (F64 for F64 inputs); the
// result of an F16E input is F32.
Tensor reduce_mean(const Tensor& t);

// Max over coordinates of relative error between the analytic gradient of f
// at x and central finite differences with step h. f must be scalar-valued
// and x must be F64. This is the test oracle for every backward rule.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

// Rounds through binary32 (used wherever F32 arithmetic is emulated).
inline double f32r(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace medden
