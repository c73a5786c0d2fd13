#pragma once

// Minimal define-by-run reverse-mode differentiation over dense row-major
// double tensors.
//
// Operations record themselves on the thread's active Tape when at least one
// input requires gradients. Without an active tape every op is a plain
// forward computation, which is what evaluation code uses.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deco/error.hpp"

namespace deco::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  // Leaves that require grad own a zero-initialised buffer from construction.
  // Interior nodes get one lazily during backward and drop it afterwards
  // unless retain_grad is set.
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool retain_grad = false;
  std::uint64_t tape_id = 0;
  std::int64_t node_id = -1;

  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  // Writable access for parameters updated in place by optimizers. Never use
  // on a tensor that already appears on a live tape.
  std::span<double> mutable_values() { return impl_->values; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void retain_grad() { impl_->retain_grad = true; }

  std::int64_t node_id() const { return impl_->node_id; }
  std::uint64_t tape_id() const { return impl_->tape_id; }

  double item() const;
  double at(std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t row, std::size_t col) const;

  // Copy of the values as a fresh leaf that does not require grad.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Called during backward with the output gradient; accumulates into inputs.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct TapeNode {
  std::string_view op;
  std::shared_ptr<TensorImpl> output;
  std::vector<std::int64_t> input_ids;  // -1 for leaves
  BackwardFn backward;
};

/// Records operations while alive and active. Construction pushes the tape on
/// a per-thread stack; destruction pops it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Seeds root with gradient 1 and runs every recorded node in reverse.
  /// Each node is visited at most once; afterwards the tape is consumed.
  void backward(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t id() const { return id_; }
  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

  /// Hook for op authors.
  void record(std::string_view op, const Tensor& output, std::span<const Tensor> inputs,
              BackwardFn backward);

 private:
  std::vector<TapeNode> nodes_;
  std::uint64_t id_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

/// Backward on the active tape.
void backward(const Tensor& root);

/// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Builds an output tensor, validates finiteness and records it when any
/// input requires grad. Used by every op, including those outside this file.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::span<const Tensor> inputs, BackwardFn backward);

// ---------------------------------------------------------------------------
// Op set.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices);

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> argmax;  // position along the reduced axis, lowest index on ties
};
MaxResult max_reduce(const Tensor& a, std::size_t axis);
Tensor mean_reduce(const Tensor& a, std::size_t axis);
Tensor sum_reduce(const Tensor& a, std::size_t axis);
Tensor broadcast_to(const Tensor& a, const Shape& shape);

// Structural helpers used to compose the layers.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a);

/// out[i, c] = max_j a[table[i*k + j], c]. Equivalent to index_select on
/// rows, a reshape to [rows, k, C] and max_reduce over axis 1, without
/// materialising the gathered tensor.
MaxResult neighbor_max(const Tensor& a, std::span<const std::uint32_t> table, std::size_t k);

/// Sum of every element, shape {1}.
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

/// x @ w + b, with b broadcast along rows. w is [in, out], b is [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---------------------------------------------------------------------------
// Test oracle: max over coordinates of |analytic - central difference| /
// max(1, |analytic|).

using ScalarFn = std::function<Tensor(const Tensor&)>;
double finite_difference_check(const ScalarFn& f, const Tensor& x, double step);

}  // namespace deco::ad
