#include "deco/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace deco::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

void check_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, length, inner) for reductions.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_axis(std::string_view op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw IndexError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(a.shape()));
  }
}

Shape reduced_shape(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

template <typename Fn>
Tensor unary(std::string_view op, const Tensor& a, Fn&& forward_and_derivative) {
  const auto n = a.numel();
  std::vector<double> out(n);
  std::vector<double> deriv;
  const bool grad = needs_grad({&a});
  if (grad) deriv.resize(n);
  auto in = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    out[i] = forward_and_derivative(in[i], d);
    if (grad) deriv[i] = d;
  }
  auto ai = a.impl();
  Tensor inputs[] = {a};
  return make_result(op, a.shape(), std::move(out), inputs,
                     [ai, deriv = std::move(deriv)](std::span<const double> g) {
                       if (!ai->requires_grad) return;
                       auto ga = ai->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv[i];
                     });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(ad::numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->values.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw IndexError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->values[row * impl_->shape.back() + col];
}

Tensor Tensor::detach() const { return from(shape(), impl_->values, false); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string_view op, const Tensor& output, std::span<const Tensor> inputs,
                  BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record '" + std::string(op) + "' on a consumed tape");
  TapeNode node;
  node.op = op;
  node.output = output.impl();
  for (const auto& in : inputs) {
    node.input_ids.push_back(in.impl()->tape_id == id_ ? in.impl()->node_id : -1);
  }
  node.backward = std::move(backward);
  output.impl()->tape_id = id_;
  output.impl()->node_id = static_cast<std::int64_t>(nodes_.size());
  output.impl()->is_leaf = false;
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& root) {
  if (consumed_) throw TapeError("backward called twice on a consumed tape");
  if (!root.defined() || root.numel() != 1) {
    throw TapeError("backward root must be scalar, got " +
                    (root.defined() ? to_string(root.shape()) : std::string("undefined")));
  }
  if (root.requires_grad() && root.impl()->is_leaf) {
    root.impl()->grad_buffer()[0] += 1.0;
    consumed_ = true;
    nodes_.clear();
    return;
  }
  if (root.tape_id() != id_ || nodes_.empty()) {
    throw TapeError("backward root was not recorded on this tape");
  }
  root.impl()->grad_buffer()[0] = 1.0;
  for (auto i = root.node_id(); i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    auto& out = *node.output;
    if (out.grad.empty()) continue;
    node.backward(out.grad);
    if (!out.retain_grad) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
  consumed_ = true;
  nodes_.clear();
}

void backward(const Tensor& root) {
  auto* tape = Tape::active();
  if (tape == nullptr) throw TapeError("backward called without an active tape");
  tape->backward(root);
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   std::span<const Tensor> inputs, BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite value in result");
  }
  auto* tape = Tape::active();
  bool record = tape != nullptr &&
                std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (record) {
    out.impl()->requires_grad = true;
    tape->record(op, out, inputs, std::move(backward));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto ai = a.impl(), bi = b.impl();
  Tensor inputs[] = {a, b};
  return make_result("add", a.shape(), std::move(out), inputs, [ai, bi](std::span<const double> g) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto gt = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto ai = a.impl(), bi = b.impl();
  Tensor inputs[] = {a, b};
  return make_result("sub", a.shape(), std::move(out), inputs, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x, double& d) {
    d = factor;
    return x * factor;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto ai = a.impl(), bi = b.impl();
  Tensor inputs[] = {a, b};
  return make_result("mul", a.shape(), std::move(out), inputs, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->values[i];
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->values[i];
    }
  });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x, double& d) {
    d = x > 0.0 ? 1.0 : 0.0;
    return x > 0.0 ? x : 0.0;
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary("leaky_relu", a, [slope](double x, double& d) {
    d = x > 0.0 ? 1.0 : slope;
    return x > 0.0 ? x : slope * x;
  });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x, double& d) {
    const double t = std::tanh(x);
    d = 1.0 - t * t;
    return t;
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x, double& d) {
    if (!std::isfinite(x)) throw NonFiniteError("exp: non-finite input");
    d = std::exp(x);
    return d;
  });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x, double& d) {
    if (!std::isfinite(x)) throw NonFiniteError("log: non-finite input");
    d = 1.0 / x;
    return std::log(x);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  auto ai = a.impl(), bi = b.impl();
  Tensor inputs[] = {a, b};
  return make_result("matmul", {m, n}, std::move(out), inputs, [ai, bi, m, k, n](std::span<const double> g) {
    ConstMap gm(g.data(), m, n);
    if (ai->requires_grad) {
      MutMap(ai->grad_buffer().data(), m, k).noalias() += gm * ConstMap(bi->values.data(), k, n).transpose();
    }
    if (bi->requires_grad) {
      MutMap(bi->grad_buffer().data(), k, n).noalias() += ConstMap(ai->values.data(), m, k).transpose() * gm;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = ConstMap(a.values().data(), m, n).transpose();
  auto ai = a.impl();
  Tensor inputs[] = {a};
  return make_result("transpose", {n, m}, std::move(out), inputs, [ai, m, n](std::span<const double> g) {
    if (!ai->requires_grad) return;
    MutMap(ai->grad_buffer().data(), m, n) += ConstMap(g.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto ai = a.impl();
  Tensor inputs[] = {a};
  return make_result("reshape", std::move(shape), std::move(out), inputs, [ai](std::span<const double> g) {
    if (!ai->requires_grad) return;
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts[0];
  require_axis("concat", first, axis);
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.rank()) {
      throw ShapeError("concat: shape mismatch " + to_string(first.shape()) + " vs " + to_string(p.shape()));
    }
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.shape()[d] != first.shape()[d]) {
        throw ShapeError("concat: shape mismatch " + to_string(first.shape()) + " vs " + to_string(p.shape()));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const auto split = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto len = p.shape()[axis];
    auto pv = p.values();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data() + o * len * split.inner, len * split.inner,
                  out.data() + (o * split.length + offset) * split.inner);
    }
    offset += len;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return make_result("concat", out_shape, std::move(out), parts,
                     [impls, offsets, split](std::span<const double> g) {
                       for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                         auto& t = *impls[pi];
                         if (!t.requires_grad) continue;
                         auto gt = t.grad_buffer();
                         const auto plen = gt.size() / (split.outer * split.inner);
                         for (std::size_t o = 0; o < split.outer; ++o) {
                           const double* src = g.data() + (o * split.length + offsets[pi]) * split.inner;
                           double* dst = gt.data() + o * plen * split.inner;
                           for (std::size_t i = 0; i < plen * split.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices) {
  require_axis("index_select", a, axis);
  const auto split = split_axis(a.shape(), axis);
  for (auto idx : indices) {
    if (idx >= split.length) {
      throw IndexError("index_select: index " + std::to_string(idx) + " out of range for axis of length " +
                       std::to_string(split.length));
    }
  }
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  Shape out_shape = a.shape();
  out_shape[axis] = indices.size();
  const auto count = indices.size();
  std::vector<double> out(numel(out_shape));
  auto av = a.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t j = 0; j < count; ++j) {
      std::copy_n(av.data() + (o * split.length + indices[j]) * split.inner, split.inner,
                  out.data() + (o * count + j) * split.inner);
    }
  }
  auto ai = a.impl();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor inputs[] = {a};
  return make_result("index_select", std::move(out_shape), std::move(out), inputs,
                     [ai, idx = std::move(idx), split](std::span<const double> g) {
                       if (!ai->requires_grad) return;
                       auto ga = ai->grad_buffer();
                       const auto count = idx.size();
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         for (std::size_t j = 0; j < count; ++j) {
                           const double* src = g.data() + (o * count + j) * split.inner;
                           double* dst = ga.data() + (o * split.length + idx[j]) * split.inner;
                           for (std::size_t i = 0; i < split.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  check_shape(shape);
  if (shape.size() < a.rank()) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(a.shape()) + " to " + to_string(shape));
  }
  // Align trailing dimensions; a source extent must equal the target or be 1.
  const auto lead = shape.size() - a.rank();
  Shape src(shape.size(), 1);
  for (std::size_t i = 0; i < a.rank(); ++i) {
    src[lead + i] = a.shape()[i];
    if (src[lead + i] != shape[lead + i] && src[lead + i] != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + to_string(a.shape()) + " to " + to_string(shape));
    }
  }
  const auto rank = shape.size();
  std::vector<std::size_t> src_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    src_stride[d] = src[d] == 1 ? 0 : stride;
    stride *= src[d];
  }
  const auto n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < rank; ++d) s += counter[d] * src_stride[d];
    map[flat] = s;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < shape[d]) break;
      counter[d] = 0;
    }
  }
  std::vector<double> out(n);
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[map[i]];
  auto ai = a.impl();
  Tensor inputs[] = {a};
  return make_result("broadcast_to", shape, std::move(out), inputs,
                     [ai, map = std::move(map)](std::span<const double> g) {
                       if (!ai->requires_grad) return;
                       auto ga = ai->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
                     });
}

// ---------------------------------------------------------------------------
// Reductions

MaxResult max_reduce(const Tensor& a, std::size_t axis) {
  require_axis("max_reduce", a, axis);
  const auto split = split_axis(a.shape(), axis);
  const auto n_out = split.outer * split.inner;
  std::vector<double> out(n_out);
  std::vector<std::size_t> argmax(n_out);
  auto av = a.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t in = 0; in < split.inner; ++in) {
      std::size_t best = 0;
      double best_v = av[o * split.length * split.inner + in];
      for (std::size_t l = 1; l < split.length; ++l) {
        const double v = av[(o * split.length + l) * split.inner + in];
        if (v > best_v) {
          best_v = v;
          best = l;
        }
      }
      out[o * split.inner + in] = best_v;
      argmax[o * split.inner + in] = best;
    }
  }
  auto ai = a.impl();
  Tensor inputs[] = {a};
  auto values = make_result("max_reduce", reduced_shape(a.shape(), axis), std::move(out), inputs,
                            [ai, argmax, split](std::span<const double> g) {
                              if (!ai->requires_grad) return;
                              auto ga = ai->grad_buffer();
                              for (std::size_t o = 0; o < split.outer; ++o) {
                                for (std::size_t in = 0; in < split.inner; ++in) {
                                  const auto r = o * split.inner + in;
                                  ga[(o * split.length + argmax[r]) * split.inner + in] += g[r];
                                }
                              }
                            });
  return {std::move(values), std::move(argmax)};
}

namespace {

Tensor sum_or_mean(std::string_view op, const Tensor& a, std::size_t axis, bool mean) {
  require_axis(op, a, axis);
  const auto split = split_axis(a.shape(), axis);
  const double factor = mean ? 1.0 / static_cast<double>(split.length) : 1.0;
  std::vector<double> out(split.outer * split.inner, 0.0);
  auto av = a.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t l = 0; l < split.length; ++l) {
      const double* src = av.data() + (o * split.length + l) * split.inner;
      double* dst = out.data() + o * split.inner;
      for (std::size_t in = 0; in < split.inner; ++in) dst[in] += src[in];
    }
  }
  if (mean) {
    for (auto& v : out) v *= factor;
  }
  auto ai = a.impl();
  Tensor inputs[] = {a};
  return make_result(op, reduced_shape(a.shape(), axis), std::move(out), inputs,
                     [ai, split, factor](std::span<const double> g) {
                       if (!ai->requires_grad) return;
                       auto ga = ai->grad_buffer();
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         for (std::size_t l = 0; l < split.length; ++l) {
                           double* dst = ga.data() + (o * split.length + l) * split.inner;
                           const double* src = g.data() + o * split.inner;
                           for (std::size_t in = 0; in < split.inner; ++in) dst[in] += factor * src[in];
                         }
                       }
                     });
}

}  // namespace

Tensor mean_reduce(const Tensor& a, std::size_t axis) { return sum_or_mean("mean_reduce", a, axis, true); }

Tensor sum_reduce(const Tensor& a, std::size_t axis) { return sum_or_mean("sum_reduce", a, axis, false); }

MaxResult neighbor_max(const Tensor& a, std::span<const std::uint32_t> table, std::size_t k) {
  if (a.rank() != 2) throw ShapeError("neighbor_max: expected rank 2, got " + to_string(a.shape()));
  if (k == 0 || table.size() % k != 0) throw ShapeError("neighbor_max: table size not a multiple of k");
  const auto rows = table.size() / k;
  const auto n = a.dim(0), c = a.dim(1);
  for (auto idx : table) {
    if (idx >= n) {
      throw IndexError("neighbor_max: index " + std::to_string(idx) + " out of range for " + std::to_string(n) +
                       " rows");
    }
  }
  std::vector<double> out(rows * c);
  std::vector<std::size_t> argmax(rows * c);
  auto av = a.values();
  for (std::size_t i = 0; i < rows; ++i) {
    double* dst = out.data() + i * c;
    std::size_t* arg = argmax.data() + i * c;
    const double* first = av.data() + std::size_t{table[i * k]} * c;
    std::copy_n(first, c, dst);
    std::fill_n(arg, c, 0);
    for (std::size_t j = 1; j < k; ++j) {
      const double* src = av.data() + std::size_t{table[i * k + j]} * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (src[ch] > dst[ch]) {
          dst[ch] = src[ch];
          arg[ch] = j;
        }
      }
    }
  }
  auto ai = a.impl();
  std::vector<std::uint32_t> tbl(table.begin(), table.end());
  Tensor inputs[] = {a};
  auto values = make_result("neighbor_max", {rows, c}, std::move(out), inputs,
                            [ai, tbl = std::move(tbl), argmax, k, c, rows](std::span<const double> g) {
                              if (!ai->requires_grad) return;
                              auto ga = ai->grad_buffer();
                              for (std::size_t i = 0; i < rows; ++i) {
                                for (std::size_t ch = 0; ch < c; ++ch) {
                                  const auto src_row = tbl[i * k + argmax[i * c + ch]];
                                  ga[std::size_t{src_row} * c + ch] += g[i * c + ch];
                                }
                              }
                            });
  return {std::move(values), std::move(argmax)};
}

Tensor sum_all(const Tensor& a) { return sum_reduce(reshape(a, {a.numel()}), 0); }

Tensor mean_all(const Tensor& a) { return mean_reduce(reshape(a, {a.numel()}), 0); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  auto y = matmul(x, w);
  if (b.rank() != 1 || b.dim(0) != y.dim(1)) {
    throw ShapeError("linear: bias shape " + to_string(b.shape()) + " does not match output " + to_string(y.shape()));
  }
  return add(y, broadcast_to(b, y.shape()));
}

// ---------------------------------------------------------------------------

double finite_difference_check(const ScalarFn& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw Error("finite_difference_check: step must be positive");
  auto probe = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
  {
    Tape tape;
    auto out = f(probe);
    if (out.numel() != 1) throw ShapeError("finite_difference_check: function must be scalar-valued");
    if (out.requires_grad()) tape.backward(out);
  }
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());
  double worst = 0.0;
  auto eval_at = [&](std::size_t i, double delta) {
    auto shifted = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
    shifted.mutable_values()[i] += delta;
    const double v = f(shifted).item();
    if (!std::isfinite(v)) throw NonFiniteError("finite_difference_check: non-finite intermediate value");
    return v;
  };
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double numeric = (eval_at(i, step) - eval_at(i, -step)) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace deco::ad
