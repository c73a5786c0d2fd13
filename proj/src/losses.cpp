#include "deco/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace deco::loss {

namespace {

struct Nearest {
  std::vector<std::size_t> index;
  double sum = 0.0;
};

// For every row of `from`, the closest row of `to` (lowest index on ties).
Nearest nearest_rows(std::span<const double> from, std::size_t n_from, std::span<const double> to,
                     std::size_t n_to, std::size_t dim) {
  Nearest r;
  r.index.resize(n_from);
  for (std::size_t a = 0; a < n_from; ++a) {
    const double* x = from.data() + a * dim;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_b = 0;
    for (std::size_t b = 0; b < n_to; ++b) {
      const double* y = to.data() + b * dim;
      double d = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = x[c] - y[c];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_b = b;
      }
    }
    r.index[a] = best_b;
    r.sum += best;
  }
  return r;
}

}  // namespace

LossValue mse_denoise(const ad::Tensor& denoised, const ad::Tensor& clean) {
  if (denoised.shape() != clean.shape() || denoised.rank() != 2) {
    throw ShapeError("mse_denoise: shape mismatch " + ad::to_string(denoised.shape()) + " vs " +
                     ad::to_string(clean.shape()));
  }
  auto diff = ad::sub(denoised, clean);
  auto per_point = ad::sum_reduce(ad::mul(diff, diff), 1);
  LossValue out{ad::mean_reduce(per_point, 0), {}};
  out.diagnostics["mse"] = out.value.item();
  return out;
}

LossValue chamfer(const ad::Tensor& pred, const ad::Tensor& gt, std::size_t normalizer) {
  if (pred.rank() != 2 || gt.rank() != 2 || pred.dim(1) != gt.dim(1)) {
    throw ShapeError("chamfer: shape mismatch " + ad::to_string(pred.shape()) + " vs " + ad::to_string(gt.shape()));
  }
  if (normalizer < 1) throw ShapeError("chamfer: normalizer must be at least 1");
  const auto p = pred.dim(0), q = gt.dim(0), dim = pred.dim(1);
  auto gt_to_pred = nearest_rows(gt.values(), q, pred.values(), p, dim);
  auto pred_to_gt = nearest_rows(pred.values(), p, gt.values(), q, dim);
  const double factor = 1.0 / (2.0 * static_cast<double>(normalizer));
  const double value = factor * (gt_to_pred.sum + pred_to_gt.sum);

  auto pi = pred.impl(), gi = gt.impl();
  ad::Tensor inputs[] = {pred, gt};
  auto result = ad::make_result(
      "chamfer", {1}, {value}, inputs,
      [pi, gi, factor, dim, a_idx = std::move(gt_to_pred.index),
       b_idx = std::move(pred_to_gt.index)](std::span<const double> g) {
        const double s = 2.0 * factor * g[0];
        auto pass = [&](ad::TensorImpl& from, ad::TensorImpl& to, const std::vector<std::size_t>& idx) {
          std::span<double> g_from = from.requires_grad ? from.grad_buffer() : std::span<double>{};
          std::span<double> g_to = to.requires_grad ? to.grad_buffer() : std::span<double>{};
          for (std::size_t a = 0; a < idx.size(); ++a) {
            const auto b = idx[a];
            for (std::size_t c = 0; c < dim; ++c) {
              const double diff = from.values[a * dim + c] - to.values[b * dim + c];
              if (!g_from.empty()) g_from[a * dim + c] += s * diff;
              if (!g_to.empty()) g_to[b * dim + c] -= s * diff;
            }
          }
        };
        pass(*gi, *pi, a_idx);
        pass(*pi, *gi, b_idx);
      });
  return {result, {{"chamfer", value}}};
}

LossValue completion_loss(const ad::Tensor& pred_missing, const ad::Tensor& gt_missing, const ad::Tensor& pred_frame,
                          const ad::Tensor& gt_frame) {
  auto missing = chamfer(pred_missing, gt_missing, gt_missing.dim(0));
  LossValue out{missing.value, {{"missing", missing.value.item()}}};
  if (pred_frame.defined() != gt_frame.defined()) {
    throw ShapeError("completion_loss: frame prediction and ground truth must be given together");
  }
  if (pred_frame.defined()) {
    auto frame = chamfer(pred_frame, gt_frame, gt_frame.dim(0));
    out.value = ad::add(out.value, frame.value);
    out.diagnostics["frame"] = frame.value.item();
  }
  out.diagnostics["total"] = out.value.item();
  return out;
}

LossValue nt_xent_grouped(const ad::Tensor& embeddings, std::size_t group_size, double tau) {
  if (embeddings.rank() != 2) throw ShapeError("nt_xent: embeddings must be [B x E]");
  const auto batch = embeddings.dim(0), width = embeddings.dim(1);
  if (group_size < 2) throw ShapeError("nt_xent: group size must be at least 2");
  if (batch % group_size != 0) {
    throw ShapeError("nt_xent: batch " + std::to_string(batch) + " not divisible by group size " +
                     std::to_string(group_size));
  }
  if (!(tau > 0.0)) throw Error("nt_xent: temperature must be positive");
  auto v = embeddings.values();
  for (std::size_t i = 0; i < batch; ++i) {
    double n = 0.0;
    for (std::size_t c = 0; c < width; ++c) n += v[i * width + c] * v[i * width + c];
    if (n == 0.0) throw Error("nt_xent: row " + std::to_string(i) + " has zero norm");
  }

  // Row normalisation via exp(-log(|z|^2) / 2).
  auto sq_norm = ad::sum_reduce(ad::mul(embeddings, embeddings), 1);
  auto inv_norm = ad::exp(ad::scale(ad::log(sq_norm), -0.5));
  auto z = ad::mul(embeddings, ad::broadcast_to(ad::reshape(inv_norm, {batch, 1}), embeddings.shape()));
  auto logits = ad::scale(ad::matmul(z, ad::transpose(z)), 1.0 / tau);

  std::vector<double> other(batch * batch, 1.0), positive(batch * batch, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    other[i * batch + i] = 0.0;
    const auto g0 = (i / group_size) * group_size;
    for (std::size_t j = g0; j < g0 + group_size; ++j) {
      if (j != i) positive[i * batch + j] = 1.0;
    }
  }
  auto other_mask = ad::Tensor::from({batch, batch}, std::move(other));
  auto positive_mask = ad::Tensor::from({batch, batch}, std::move(positive));

  // Cosine similarities are bounded by 1, so shifting by 1/tau keeps exp in range.
  const double shift = 1.0 / tau;
  auto shifted = ad::sub(logits, ad::Tensor::full({batch, batch}, shift));
  auto denom = ad::sum_reduce(ad::mul(ad::exp(shifted), other_mask), 1);
  auto log_denom = ad::log(denom);  // + shift, cancelled below
  auto pos_mean = ad::scale(ad::sum_reduce(ad::mul(shifted, positive_mask), 1),
                            1.0 / static_cast<double>(group_size - 1));
  auto per_anchor = ad::sub(log_denom, pos_mean);
  LossValue out{ad::mean_reduce(per_anchor, 0), {}};
  out.diagnostics["nt_xent"] = out.value.item();
  return out;
}

LossValue cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + ad::to_string(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto batch = logits.dim(0), classes = logits.dim(1);
  std::vector<std::size_t> picked(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
    picked[i] = i * classes + labels[i];
  }
  // The row max is a constant shift; log-sum-exp gradients do not depend on it.
  auto row_max = ad::max_reduce(logits, 1).values.detach();
  auto shifted = ad::sub(logits, ad::broadcast_to(ad::reshape(row_max, {batch, 1}), logits.shape()));
  auto lse = ad::log(ad::sum_reduce(ad::exp(shifted), 1));
  auto target = ad::index_select(ad::reshape(shifted, {batch * classes}), 0, picked);
  LossValue out{ad::mean_reduce(ad::sub(lse, target), 0), {}};
  out.diagnostics["cross_entropy"] = out.value.item();
  return out;
}

}  // namespace deco::loss
