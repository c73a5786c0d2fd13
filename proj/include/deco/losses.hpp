#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "deco/autodiff.hpp"

namespace deco::loss {

struct LossValue {
  ad::Tensor value;                            // shape {1}
  std::map<std::string, double> diagnostics;   // per-term breakdown
};

/// Mean over points of the squared Euclidean distance between corresponding rows.
LossValue mse_denoise(const ad::Tensor& denoised, const ad::Tensor& clean);

/// Chamfer distance with both directed sums divided by 2 * normalizer.
/// Gradients flow through the selected nearest pairs; ties resolve to the
/// lowest index.
LossValue chamfer(const ad::Tensor& pred, const ad::Tensor& gt, std::size_t normalizer);

/// Missing-region term, plus the frame term when frame tensors are defined.
/// The frame prediction may have more rows than the frame ground truth.
LossValue completion_loss(const ad::Tensor& pred_missing, const ad::Tensor& gt_missing,
                          const ad::Tensor& pred_frame = {}, const ad::Tensor& gt_frame = {});

/// Contrastive loss over groups of `group_size` consecutive rows, each group
/// being variants of one source. Every other row of the batch is a negative.
LossValue nt_xent_grouped(const ad::Tensor& embeddings, std::size_t group_size, double tau);

LossValue cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels);

}  // namespace deco::loss
