#pragma once

// kNN graphs and the graph layers built on them: EdgeConv, the residual
// edge-conditioned block used by the local encoder, and self-attention graph
// pooling.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "deco/autodiff.hpp"

namespace deco::graph {

/// Fixed-degree neighbor table. Row i lists the k nearest other nodes of i by
/// ascending squared distance, ties by ascending index.
struct NeighborGraph {
  std::size_t num_nodes = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> neighbors;  // num_nodes * k, row-major

  std::span<const std::uint32_t> row(std::size_t i) const { return {neighbors.data() + i * k, k}; }
};

/// Exhaustive kNN over the rows of an [N x D] tensor. Requires N > k >= 1.
NeighborGraph knn_graph(const ad::Tensor& rows, std::size_t k);
NeighborGraph knn_graph(std::span<const double> rows, std::size_t n, std::size_t dim, std::size_t k);

/// out_i = max_j leaky_relu(W [x_i, x_j - x_i] + b), channel-wise.
/// weight is [2*C_in x C_out], bias [C_out].
ad::Tensor edge_conv(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& weight,
                     const ad::Tensor& bias, double slope = 0.2);

/// out_i = W_self x_i + W_nbr (mean_j x_j - x_i) (+ b). Weights are [C_in x C_out].
/// Pass an undefined bias to omit it.
ad::Tensor graph_conv(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& w_self,
                      const ad::Tensor& w_nbr, const ad::Tensor& bias = {});

/// out = x + leaky_relu(graph_conv(x)); width preserved.
ad::Tensor residual_denoise_block(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& w_self,
                                  const ad::Tensor& w_nbr, double slope = 0.2);

struct SagPoolResult {
  ad::Tensor pooled;                 // [target x C]
  std::vector<std::size_t> kept;     // strictly increasing node indices
  ad::Tensor scores;                 // [N]
};

/// Scores nodes with a single-channel graph projection, keeps the top
/// `target_count` and gates them by tanh(score).
SagPoolResult sag_pool(const ad::Tensor& features, const NeighborGraph& graph, std::size_t target_count,
                       const ad::Tensor& w_self, const ad::Tensor& w_nbr);

/// Pooling step given precomputed scores [N].
SagPoolResult sag_pool_with_scores(const ad::Tensor& features, const ad::Tensor& scores, std::size_t target_count);

/// Indices of the `count` largest values, ties by ascending index, returned ascending.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t count);

}  // namespace deco::graph
