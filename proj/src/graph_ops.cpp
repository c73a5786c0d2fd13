#include "deco/graph_ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <numeric>
#include <utility>

namespace deco::graph {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Below this width distances are summed coordinate-wise, which keeps exact
// ties exact. Wider feature spaces go through the Gram expansion.
constexpr std::size_t kDirectDistanceMaxDim = 16;

// Keeps the k smallest (distance, index) pairs of one row, sorted. Candidates
// arrive in ascending index order, so an equal distance never displaces an
// earlier entry and a strict comparison preserves the index tie-break.
void select_row(std::span<double> dist, std::size_t self, std::size_t k, std::uint32_t* out,
                std::vector<std::pair<double, std::uint32_t>>& best) {
  dist[self] = std::numeric_limits<double>::infinity();
  best.assign(k, {std::numeric_limits<double>::infinity(), 0});
  double worst = best.back().first;
  std::size_t filled = 0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    const double d = dist[j];
    if (!(d < worst) && filled >= k) continue;
    std::size_t pos = std::min(filled, k - 1);
    while (pos > 0 && d < best[pos - 1].first) {
      best[pos] = best[pos - 1];
      --pos;
    }
    best[pos] = {d, static_cast<std::uint32_t>(j)};
    if (filled < k) ++filled;
    worst = best[k - 1].first;
  }
  for (std::size_t j = 0; j < k; ++j) out[j] = best[j].second;
}

ad::Tensor neighbor_mean(const ad::Tensor& x, const NeighborGraph& graph) {
  std::vector<std::size_t> flat(graph.neighbors.begin(), graph.neighbors.end());
  auto gathered = ad::index_select(x, 0, flat);
  auto grouped = ad::reshape(gathered, {graph.num_nodes, graph.k, x.dim(1)});
  return ad::mean_reduce(grouped, 1);
}

void require_graph(const char* op, const ad::Tensor& x, const NeighborGraph& graph) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": features must be rank 2, got " + ad::to_string(x.shape()));
  if (graph.num_nodes != x.dim(0)) {
    throw ShapeError(std::string(op) + ": graph has " + std::to_string(graph.num_nodes) + " nodes but features have " +
                     std::to_string(x.dim(0)) + " rows");
  }
}

}  // namespace

NeighborGraph knn_graph(const ad::Tensor& rows, std::size_t k) {
  if (rows.rank() != 2) throw ShapeError("knn_graph: expected [N x D], got " + ad::to_string(rows.shape()));
  return knn_graph(rows.values(), rows.dim(0), rows.dim(1), k);
}

NeighborGraph knn_graph(std::span<const double> rows, std::size_t n, std::size_t dim, std::size_t k) {
  if (k < 1 || n <= k) {
    throw ShapeError("knn_graph: need N > k >= 1, got N=" + std::to_string(n) + " k=" + std::to_string(k));
  }
  if (rows.size() != n * dim) throw ShapeError("knn_graph: row buffer does not match N x D");
  for (double v : rows) {
    if (!std::isfinite(v)) throw NonFiniteError("knn_graph: non-finite coordinate");
  }
  NeighborGraph g;
  g.num_nodes = n;
  g.k = k;
  g.neighbors.resize(n * k);
  std::vector<std::pair<double, std::uint32_t>> best;
  best.reserve(k + 1);
  std::vector<double> dist(n);

  if (dim == 3) {
    const double* p = rows.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = p[3 * i], x1 = p[3 * i + 1], x2 = p[3 * i + 2];
      for (std::size_t j = 0; j < n; ++j) {
        const double d0 = x0 - p[3 * j], d1 = x1 - p[3 * j + 1], d2 = x2 - p[3 * j + 2];
        dist[j] = d0 * d0 + d1 * d1 + d2 * d2;
      }
      select_row(dist, i, k, g.neighbors.data() + i * k, best);
    }
    return g;
  }
  if (dim <= kDirectDistanceMaxDim) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = rows.data() + i * dim;
      for (std::size_t j = 0; j < n; ++j) {
        const double* xj = rows.data() + j * dim;
        double d = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double diff = xi[c] - xj[c];
          d += diff * diff;
        }
        dist[j] = d;
      }
      select_row(dist, i, k, g.neighbors.data() + i * k, best);
    }
    return g;
  }

  Eigen::Map<const RowMat> x(rows.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  RowMat gram = RowMat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  Eigen::VectorXd sq = gram.diagonal();
  for (std::size_t i = 0; i < n; ++i) {
    const double ni = sq[static_cast<Eigen::Index>(i)];
    const double* gi = gram.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) dist[j] = std::max(0.0, ni + sq[static_cast<Eigen::Index>(j)] - 2.0 * gi[j]);
    select_row(dist, i, k, g.neighbors.data() + i * k, best);
  }
  return g;
}

ad::Tensor edge_conv(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& weight,
                     const ad::Tensor& bias, double slope) {
  require_graph("edge_conv", features, graph);
  const auto c_in = features.dim(1);
  if (weight.rank() != 2 || weight.dim(0) != 2 * c_in) {
    throw ShapeError("edge_conv: weight " + ad::to_string(weight.shape()) + " does not match " +
                     std::to_string(c_in) + " input channels");
  }
  // W [x_i, x_j - x_i] = (W_a - W_b) x_i + W_b x_j, and leaky_relu is monotone,
  // so the per-edge max reduces to a max over W_b x_j.
  std::vector<std::size_t> top(c_in), bottom(c_in);
  std::iota(top.begin(), top.end(), 0);
  std::iota(bottom.begin(), bottom.end(), c_in);
  auto w_center = ad::index_select(weight, 0, top);
  auto w_edge = ad::index_select(weight, 0, bottom);
  auto self_term = ad::matmul(features, ad::sub(w_center, w_edge));
  auto neighbor_term = ad::matmul(features, w_edge);
  auto best = ad::neighbor_max(neighbor_term, graph.neighbors, graph.k);
  auto pre = ad::add(ad::add(self_term, best.values), ad::broadcast_to(bias, self_term.shape()));
  return ad::leaky_relu(pre, slope);
}

ad::Tensor graph_conv(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& w_self,
                      const ad::Tensor& w_nbr, const ad::Tensor& bias) {
  require_graph("graph_conv", features, graph);
  const auto c_in = features.dim(1);
  if (w_self.rank() != 2 || w_self.dim(0) != c_in || w_nbr.shape() != w_self.shape()) {
    throw ShapeError("graph_conv: weights " + ad::to_string(w_self.shape()) + "/" + ad::to_string(w_nbr.shape()) +
                     " do not match " + std::to_string(c_in) + " input channels");
  }
  auto self_term = ad::matmul(features, w_self);
  ad::Tensor nbr_term;
  if (w_nbr.dim(1) < c_in) {
    // Project first when that shrinks the gathered tensor.
    auto projected = ad::matmul(features, w_nbr);
    nbr_term = ad::sub(neighbor_mean(projected, graph), projected);
  } else {
    nbr_term = ad::matmul(ad::sub(neighbor_mean(features, graph), features), w_nbr);
  }
  auto out = ad::add(self_term, nbr_term);
  if (bias.defined()) out = ad::add(out, ad::broadcast_to(bias, out.shape()));
  return out;
}

ad::Tensor residual_denoise_block(const ad::Tensor& features, const NeighborGraph& graph, const ad::Tensor& w_self,
                                  const ad::Tensor& w_nbr, double slope) {
  if (w_self.rank() != 2 || w_self.dim(1) != features.dim(1)) {
    throw ShapeError("residual_denoise_block: weight " + ad::to_string(w_self.shape()) + " must map " +
                     std::to_string(features.dim(1)) + " channels onto themselves");
  }
  return ad::add(features, ad::leaky_relu(graph_conv(features, graph, w_self, w_nbr), slope));
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t count) {
  if (count > scores.size()) {
    throw ShapeError("top_k: target " + std::to_string(count) + " exceeds " + std::to_string(scores.size()) + " nodes");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

SagPoolResult sag_pool_with_scores(const ad::Tensor& features, const ad::Tensor& scores, std::size_t target_count) {
  if (features.rank() != 2 || scores.rank() != 1 || scores.dim(0) != features.dim(0)) {
    throw ShapeError("sag_pool: scores " + ad::to_string(scores.shape()) + " do not match features " +
                     ad::to_string(features.shape()));
  }
  if (target_count < 1 || target_count > features.dim(0)) {
    throw ShapeError("sag_pool: target_count " + std::to_string(target_count) + " exceeds " +
                     std::to_string(features.dim(0)) + " nodes");
  }
  SagPoolResult r;
  r.kept = top_k_indices(scores.values(), target_count);
  r.scores = scores;
  auto kept_features = ad::index_select(features, 0, r.kept);
  auto gate = ad::tanh(ad::reshape(ad::index_select(scores, 0, r.kept), {target_count, 1}));
  r.pooled = ad::mul(kept_features, ad::broadcast_to(gate, kept_features.shape()));
  return r;
}

SagPoolResult sag_pool(const ad::Tensor& features, const NeighborGraph& graph, std::size_t target_count,
                       const ad::Tensor& w_self, const ad::Tensor& w_nbr) {
  if (w_self.rank() != 2 || w_self.dim(1) != 1) {
    throw ShapeError("sag_pool: score weights must be [C x 1], got " + ad::to_string(w_self.shape()));
  }
  if (target_count > features.dim(0)) {
    throw ShapeError("sag_pool: target_count " + std::to_string(target_count) + " exceeds " +
                     std::to_string(features.dim(0)) + " nodes");
  }
  auto scores = ad::reshape(graph_conv(features, graph, w_self, w_nbr), {features.dim(0)});
  return sag_pool_with_scores(features, scores, target_count);
}

}  // namespace deco::graph
