#pragma once

// Finite-difference cases for every op, layer and loss. Each case draws its
// input and any fixed operands from the given generator and returns the
// scalar function to check.

#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"

namespace oracle {

struct GradCase {
  std::string name;
  std::function<std::pair<Tensor, deco::ad::ScalarFn>(std::mt19937_64&)> make;
};

inline std::vector<GradCase> gradient_cases() {
  namespace ad = deco::ad;
  namespace gr = deco::graph;
  namespace ls = deco::loss;
  using Fn = ad::ScalarFn;
  std::vector<GradCase> cases;

  // Elementwise and structural ops, f(x) = sum(op(x) * w).
  auto unary = [&](std::string name, Shape shape, std::function<Tensor(const Tensor&)> op, double lo = -1.0,
                   double hi = 1.0) {
    cases.push_back({name, [=](std::mt19937_64& rng) {
                       auto x = random_tensor(shape, rng, lo, hi);
                       auto probe = op(x);
                       auto w = random_tensor(probe.shape(), rng);
                       Fn f = [=](const Tensor& t) { return weighted_sum(op(t), w); };
                       return std::pair{x, f};
                     }});
  };

  cases.push_back({"add", [](std::mt19937_64& rng) {
                     auto c = random_tensor({4, 5}, rng);
                     auto w = random_tensor({4, 5}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::add(t, ad::add(t, c)), w); };
                     return std::pair{random_tensor({4, 5}, rng), f};
                   }});
  cases.push_back({"sub", [](std::mt19937_64& rng) {
                     auto c = random_tensor({3, 6}, rng);
                     auto w = random_tensor({3, 6}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::sub(c, ad::mul(t, t)), w); };
                     return std::pair{random_tensor({3, 6}, rng), f};
                   }});
  unary("scale", {5, 3}, [](const Tensor& t) { return ad::scale(t, -2.5); });
  cases.push_back({"mul", [](std::mt19937_64& rng) {
                     auto c = random_tensor({6, 2}, rng);
                     auto w = random_tensor({6, 2}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::mul(ad::mul(t, c), t), w); };
                     return std::pair{random_tensor({6, 2}, rng), f};
                   }});
  cases.push_back({"matmul_left", [](std::mt19937_64& rng) {
                     auto b = random_tensor({5, 7}, rng);
                     auto w = random_tensor({4, 7}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::matmul(t, b), w); };
                     return std::pair{random_tensor({4, 5}, rng), f};
                   }});
  cases.push_back({"matmul_right", [](std::mt19937_64& rng) {
                     auto a = random_tensor({8, 3}, rng);
                     auto w = random_tensor({8, 6}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::matmul(a, t), w); };
                     return std::pair{random_tensor({3, 6}, rng), f};
                   }});
  cases.push_back({"matmul_square", [](std::mt19937_64& rng) {
                     auto w = random_tensor({4, 4}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::matmul(t, t), w); };
                     return std::pair{random_tensor({4, 4}, rng), f};
                   }});
  unary("relu", {6, 6}, [](const Tensor& t) { return ad::relu(t); });
  unary("leaky_relu", {6, 6}, [](const Tensor& t) { return ad::leaky_relu(t, 0.2); });
  unary("tanh", {5, 5}, [](const Tensor& t) { return ad::tanh(t); }, -2.0, 2.0);
  unary("exp", {4, 4}, [](const Tensor& t) { return ad::exp(t); });
  unary("log", {4, 4}, [](const Tensor& t) { return ad::log(t); }, 0.2, 3.0);
  cases.push_back({"concat_axis0", [](std::mt19937_64& rng) {
                     auto c = random_tensor({2, 3}, rng);
                     auto w = random_tensor({6, 3}, rng);
                     Fn f = [=](const Tensor& t) {
                       std::vector<Tensor> parts{t, c, ad::scale(t, 2.0)};
                       return weighted_sum(ad::concat(parts, 0), w);
                     };
                     return std::pair{random_tensor({2, 3}, rng), f};
                   }});
  cases.push_back({"concat_axis1", [](std::mt19937_64& rng) {
                     auto c = random_tensor({4, 2}, rng);
                     auto w = random_tensor({4, 12}, rng);
                     Fn f = [=](const Tensor& t) {
                       std::vector<Tensor> parts{c, t, ad::tanh(t)};
                       return weighted_sum(ad::concat(parts, 1), w);
                     };
                     return std::pair{random_tensor({4, 5}, rng), f};
                   }});
  unary("index_select_rows", {5, 3}, [](const Tensor& t) {
    return ad::index_select(t, 0, std::vector<std::size_t>{4, 0, 0, 2, 4, 4});
  });
  unary("index_select_cols", {3, 5}, [](const Tensor& t) {
    return ad::index_select(t, 1, std::vector<std::size_t>{1, 1, 3});
  });
  unary("max_reduce_axis0", {6, 4}, [](const Tensor& t) { return ad::max_reduce(t, 0).values; });
  unary("max_reduce_axis1", {3, 4, 5}, [](const Tensor& t) { return ad::max_reduce(t, 1).values; });
  unary("mean_reduce", {3, 4, 2}, [](const Tensor& t) { return ad::mean_reduce(t, 1); });
  unary("sum_reduce", {5, 4}, [](const Tensor& t) { return ad::sum_reduce(t, 0); });
  unary("broadcast_vector", {4}, [](const Tensor& t) { return ad::broadcast_to(t, {6, 4}); });
  unary("broadcast_column", {5, 1}, [](const Tensor& t) { return ad::broadcast_to(t, {5, 3}); });
  unary("reshape", {4, 6}, [](const Tensor& t) { return ad::tanh(ad::reshape(t, {8, 3})); });
  unary("transpose", {3, 7}, [](const Tensor& t) { return ad::mul(ad::transpose(t), ad::transpose(t)); });
  cases.push_back({"neighbor_max", [](std::mt19937_64& rng) {
                     std::vector<std::uint32_t> table{1, 2, 0, 3, 4, 5, 5, 4, 0, 1, 2, 3};
                     auto w = random_tensor({4, 3}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::neighbor_max(t, table, 3).values, w); };
                     return std::pair{random_tensor({6, 3}, rng), f};
                   }});
  cases.push_back({"linear", [](std::mt19937_64& rng) {
                     auto x = random_tensor({5, 4}, rng);
                     auto b = random_tensor({3}, rng);
                     auto w = random_tensor({5, 3}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(ad::linear(x, t, b), w); };
                     return std::pair{random_tensor({4, 3}, rng), f};
                   }});
  unary("mean_all", {3, 3}, [](const Tensor& t) { return ad::mean_all(ad::mul(t, t)); });

  // Graph layers with the neighbour table built once from the unperturbed input.
  cases.push_back({"edge_conv_features", [](std::mt19937_64& rng) {
                     auto x = random_tensor({8, 3}, rng);
                     auto g = gr::knn_graph(x, 3);
                     auto wt = random_tensor({6, 4}, rng);
                     auto b = random_tensor({4}, rng, -0.1, 0.1);
                     auto w = random_tensor({8, 4}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::edge_conv(t, g, wt, b), w); };
                     return std::pair{x, f};
                   }});
  cases.push_back({"edge_conv_weight", [](std::mt19937_64& rng) {
                     auto x = random_tensor({8, 3}, rng);
                     auto g = gr::knn_graph(x, 4);
                     auto b = random_tensor({5}, rng, -0.1, 0.1);
                     auto w = random_tensor({8, 5}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::edge_conv(x, g, t, b), w); };
                     return std::pair{random_tensor({6, 5}, rng), f};
                   }});
  cases.push_back({"graph_conv", [](std::mt19937_64& rng) {
                     auto x = random_tensor({8, 4}, rng);
                     auto g = gr::knn_graph(x, 3);
                     auto ws = random_tensor({4, 2}, rng);
                     auto wn = random_tensor({4, 2}, rng);
                     auto b = random_tensor({2}, rng);
                     auto w = random_tensor({8, 2}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::graph_conv(t, g, ws, wn, b), w); };
                     return std::pair{x, f};
                   }});
  cases.push_back({"graph_conv_widening", [](std::mt19937_64& rng) {
                     auto x = random_tensor({7, 2}, rng);
                     auto g = gr::knn_graph(x, 2);
                     auto ws = random_tensor({2, 5}, rng);
                     auto w = random_tensor({7, 5}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::graph_conv(x, g, ws, t), w); };
                     return std::pair{random_tensor({2, 5}, rng), f};
                   }});
  cases.push_back({"residual_denoise_block", [](std::mt19937_64& rng) {
                     auto x = random_tensor({8, 4}, rng);
                     auto g = gr::knn_graph(x, 3);
                     auto ws = random_tensor({4, 4}, rng);
                     auto wn = random_tensor({4, 4}, rng);
                     auto w = random_tensor({8, 4}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::residual_denoise_block(t, g, ws, wn), w); };
                     return std::pair{x, f};
                   }});
  cases.push_back({"sag_pool", [](std::mt19937_64& rng) {
                     auto x = random_tensor({8, 3}, rng);
                     auto g = gr::knn_graph(x, 3);
                     auto ws = random_tensor({3, 1}, rng);
                     auto wn = random_tensor({3, 1}, rng);
                     auto w = random_tensor({5, 3}, rng);
                     Fn f = [=](const Tensor& t) { return weighted_sum(gr::sag_pool(t, g, 5, ws, wn).pooled, w); };
                     return std::pair{x, f};
                   }});

  // Losses.
  cases.push_back({"mse_denoise", [](std::mt19937_64& rng) {
                     auto clean = random_tensor({7, 3}, rng);
                     Fn f = [=](const Tensor& t) { return ls::mse_denoise(t, clean).value; };
                     return std::pair{random_tensor({7, 3}, rng), f};
                   }});
  cases.push_back({"chamfer", [](std::mt19937_64& rng) {
                     auto gt = random_tensor({6, 3}, rng);
                     Fn f = [=](const Tensor& t) { return ls::chamfer(t, gt, 6).value; };
                     return std::pair{random_tensor({5, 3}, rng), f};
                   }});
  cases.push_back({"chamfer_gt_side", [](std::mt19937_64& rng) {
                     auto pred = random_tensor({8, 3}, rng);
                     Fn f = [=](const Tensor& t) { return ls::chamfer(pred, t, 4).value; };
                     return std::pair{random_tensor({4, 3}, rng), f};
                   }});
  cases.push_back({"completion_loss", [](std::mt19937_64& rng) {
                     auto xm = random_tensor({4, 3}, rng);
                     auto xfm = random_tensor({6, 3}, rng);
                     auto yfm = random_tensor({8, 3}, rng);
                     Fn f = [=](const Tensor& t) { return ls::completion_loss(t, xm, yfm, xfm).value; };
                     return std::pair{random_tensor({4, 3}, rng), f};
                   }});
  cases.push_back({"nt_xent_g4", [](std::mt19937_64& rng) {
                     Fn f = [](const Tensor& t) { return ls::nt_xent_grouped(t, 4, 0.5).value; };
                     return std::pair{random_tensor({8, 5}, rng), f};
                   }});
  cases.push_back({"nt_xent_g2", [](std::mt19937_64& rng) {
                     Fn f = [](const Tensor& t) { return ls::nt_xent_grouped(t, 2, 0.3).value; };
                     return std::pair{random_tensor({6, 4}, rng), f};
                   }});
  cases.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                     std::vector<std::size_t> labels{0, 4, 2};
                     Fn f = [=](const Tensor& t) { return ls::cross_entropy(t, labels).value; };
                     return std::pair{random_tensor({3, 5}, rng, -3, 3), f};
                   }});
  return cases;
}

}  // namespace oracle
