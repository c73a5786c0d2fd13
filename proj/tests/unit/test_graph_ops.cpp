#include <doctest.h>

#include <cmath>

#include "deco/graph_ops.hpp"
#include "oracles.hpp"

using namespace deco;
using ad::Tensor;

namespace {

std::vector<std::uint32_t> row(const graph::NeighborGraph& g, std::size_t i) {
  auto r = g.row(i);
  return {r.begin(), r.end()};
}

double leaky(double v) { return v > 0 ? v : 0.2 * v; }

}  // namespace

TEST_CASE("knn examples") {
  SUBCASE("1-D line") {
    auto g = graph::knn_graph(Tensor::from({3, 1}, {0, 1, 3}), 1);
    CHECK(row(g, 0) == std::vector<std::uint32_t>{1});
    CHECK(row(g, 1) == std::vector<std::uint32_t>{0});
    CHECK(row(g, 2) == std::vector<std::uint32_t>{1});
  }
  SUBCASE("equilateral triangle ties by index") {
    // The unit vectors are pairwise at squared distance exactly 2.
    auto g = graph::knn_graph(Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 2);
    CHECK(row(g, 0) == std::vector<std::uint32_t>{1, 2});
    CHECK(row(g, 1) == std::vector<std::uint32_t>{0, 2});
    CHECK(row(g, 2) == std::vector<std::uint32_t>{0, 1});
  }
  SUBCASE("duplicates pick each other") {
    auto g = graph::knn_graph(Tensor::from({4, 3}, {0, 0, 0, 5, 5, 5, 0, 0, 0, 5, 5, 5}), 1);
    CHECK(row(g, 0) == std::vector<std::uint32_t>{2});
    CHECK(row(g, 1) == std::vector<std::uint32_t>{3});
    CHECK(row(g, 2) == std::vector<std::uint32_t>{0});
    CHECK(row(g, 3) == std::vector<std::uint32_t>{1});
  }
  SUBCASE("too few nodes") {
    CHECK_THROWS_AS(graph::knn_graph(Tensor::zeros({3, 2}), 3), ShapeError);
    CHECK_THROWS_AS(graph::knn_graph(Tensor::zeros({3, 2}), 0), ShapeError);
  }
}

TEST_CASE("knn equals full-sort oracle in both distance paths") {
  for (std::size_t dim : {3ul, 5ul, 40ul}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      std::mt19937_64 rng(seed + 17 * dim);
      const std::size_t n = 30, k = 6;
      auto x = oracle::random_tensor({n, dim}, rng);
      auto g = graph::knn_graph(x, k);
      auto ref = oracle::knn(std::vector<double>(x.values().begin(), x.values().end()), n, dim, k);
      for (std::size_t i = 0; i < n; ++i) {
        auto r = row(g, i);
        CHECK(std::vector<std::size_t>(r.begin(), r.end()) == ref[i]);
        for (auto j : r) CHECK(j != i);
      }
    }
  }
}

TEST_CASE("knn on a lattice resolves exact ties by index") {
  std::vector<double> v;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) v.insert(v.end(), {double(a), double(b), 0.0});
  auto g = graph::knn_graph(Tensor::from({16, 3}, v), 4);
  auto ref = oracle::knn(v, 16, 3, 4);
  for (std::size_t i = 0; i < 16; ++i) {
    auto r = row(g, i);
    CHECK(std::vector<std::size_t>(r.begin(), r.end()) == ref[i]);
  }
}

TEST_CASE("knn is permutation consistent") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto pts = oracle::random_points(16, rng);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> a, b;
    for (auto& p : pts) a.insert(a.end(), p.begin(), p.end());
    for (auto i : perm) b.insert(b.end(), pts[i].begin(), pts[i].end());
    auto ga = graph::knn_graph(Tensor::from({16, 3}, a), 5);
    auto gb = graph::knn_graph(Tensor::from({16, 3}, b), 5);
    for (std::size_t r = 0; r < 16; ++r) {
      auto rb = row(gb, r);
      auto ra = row(ga, perm[r]);
      for (std::size_t j = 0; j < 5; ++j) CHECK(perm[rb[j]] == ra[j]);
    }
  }
}

TEST_CASE("edge_conv identical features broadcast one message") {
  auto x = Tensor::from({4, 2}, {0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
  auto g = graph::knn_graph(x, 2);
  std::mt19937_64 rng(2);
  auto w = oracle::random_tensor({4, 3}, rng);
  auto b = oracle::random_tensor({3}, rng);
  auto out = graph::edge_conv(x, g, w, b);
  for (std::size_t c = 0; c < 3; ++c) {
    const double expect = leaky(0.3 * w.at(0, c) - 0.7 * w.at(1, c) + b.at(c));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i, c) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("edge_conv matches brute-force message enumeration") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed + 40);
    const std::size_t n = 6, cin = 3, cout = 4, k = seed == 0 ? 1 : 3;
    auto x = oracle::random_tensor({n, cin}, rng);
    auto g = graph::knn_graph(x, k);
    auto w = oracle::random_tensor({2 * cin, cout}, rng);
    auto b = oracle::random_tensor({cout}, rng);
    auto out = graph::edge_conv(x, g, w, b);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < cout; ++c) {
        double best = -1e300;
        for (auto j : g.row(i)) {
          double m = b.at(c);
          for (std::size_t t = 0; t < cin; ++t) {
            m += x.at(i, t) * w.at(t, c) + (x.at(j, t) - x.at(i, t)) * w.at(cin + t, c);
          }
          best = std::max(best, leaky(m));
        }
        CHECK(out.at(i, c) == doctest::Approx(best).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("edge_conv on a 3-node line with identity weights") {
  // Features are scalars 0, 1, 3, k = 2, W = identity on [x_i, x_j - x_i].
  auto x = Tensor::from({3, 1}, {0, 1, 3});
  auto g = graph::knn_graph(x, 2);
  auto out = graph::edge_conv(x, g, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
  // Channel 0 is x_i; channel 1 is max_j leaky(x_j - x_i).
  CHECK(out.at(0, 0) == 0.0);
  CHECK(out.at(0, 1) == 3.0);
  CHECK(out.at(1, 1) == 2.0);
  CHECK(out.at(2, 0) == 3.0);
  CHECK(out.at(2, 1) == doctest::Approx(leaky(-2.0)));
}

TEST_CASE("edge_conv ignores neighbour listing order") {
  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor({8, 3}, rng);
  auto g = graph::knn_graph(x, 4);
  auto shuffled = g;
  for (std::size_t i = 0; i < 8; ++i) std::reverse(shuffled.neighbors.begin() + i * 4, shuffled.neighbors.begin() + i * 4 + 4);
  auto w = oracle::random_tensor({6, 5}, rng);
  auto b = oracle::random_tensor({5}, rng);
  auto a = graph::edge_conv(x, g, w, b);
  auto c = graph::edge_conv(x, shuffled, w, b);
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
        std::vector<double>(c.values().begin(), c.values().end()));
}

TEST_CASE("edge_conv channel mismatch") {
  auto x = Tensor::zeros({4, 3});
  auto g = graph::knn_graph(Tensor::from({4, 1}, {0, 1, 2, 3}), 1);
  CHECK_THROWS_AS(graph::edge_conv(x, g, Tensor::zeros({4, 2}), Tensor::zeros({2})), ShapeError);
}

TEST_CASE("residual block") {
  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor({5, 3}, rng);
  auto g = graph::knn_graph(x, 2);
  SUBCASE("zero weights are the identity") {
    auto out = graph::residual_denoise_block(x, g, Tensor::zeros({3, 3}), Tensor::zeros({3, 3}));
    CHECK(std::vector<double>(out.values().begin(), out.values().end()) ==
          std::vector<double>(x.values().begin(), x.values().end()));
  }
  SUBCASE("direct formula") {
    auto ws = oracle::random_tensor({3, 3}, rng);
    auto wn = oracle::random_tensor({3, 3}, rng);
    auto out = graph::residual_denoise_block(x, g, ws, wn);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        double pre = 0.0;
        for (std::size_t t = 0; t < 3; ++t) pre += x.at(i, t) * ws.at(t, c);
        for (auto j : g.row(i)) {
          for (std::size_t t = 0; t < 3; ++t) pre += 0.5 * (x.at(j, t) - x.at(i, t)) * wn.at(t, c);
        }
        CHECK(out.at(i, c) == doctest::Approx(x.at(i, c) + leaky(pre)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("constant features skip aggregation") {
    auto c = Tensor::from({3, 2}, {0.5, -1, 0.5, -1, 0.5, -1});
    auto gc = graph::knn_graph(c, 1);
    auto ws = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto out = graph::residual_denoise_block(c, gc, ws, Tensor::full({2, 2}, 7.0));
    CHECK(out.at(1, 0) == doctest::Approx(0.5 + leaky(0.5 - 3)));
    CHECK(out.at(1, 1) == doctest::Approx(-1 + leaky(1 - 4)));
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(graph::residual_denoise_block(x, g, Tensor::zeros({3, 2}), Tensor::zeros({3, 2})), ShapeError);
  }
}

TEST_CASE("sag pool") {
  SUBCASE("constructed scores") {
    auto feats = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto r = graph::sag_pool_with_scores(feats, Tensor::from({3}, {0.9, -0.1, 0.5}), 2);
    CHECK(r.kept == std::vector<std::size_t>{0, 2});
    CHECK(r.pooled.at(0, 1) == doctest::Approx(2 * std::tanh(0.9)));
    CHECK(r.pooled.at(1, 0) == doctest::Approx(5 * std::tanh(0.5)));
  }
  SUBCASE("no reduction keeps everything") {
    auto feats = Tensor::from({2, 1}, {2, 3});
    auto r = graph::sag_pool_with_scores(feats, Tensor::from({2}, {0.1, 0.2}), 2);
    CHECK(r.kept == std::vector<std::size_t>{0, 1});
    CHECK(r.pooled.at(1, 0) == doctest::Approx(3 * std::tanh(0.2)));
  }
  SUBCASE("kept set equals brute-force top-k") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      auto x = oracle::random_tensor({8, 3}, rng);
      auto g = graph::knn_graph(x, 3);
      auto r = graph::sag_pool(x, g, 5, oracle::random_tensor({3, 1}, rng), oracle::random_tensor({3, 1}, rng));
      std::vector<std::size_t> idx(8);
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        return r.scores.at(a) > r.scores.at(b) || (r.scores.at(a) == r.scores.at(b) && a < b);
      });
      idx.resize(5);
      std::sort(idx.begin(), idx.end());
      CHECK(r.kept == idx);
      CHECK(r.pooled.dim(0) == 5);
    }
  }
  SUBCASE("ties keep the lower index") {
    CHECK(graph::top_k_indices(std::vector<double>{1, 2, 2, 2}, 2) == std::vector<std::size_t>{1, 2});
  }
  SUBCASE("too many requested") {
    auto x = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(graph::sag_pool_with_scores(x, Tensor::zeros({3}), 4), ShapeError);
  }
}
