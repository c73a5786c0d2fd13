#include <doctest.h>

#include <cmath>

#include "deco/autodiff.hpp"
#include "deco/parameters.hpp"
#include "gradient_cases.hpp"

using namespace deco;
using ad::Tensor;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("tensor factories validate shapes") {
  CHECK_THROWS_AS(Tensor::zeros({}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({3, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  CHECK(t.numel() == 6);
  CHECK(t.has_grad());
  CHECK(t.grad().size() == t.numel());
  CHECK(t.at(1, 2) == 6);
  CHECK_FALSE(Tensor::zeros({2}).has_grad());
}

TEST_CASE("matmul with the identity returns the operand") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto a = Tensor::from({2, 3}, {1.5, -2, 3, 4, 5, -6});
  CHECK(vec(ad::matmul(eye, a).values()) == vec(a.values()));
  CHECK_THROWS_AS(ad::matmul(a, eye), ShapeError);
}

TEST_CASE("relu splits on sign") {
  auto r = ad::relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(vec(r.values()) == std::vector<double>{0, 0, 2});
}

TEST_CASE("max_reduce records argmax") {
  auto m = ad::max_reduce(Tensor::from({2, 2}, {1, 5, 7, 2}), 0);
  CHECK(vec(m.values.values()) == std::vector<double>{7, 5});
  CHECK(m.argmax == std::vector<std::size_t>{1, 0});
  auto tie = ad::max_reduce(Tensor::from({3}, {4, 4, 1}), 0);
  CHECK(tie.argmax == std::vector<std::size_t>{0});
}

TEST_CASE("backward examples") {
  SUBCASE("x*x at 3") {
    auto x = Tensor::from({1}, {3}, true);
    ad::Tape tape;
    tape.backward(ad::mul(x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("max routes to the argmax") {
    auto x = Tensor::from({3}, {1, 4, 2}, true);
    ad::Tape tape;
    tape.backward(ad::max_reduce(x, 0).values);
    CHECK(vec(x.grad()) == std::vector<double>{0, 1, 0});
  }
  SUBCASE("log(exp(x)) has unit slope") {
    for (double v : {-2.0, 0.3, 5.0}) {
      auto x = Tensor::from({1}, {v}, true);
      ad::Tape tape;
      tape.backward(ad::log(ad::exp(x)));
      CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("reuse accumulates") {
    auto x = Tensor::from({1}, {0.7}, true);
    ad::Tape tape;
    tape.backward(ad::add(x, x));
    CHECK(x.grad()[0] == 2.0);
  }
}

TEST_CASE("tape misuse is rejected") {
  auto x = Tensor::from({2}, {1, 2}, true);
  ad::Tape tape;
  auto y = ad::sum_all(ad::mul(x, x));
  CHECK_THROWS_AS(tape.backward(ad::mul(x, x)), TapeError);
  tape.backward(y);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(y), TapeError);
}

TEST_CASE("tape is topologically ordered") {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  ad::Tape tape;
  auto y = ad::sum_all(ad::tanh(ad::matmul(x, ad::relu(x))));
  REQUIRE(tape.size() >= 3);
  for (std::size_t i = 0; i < tape.size(); ++i) {
    for (auto id : tape.node(i).input_ids) CHECK(id < static_cast<std::int64_t>(i));
  }
  tape.backward(y);
}

TEST_CASE("no recording without a tape or without grad") {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = ad::mul(x, x);
  CHECK(y.node_id() == -1);
  CHECK_FALSE(y.requires_grad());
  ad::Tape tape;
  auto c = Tensor::from({2}, {1, 2});
  CHECK(ad::mul(c, c).node_id() == -1);
  CHECK(tape.size() == 0);
}

TEST_CASE("op errors name shapes and ranges") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({3, 2});
  try {
    ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::index_select(a, 0, std::vector<std::size_t>{2}), IndexError);
  CHECK_THROWS_AS(ad::max_reduce(a, 2), IndexError);
  CHECK_THROWS_AS(ad::log(Tensor::from({2}, {1.0, 0.0})), NonFiniteError);
  CHECK_THROWS_AS(ad::exp(Tensor::from({1}, {1e6})), NonFiniteError);
  CHECK_THROWS_AS(ad::broadcast_to(a, {4, 3}), ShapeError);
  CHECK_THROWS_AS(ad::reshape(a, {5}), ShapeError);
}

TEST_CASE("broadcast aligns trailing axes") {
  auto v = Tensor::from({3}, {1, 2, 3});
  auto m = ad::broadcast_to(v, {2, 3});
  CHECK(vec(m.values()) == std::vector<double>{1, 2, 3, 1, 2, 3});
  auto col = ad::broadcast_to(Tensor::from({2, 1}, {5, 6}), {2, 2});
  CHECK(vec(col.values()) == std::vector<double>{5, 5, 6, 6});
}

TEST_CASE("neighbor_max equals gather, reshape, max") {
  std::mt19937_64 rng(3);
  auto a = oracle::random_tensor({6, 4}, rng);
  std::vector<std::uint32_t> table{1, 2, 3, 0, 5, 4, 2, 2, 0, 4, 3, 1, 5, 5, 0, 1, 1, 1};
  auto fused = ad::neighbor_max(a, table, 3);
  std::vector<std::size_t> flat(table.begin(), table.end());
  auto ref = ad::max_reduce(ad::reshape(ad::index_select(a, 0, flat), {6, 3, 4}), 1);
  CHECK(vec(fused.values.values()) == vec(ref.values.values()));
  CHECK(fused.argmax == ref.argmax);
}

TEST_CASE("finite difference oracle examples") {
  std::mt19937_64 rng(11);
  auto x = oracle::random_tensor({3}, rng);
  CHECK(ad::finite_difference_check([](const Tensor& t) { return ad::sum_all(ad::mul(t, t)); }, x, 1e-5) < 1e-6);
  CHECK(ad::finite_difference_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, 1e-5) == 0.0);
  CHECK_THROWS(ad::finite_difference_check([](const Tensor& t) { return ad::sum_all(t); }, x, 0.0));
}

TEST_CASE("every op passes finite differences") {
  for (const auto& c : oracle::gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto [x, f] = c.make(rng);
      INFO(c.name << " seed " << seed);
      CHECK(ad::finite_difference_check(f, x, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("identical inputs give bit-identical values and grads") {
  auto run = [] {
    std::mt19937_64 rng(5);
    auto x = oracle::random_tensor({6, 6}, rng, -1, 1, true);
    auto w = oracle::random_tensor({6, 6}, rng);
    ad::Tape tape;
    auto y = ad::sum_all(ad::tanh(ad::matmul(ad::leaky_relu(x), w)));
    tape.backward(y);
    return std::pair{y.item(), vec(x.grad())};
  };
  CHECK(run() == run());
}

TEST_CASE("interior grads are released unless retained") {
  auto x = Tensor::from({2}, {1, -3}, true);
  ad::Tape tape;
  auto h = ad::mul(x, x);
  auto kept = ad::tanh(x);
  kept.retain_grad();
  tape.backward(ad::sum_all(ad::add(h, kept)));
  CHECK_FALSE(h.has_grad());
  CHECK(kept.has_grad());
  CHECK(kept.grad()[0] == 1.0);
}

TEST_CASE("zero_grads") {
  ParameterStore store;
  auto& w = store.add("a.weight", Tensor::from({2, 2}, {1, 2, 3, 4}, true));
  {
    ad::Tape tape;
    tape.backward(ad::sum_all(ad::mul(w, w)));
  }
  CHECK(w.grad()[3] == 8.0);
  store.zero_grads();
  for (double g : w.grad()) CHECK(g == 0.0);
  store.zero_grads();
  for (double g : w.grad()) CHECK(g == 0.0);
  std::vector<Parameter> none;
  zero_grads(none);
  CHECK_THROWS_AS(store.add("a.weight", {1}), ConfigError);
}
