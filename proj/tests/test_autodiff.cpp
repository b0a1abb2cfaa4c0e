#include <doctest.h>

#include "dlh/autodiff.hpp"
#include "gradcheck.hpp"

using namespace dlh;
using dlh::testing::check_input_grads;
using dlh::testing::random_tensor;

namespace {
// Weighted sum so every output element gets a distinct upstream gradient.
ad::Var weighted(ad::Graph& g, ad::Var y) {
  Tensor w(y.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return ad::sum(ad::mul(y, g.constant(w)));
}
}  // namespace

TEST_CASE("elementwise ops have correct gradients") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::add(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::sub(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::mul(v[0], v[1])); }, {a, b}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::scale(v[0], -2.5)); }, {a}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::add_scalar(v[0], 0.7)); }, {a}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::elu(v[0])); }, {a}) < 1e-6);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::tanh(v[0])); }, {a}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::sigmoid(v[0])); }, {a}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::softplus(v[0])); }, {a}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::exp(v[0])); }, {a}) < 1e-7);
}

TEST_CASE("matrix and shape ops have correct gradients") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::matmul(v[0], v[1])); }, {x, w}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::linear(v[0], v[1], v[2])); }, {x, w, b}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::add_row(v[0], v[1])); },
                          {random_tensor({3, 5}, rng), b}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::reshape(v[0], {2, 6})); }, {x}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::concat_cols({v[0], v[1]})); },
                          {x, random_tensor({3, 2}, rng)}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::slice_cols(v[0], 1, 2)); }, {x}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::concat_rows({v[0], v[1]})); },
                          {x, random_tensor({2, 4}, rng)}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::slice_rows(v[0], 1, 2)); }, {x}) < 1e-7);
  CHECK(check_input_grads([](ad::Graph&, auto& v) { return ad::sum_all({ad::sum(v[0]), ad::sum(v[1])}); },
                          {x, w}) < 1e-7);
}

TEST_CASE("convolution ops have correct gradients") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 2, 8, 8}, rng), w = random_tensor({3, 2, 4, 4}, rng), b = random_tensor({3}, rng);
  CHECK(check_input_grads([](ad::Graph& g, auto& v) { return weighted(g, ad::conv2d(v[0], v[1], v[2], 2, 1)); },
                          {x, w, b}) < 1e-5);
  const Tensor xt = random_tensor({2, 3, 4, 4}, rng), wt = random_tensor({3, 2, 4, 4}, rng), bt = random_tensor({2}, rng);
  CHECK(check_input_grads(
            [](ad::Graph& g, auto& v) { return weighted(g, ad::conv_transpose2d(v[0], v[1], v[2], 2, 1)); },
            {xt, wt, bt}) < 1e-5);
}

TEST_CASE("gradients accumulate over reuse and parameters are not copied") {
  ad::ParameterSet ps;
  ps.add("w", Tensor({1, 2}, {2.0, -3.0}));
  ad::Graph g(true);
  ad::Var w = g.param(ps, "w");
  CHECK(g.param(ps, 0).id == w.id);
  CHECK(&w.value() == &ps[0].value);
  // y = sum(w*w + w) -> dy/dw = 2w + 1
  g.backward(ad::sum(ad::add(ad::mul(w, w), w)));
  CHECK(g.grad(w).data == std::vector<double>{5.0, -5.0});
  auto grads = ps.zeros_like();
  g.accumulate_param_grads(grads);
  g.accumulate_param_grads(grads);
  CHECK(grads[0].data == std::vector<double>{10.0, -10.0});
}

TEST_CASE("graphs without gradients record no closures and refuse backward") {
  ad::Graph g(false);
  ad::Var x = g.constant(Tensor({1}, {1.5}));
  ad::Var y = ad::scale(x, 2.0);
  CHECK(y.item() == 3.0);
  CHECK_FALSE(g.requires_grad(y.id));
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("shape mismatches are contract errors") {
  ad::Graph g(true);
  ad::Var a = g.constant(Tensor({2, 3}));
  ad::Var b = g.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(ad::add(a, b), ContractError);
  CHECK_THROWS_AS(ad::matmul(a, a), ContractError);
  CHECK_THROWS_AS(ad::reshape(a, {4, 2}), ContractError);
  CHECK_THROWS_AS(a.item(), ContractError);
  ad::ParameterSet ps;
  CHECK_THROWS_AS(ps.index_of("missing"), ContractError);
}
