#include <doctest.h>

#include <cmath>
#include <random>

#include "dlh/network.hpp"
#include "gradcheck.hpp"

using namespace dlh;

namespace {

ModelConfig small_config(int levels = 2) {
  ModelConfig c;
  c.num_levels = levels;
  c.latent_dim = 3;
  c.det_dim = 6;
  c.frame_h = c.frame_w = 8;
  c.conv_channels = {4, 4};
  c.mlp_hidden = 5;
  c.head_hidden = {4, 4};
  c.factor_hidden = 5;
  return c;
}

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST_CASE("default configuration dimensions") {
  const ModelConfig c;
  CHECK(c.latent_dim == 20);
  CHECK(c.det_dim == 200);
  CHECK(c.conv_channels.size() == 4);
  CHECK(c.head_hidden == std::vector<int>{40, 40, 40});
  CHECK(c.factor_hidden == 200);
  Network net(c, 1);
  ad::Graph g(false);
  auto xs = net.encode(g, g.constant(Tensor({1, 3, 32, 32})));
  REQUIRE(xs.size() == 2);
  CHECK(xs[0].value().cols() == 200);
  CHECK(xs[1].value().cols() == 200);
  auto d = net.zero_recurrent(g);
  auto post = net.posterior_head(g, 1, xs[0], net.top_context(g));
  CHECK(post.mean.value().cols() == 20);
  CHECK(net.temporal_step(g, 1, post.mean, d).value().cols() == 200);
}

TEST_CASE("config validation names the field") {
  ModelConfig c = small_config();
  c.frame_h = 10;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.frame_h") != std::string::npos);
  }
  c = small_config();
  c.num_levels = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.obs_std = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encoder outputs are finite and deterministic") {
  Network net(small_config(3), 5);
  ad::Graph g(false);
  auto a = net.encode(g, g.constant(Tensor({2, 3, 8, 8})));
  auto b = net.encode(g, g.constant(Tensor({2, 3, 8, 8})));
  REQUIRE(a.size() == 3);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(all_finite(a[n].value()));
    CHECK(a[n].value().data == b[n].value().data);
    CHECK(a[n].value().cols() == 6);
  }
  CHECK_THROWS_AS(net.encode(g, g.constant(Tensor({1, 3, 8, 4}))), ContractError);
}

TEST_CASE("decoder reaches an image-shaped output from the top context") {
  Network net(small_config(2), 5);
  ad::Graph g(false);
  ad::Var c = net.top_context(g);
  for (int n = 2; n >= 1; --n) c = net.decode(g, n, g.constant(Tensor({1, 3}, 0.1)), c);
  const ad::Var img = net.decode_image(g, c);
  CHECK(img.shape() == std::vector<int>{1, 3, 8, 8});
  CHECK(all_finite(img.value()));
  CHECK_THROWS_AS(net.decode(g, 3, g.constant(Tensor({1, 3})), c), ContractError);
}

TEST_CASE("Gaussian heads respect the std floor and are deterministic") {
  Network net(small_config(), 9);
  std::mt19937_64 rng(1);
  ad::Graph g(false);
  const ad::Var x = g.constant(dlh::testing::random_tensor({4, 6}, rng, -30, 30));
  const ad::Var c = g.constant(dlh::testing::random_tensor({4, 6}, rng, -30, 30));
  for (int n = 1; n <= 2; ++n) {
    const auto q1 = net.posterior_head(g, n, x, c), q2 = net.posterior_head(g, n, x, c);
    const auto p = net.prior_state_head(g, n, x, c);
    CHECK(q1.mean.value().data == q2.mean.value().data);
    CHECK(q1.stddev.value().data == q2.stddev.value().data);
    for (double s : q1.stddev.value().data) CHECK(s >= kStdFloor);
    for (double s : p.stddev.value().data) CHECK(s >= kStdFloor);
    CHECK(q1.mean.value().cols() == 3);
  }
}

TEST_CASE("recurrent states stay in (-1, 1) and factor probabilities in (0, 1)") {
  Network net(small_config(), 3);
  std::mt19937_64 rng(4);
  ad::Graph g(false);
  for (int trial = 0; trial < 50; ++trial) {
    const ad::Var s = g.constant(dlh::testing::random_tensor({2, 3}, rng, -20, 20));
    const ad::Var d = g.constant(dlh::testing::random_tensor({2, 6}, rng, -1, 1));
    for (double v : net.temporal_step(g, 1, s, d).value().data) CHECK(std::abs(v) < 1.0);
    const ad::Var f = net.factor_step(g, 2, s, g.constant(dlh::testing::random_tensor({2, 5}, rng, -1, 1)));
    for (double v : f.value().data) CHECK(std::abs(v) < 1.0);
    for (double p : net.prior_factor_head(g, 2, f).value().data) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("same seed gives identical parameters, different seeds differ") {
  Network a(small_config(), 42), b(small_config(), 42), c(small_config(), 43);
  REQUIRE(a.params().size() == b.params().size());
  CHECK(a.params().scalar_count() == b.params().scalar_count());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].name == b.params()[i].name);
    CHECK(a.params()[i].value.data == b.params()[i].value.data);
    any_diff = any_diff || a.params()[i].value.data != c.params()[i].value.data;
  }
  CHECK(any_diff);
}

TEST_CASE("heads never mix batch elements") {
  Network net(small_config(), 8);
  std::mt19937_64 rng(6);
  Tensor frames = dlh::testing::random_tensor({3, 3, 8, 8}, rng, 0, 1);
  Tensor s = dlh::testing::random_tensor({3, 3}, rng);
  ad::Graph g(false);
  const auto x = net.encode(g, g.constant(frames));
  const auto d = net.temporal_step(g, 1, g.constant(s), x[0]);
  const auto img = net.decode_image(g, x[0]);
  Tensor frames2 = frames;
  for (std::size_t i = 0; i < 3 * 64; ++i) frames2.data[i] += 0.5;  // perturb element 0 only
  Tensor s2 = s;
  s2.data[0] += 1.0;
  const auto x2 = net.encode(g, g.constant(frames2));
  const auto d2 = net.temporal_step(g, 1, g.constant(s2), x2[0]);
  const auto img2 = net.decode_image(g, x2[0]);
  for (int r = 1; r < 3; ++r)
    for (int j = 0; j < 6; ++j) {
      CHECK(x[1].value().at(r, j) == x2[1].value().at(r, j));
      CHECK(d.value().at(r, j) == d2.value().at(r, j));
    }
  const std::size_t per = 3 * 64;
  for (std::size_t i = per; i < 3 * per; ++i) CHECK(img.value().data[i] == img2.value().data[i]);
  CHECK(img.value().data[0] != img2.value().data[0]);
}
