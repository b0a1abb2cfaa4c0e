#include <doctest.h>

#include <cmath>
#include <random>

#include "dlh/distributions.hpp"
#include "gradcheck.hpp"

using namespace dlh;

namespace {

GaussianBelief random_belief(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> m(-2.0, 2.0), s(0.05, 3.0);
  std::vector<double> mean(dim), sd(dim);
  for (int i = 0; i < dim; ++i) {
    mean[i] = m(rng);
    sd[i] = s(rng);
  }
  return {mean, sd};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("Gaussian KL closed-form cases") {
  CHECK(kl_diag_gaussian(GaussianBelief::standard(5), GaussianBelief::standard(5)) == 0.0);
  CHECK(kl_diag_gaussian(GaussianBelief({0.0}, {1.0}), GaussianBelief({1.0}, {1.0})) == doctest::Approx(0.5).epsilon(1e-15));
  // log(1.4/0.7) + (0.7^2 + 0.5^2) / (2 * 1.4^2) - 1/2, evaluated at 30 digits.
  CHECK(kl_diag_gaussian(GaussianBelief({0.3}, {0.7}), GaussianBelief({-0.2}, {1.4})) ==
        doctest::Approx(0.38192269076402694).epsilon(1e-14));
}

TEST_CASE("Gaussian KL agrees with a Monte-Carlo estimate") {
  const GaussianBelief q({0.3}, {0.7}), p({-0.2}, {1.4});
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = 0.3 + 0.7 * n01(rng);
    const double lq = -std::log(0.7) - 0.5 * std::pow((x - 0.3) / 0.7, 2);
    const double lp = -std::log(1.4) - 0.5 * std::pow((x + 0.2) / 1.4, 2);
    sum += lq - lp;
    sq += (lq - lp) * (lq - lp);
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - kl_diag_gaussian(q, p)) < 3 * se);
}

TEST_CASE("Gaussian KL properties over random beliefs") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_belief(1 + i % 6, rng);
    const auto p = random_belief(1 + i % 6, rng);
    CHECK(std::abs(kl_diag_gaussian(q, q)) <= 1e-9);
    CHECK(kl_diag_gaussian(q, p) >= 0.0);
  }
  CHECK_THROWS_AS(kl_diag_gaussian(GaussianBelief::standard(2), GaussianBelief::standard(3)), ContractError);
}

TEST_CASE("Gaussian KL gradients match central differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> in{dlh::testing::random_tensor({2, 3}, rng, -1.5, 1.5),
                           dlh::testing::random_tensor({2, 3}, rng, 0.2, 2.0),
                           dlh::testing::random_tensor({2, 3}, rng, -1.5, 1.5),
                           dlh::testing::random_tensor({2, 3}, rng, 0.2, 2.0)};
    const double err = dlh::testing::check_input_grads(
        [](ad::Graph&, const std::vector<ad::Var>& v) {
          return kl_diag_gaussian(GaussianVar{v[0], v[1]}, GaussianVar{v[2], v[3]});
        },
        in, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("graph and value Gaussian KL agree") {
  std::mt19937_64 rng(12);
  const auto q = random_belief(4, rng), p = random_belief(4, rng);
  ad::Graph g(false);
  auto var = [&](const GaussianBelief& b) {
    return GaussianVar{g.constant(Tensor::row_vector(b.mean())), g.constant(Tensor::row_vector(b.stddev()))};
  };
  CHECK(kl_diag_gaussian(var(q), var(p)).item() == doctest::Approx(kl_diag_gaussian(q, p)).epsilon(1e-14));
}

TEST_CASE("Bernoulli KL cases") {
  CHECK(kl_bernoulli(BernoulliBelief(0.5), BernoulliBelief(0.5)) == 0.0);
  CHECK(kl_bernoulli(BernoulliBelief(1.0), BernoulliBelief(0.5)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(kl_bernoulli(BernoulliBelief(0.9), BernoulliBelief(0.1)) == doctest::Approx(1.7577796618689755).epsilon(1e-14));
  // Clamped prior keeps a certain-but-wrong prior finite.
  CHECK(kl_bernoulli(BernoulliBelief(1.0), BernoulliBelief(0.0)) == doctest::Approx(-std::log(kProbEps)));
  CHECK_THROWS_AS(BernoulliBelief(1.5), ContractError);
  CHECK_THROWS_AS(BernoulliBelief(-0.1), ContractError);
}

TEST_CASE("Bernoulli KL agrees with a sampled log-ratio") {
  std::mt19937_64 rng(99);
  std::bernoulli_distribution e(0.9);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = e(rng) ? std::log(0.9 / 0.1) : std::log(0.1 / 0.9);
    sum += r;
    sq += r * r;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - kl_bernoulli(BernoulliBelief(0.9), BernoulliBelief(0.1))) < 3 * se);
}

TEST_CASE("Bernoulli KL is non-negative and its graph form is -log p of the target") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) CHECK(kl_bernoulli(BernoulliBelief(u(rng)), BernoulliBelief(u(rng))) >= 0.0);
  ad::Graph g(true);
  ad::Var p = g.input(Tensor({1}, {0.2}));
  ad::Var kl1 = kl_bernoulli(1.0, p);
  CHECK(kl1.item() == doctest::Approx(-std::log(0.2)));
  g.backward(kl1);
  CHECK(g.grad(p).data[0] == doctest::Approx(-1.0 / 0.2));
  ad::Graph g0(false);
  CHECK(kl_bernoulli(0.0, g0.constant(Tensor({1}, {0.2}))).item() == doctest::Approx(-std::log(0.8)));
}

TEST_CASE("reparameterised samples") {
  const GaussianBelief b({0.5, -1.0}, {2.0, 0.1});
  CHECK(reparam_sample(b, std::vector<double>{0.0, 0.0}) == b.mean());
  CHECK(reparam_sample(GaussianBelief::standard(2), std::vector<double>{0.3, -0.7}) == std::vector<double>{0.3, -0.7});
  CHECK_THROWS_AS(reparam_sample(b, std::vector<double>{0.0}), ContractError);

  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  const GaussianBelief one({0.4}, {1.7});
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = reparam_sample(one, std::vector<double>{n01(rng)})[0];
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean - 0.4) < 3 * 1.7 / std::sqrt(n));
  // Standard error of the sample variance of a Gaussian: sigma^2 * sqrt(2/n).
  CHECK(std::abs(var - 1.7 * 1.7) < 3 * 1.7 * 1.7 * std::sqrt(2.0 / n));
}

TEST_CASE("reparameterised samples pass a Kolmogorov-Smirnov test") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n01;
  const GaussianBelief b({-0.3}, {0.6});
  const int n = 10000;
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(reparam_sample(b, std::vector<double>{n01(rng)})[0]);
  std::sort(xs.begin(), xs.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = normal_cdf((xs[i] + 0.3) / 0.6);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  // Asymptotic critical value at alpha = 0.01.
  CHECK(d < 1.6276 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("Gaussian log density") {
  CHECK(gaussian_log_density(std::vector<double>{0.2}, std::vector<double>{0.2}, 1.0) ==
        doctest::Approx(-0.91893853320467274).epsilon(1e-15));
  CHECK(gaussian_log_density(std::vector<double>{0.5}, std::vector<double>{0.2}, 0.3) ==
        doctest::Approx(gaussian_log_density(std::vector<double>{0.2}, std::vector<double>{0.2}, 0.3) - 0.5));
  const std::vector<double> x{0.1, -0.4, 1.3, 0.75}, m{0.2, 0.0, 1.0, -0.25};
  CHECK(gaussian_log_density(x, m, 0.3) == doctest::Approx(-5.8598629155149470).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_log_density(x, m, 0.0), ContractError);
  CHECK_THROWS_AS(gaussian_log_density(x, std::vector<double>{1.0}, 1.0), ContractError);
}

TEST_CASE("belief construction validates its inputs") {
  CHECK_THROWS_AS(GaussianBelief({0.0}, {0.0}), ContractError);
  CHECK_THROWS_AS(GaussianBelief({0.0}, {-1.0}), ContractError);
  CHECK_THROWS_AS(GaussianBelief({0.0, 1.0}, {1.0}), ContractError);
  CHECK_THROWS_AS(GaussianBelief({0.0}, {std::nan("")}), ContractError);
}

TEST_CASE("std parameterisation is floored") {
  ad::Graph g(false);
  ad::Var raw = g.constant(Tensor({1, 3}, {-50.0, 0.0, 3.0}));
  const auto s = std_from_raw(raw).value().data;
  CHECK(s[0] >= kStdFloor);
  CHECK(s[1] == doctest::Approx(std::log(2.0) + kStdFloor));
  ad::Var p = probability_from_logit(g.constant(Tensor({1, 2}, {-100.0, 100.0})));
  CHECK(p.value().data[0] == kProbEps);
  CHECK(p.value().data[1] == 1.0 - kProbEps);
}
