#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dlh/mog.hpp"

using namespace dlh;

namespace {

GaussianBelief random_belief(int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> m(-2.0, 2.0), s(0.1, 2.5);
  std::vector<double> mean(dim), sd(dim);
  for (int i = 0; i < dim; ++i) {
    mean[i] = m(rng);
    sd[i] = s(rng);
  }
  return {mean, sd};
}

}  // namespace

TEST_CASE("selection picks the closer component") {
  const GaussianBelief st({0.0}, {1.0}), ch({2.0}, {1.0});
  const TemporalMoGPrior prior(st, ch, BernoulliBelief(0.5));
  CHECK(select_component(st, prior) == 0);
  CHECK(select_component(ch, prior) == 1);
  const GaussianBelief q({0.5}, {1.0});
  CHECK(kl_diag_gaussian(q, st) == doctest::Approx(0.125));
  CHECK(kl_diag_gaussian(q, ch) == doctest::Approx(1.125));
  CHECK(select_component(q, prior) == 0);
}

TEST_CASE("ties resolve to the static component") {
  const GaussianBelief st({-1.0}, {1.0}), ch({1.0}, {1.0});
  CHECK(select_component(GaussianBelief({0.0}, {1.0}), TemporalMoGPrior(st, ch, BernoulliBelief(0.5))) == 0);
  CHECK(select_component(st, TemporalMoGPrior(st, st, BernoulliBelief(0.5))) == 0);
}

TEST_CASE("closed-form component posterior") {
  const GaussianBelief st({0.0}, {1.0}), ch({2.0}, {1.0});
  // Equal KLs and equal priors.
  CHECK(vade_posterior(GaussianBelief({1.0}, {1.0}), TemporalMoGPrior(st, ch, BernoulliBelief(0.5))).p_one() ==
        doctest::Approx(0.5));
  // A unit-variance mean shift of sqrt(2 ln 3) gives a KL gap of ln 3.
  const double d = std::sqrt(2.0 * std::log(3.0));
  const GaussianBelief q({0.0}, {1.0});
  const TemporalMoGPrior p(q, GaussianBelief({d}, {1.0}), BernoulliBelief(0.5));
  const double delta = kl_diag_gaussian(q, p.change_component) - kl_diag_gaussian(q, p.static_component);
  CHECK(delta == doctest::Approx(std::log(3.0)));
  CHECK(1.0 - vade_posterior(q, p).p_one() == doctest::Approx(0.75));
  // Logistic in delta for equal priors.
  for (double m : {0.1, 0.7, 1.9}) {
    const TemporalMoGPrior pm(q, GaussianBelief({m}, {1.0}), BernoulliBelief(0.5));
    const double dl = 0.5 * m * m;
    CHECK(1.0 - vade_posterior(q, pm).p_one() == doctest::Approx(std::exp(dl) / (1 + std::exp(dl))));
  }
}

TEST_CASE("hard selection agrees with the closed form under equal priors") {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const int dim = 1 + i % 5;
    const auto q = random_belief(dim, rng);
    const TemporalMoGPrior prior(random_belief(dim, rng), random_belief(dim, rng), BernoulliBelief(0.5));
    const double delta = kl_diag_gaussian(q, prior.change_component) - kl_diag_gaussian(q, prior.static_component);
    if (std::abs(delta) <= 1e-6) continue;
    ++checked;
    CHECK((select_component(q, prior) == 1) == (vade_posterior(q, prior).p_one() > 0.5));
  }
  CHECK(checked > 9900);
}

TEST_CASE("selection is invariant to permuting latent dimensions") {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 200; ++i) {
    const auto q = random_belief(6, rng), s = random_belief(6, rng), c = random_belief(6, rng);
    std::vector<int> perm{0, 1, 2, 3, 4, 5};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute = [&](const GaussianBelief& b) {
      std::vector<double> m(6), sd(6);
      for (int k = 0; k < 6; ++k) {
        m[k] = b.mean()[perm[k]];
        sd[k] = b.stddev()[perm[k]];
      }
      return GaussianBelief(m, sd);
    };
    CHECK(select_component(q, TemporalMoGPrior(s, c, BernoulliBelief(0.5))) ==
          select_component(permute(q), TemporalMoGPrior(permute(s), permute(c), BernoulliBelief(0.5))));
  }
}

TEST_CASE("nested constraint examples") {
  CHECK(apply_nested_constraint(std::vector<std::uint8_t>{1, 0, 1}).values() == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(apply_nested_constraint(std::vector<std::uint8_t>{1, 1, 1}).values() == std::vector<std::uint8_t>{1, 1, 1});
  CHECK(apply_nested_constraint(std::vector<std::uint8_t>{0, 1, 1}).values() == std::vector<std::uint8_t>{1, 1, 1});
  CHECK_THROWS_AS(apply_nested_constraint(std::vector<std::uint8_t>{}), ContractError);
}

TEST_CASE("nested constraint output is prefix-monotone for every input up to six levels") {
  for (int n = 1; n <= 6; ++n)
    for (int mask = 0; mask < (1 << n); ++mask) {
      std::vector<std::uint8_t> raw(n);
      for (int i = 0; i < n; ++i) raw[i] = (mask >> i) & 1;
      const auto e = apply_nested_constraint(raw);
      REQUIRE(e.size() == n);
      CHECK(e.active(0));
      for (int i = 1; i < n; ++i) {
        if (!e.active(i - 1)) CHECK_FALSE(e.active(i));
        CHECK(e.active(i) == (raw[i] && e.active(i - 1)));
      }
    }
}

TEST_CASE("indicator vectors reject invalid patterns") {
  CHECK_THROWS_AS(IndicatorVector({0, 0}), ContractError);
  CHECK_THROWS_AS(IndicatorVector({1, 0, 1}), ContractError);
  CHECK_THROWS_AS(IndicatorVector({1, 2}), ContractError);
  CHECK(IndicatorVector({1, 1, 0}).depth() == 2);
  CHECK(IndicatorVector::all_active(4).depth() == 4);
}

TEST_CASE("mixture_select returns the stored components") {
  const GaussianBelief st({0.1, 0.2}, {1.0, 2.0}), ch({-0.3, 0.4}, {0.5, 0.6});
  const TemporalMoGPrior prior(st, ch, BernoulliBelief(0.3));
  CHECK(&mixture_select(0, prior) == &prior.static_component);
  CHECK(&mixture_select(1, prior) == &prior.change_component);
  CHECK(mixture_select(select_component(st, prior), prior) == st);
  CHECK_THROWS_AS(TemporalMoGPrior(st, GaussianBelief::standard(3), BernoulliBelief(0.5)), ContractError);
}
