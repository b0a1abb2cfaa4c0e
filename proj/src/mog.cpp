#include "dlh/mog.hpp"

#include <algorithm>
#include <cmath>

namespace dlh {

TemporalMoGPrior::TemporalMoGPrior(GaussianBelief static_c, GaussianBelief change_c,
                                   BernoulliBelief indicator)
    : static_component(std::move(static_c)),
      change_component(std::move(change_c)),
      indicator_prior(indicator) {
  require(static_component.dim() == change_component.dim(),
          "TemporalMoGPrior: component dimensions differ");
}

IndicatorVector::IndicatorVector(std::vector<std::uint8_t> values) : values_(std::move(values)) {
  require(!values_.empty(), "IndicatorVector: empty");
  require(values_.front() == 1, "IndicatorVector: bottom level must be active");
  for (std::size_t n = 1; n < values_.size(); ++n) {
    require(values_[n] <= 1, "IndicatorVector: flags must be 0 or 1");
    require(values_[n] == 0 || values_[n - 1] == 1,
            "IndicatorVector: a level cannot change while the level below is static");
  }
}

int IndicatorVector::depth() const {
  return static_cast<int>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

int select_component(const GaussianBelief& q, const TemporalMoGPrior& prior) {
  const double kl_change = kl_diag_gaussian(q, prior.change_component);
  const double kl_static = kl_diag_gaussian(q, prior.static_component);
  if (std::abs(kl_change - kl_static) <= kTieEps) return 0;
  return kl_change < kl_static ? 1 : 0;
}

BernoulliBelief vade_posterior(const GaussianBelief& q, const TemporalMoGPrior& prior) {
  const double p1 = std::clamp(prior.indicator_prior.p_one(), kProbEps, 1.0 - kProbEps);
  const double logit_static = kl_diag_gaussian(q, prior.change_component) -
                              kl_diag_gaussian(q, prior.static_component) +
                              std::log((1.0 - p1) / p1);
  // q(e=1) = 1 - sigmoid(logit_static) = sigmoid(-logit_static)
  const double z = -logit_static;
  const double p_one = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return BernoulliBelief(p_one);
}

IndicatorVector apply_nested_constraint(std::span<const std::uint8_t> raw) {
  require(!raw.empty(), "apply_nested_constraint: empty proposal");
  std::vector<std::uint8_t> out(raw.size());
  out[0] = 1;
  for (std::size_t n = 1; n < raw.size(); ++n) out[n] = (raw[n] != 0 && out[n - 1] != 0) ? 1 : 0;
  return IndicatorVector(std::move(out));
}

const GaussianBelief& mixture_select(int e, const TemporalMoGPrior& prior) {
  return e == 0 ? prior.static_component : prior.change_component;
}

}  // namespace dlh
