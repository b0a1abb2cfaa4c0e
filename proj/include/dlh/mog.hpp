#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dlh/distributions.hpp"

namespace dlh {

// KL differences within this many nats count as a tie and resolve to static.
inline constexpr double kTieEps = 1e-9;

// Two-component temporal mixture at one level: "static" is the carried
// previous posterior, "change" the network's prediction.
struct TemporalMoGPrior {
  GaussianBelief static_component;
  GaussianBelief change_component;
  BernoulliBelief indicator_prior;  // p(e = 1)

  TemporalMoGPrior(GaussianBelief static_c, GaussianBelief change_c, BernoulliBelief indicator);
};

// Per-level change flags, level 1 first. Always starts with 1 and never has a
// 1 after a 0.
class IndicatorVector {
 public:
  IndicatorVector() = default;
  explicit IndicatorVector(std::vector<std::uint8_t> values);
  static IndicatorVector all_active(int levels) {
    return IndicatorVector(std::vector<std::uint8_t>(static_cast<std::size_t>(levels), 1));
  }

  int size() const { return static_cast<int>(values_.size()); }
  bool active(int level_index) const { return values_.at(static_cast<std::size_t>(level_index)) != 0; }
  const std::vector<std::uint8_t>& values() const { return values_; }
  // Number of active levels; equals the 0-based index of the first static level.
  int depth() const;

  friend bool operator==(const IndicatorVector&, const IndicatorVector&) = default;

 private:
  std::vector<std::uint8_t> values_;
};

// 1 (change) iff KL(q || change) < KL(q || static) by more than kTieEps.
int select_component(const GaussianBelief& q, const TemporalMoGPrior& prior);

// Softmax-form component posterior from the two KLs and the log prior odds.
// Returned p_one is q(e = 1). Diagnostic and test oracle only.
BernoulliBelief vade_posterior(const GaussianBelief& q, const TemporalMoGPrior& prior);

// Level 1 forced on; level n+1 can only be on when level n is on.
IndicatorVector apply_nested_constraint(std::span<const std::uint8_t> raw);

const GaussianBelief& mixture_select(int e, const TemporalMoGPrior& prior);

}  // namespace dlh
