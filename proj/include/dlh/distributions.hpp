#pragma once

#include <span>
#include <vector>

#include "dlh/autodiff.hpp"

namespace dlh {

// Floor added to softplus-parameterized standard deviations.
inline constexpr double kStdFloor = 1e-4;
// Bernoulli prior probabilities are clamped to [kProbEps, 1 - kProbEps].
inline constexpr double kProbEps = 1e-6;

// Diagonal Gaussian N(mean, diag(std^2)).
class GaussianBelief {
 public:
  GaussianBelief() = default;
  GaussianBelief(std::vector<double> mean, std::vector<double> stddev);
  static GaussianBelief standard(int dim);

  int dim() const { return static_cast<int>(mean_.size()); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

  friend bool operator==(const GaussianBelief&, const GaussianBelief&) = default;

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

class BernoulliBelief {
 public:
  BernoulliBelief() = default;
  explicit BernoulliBelief(double p_one);
  double p_one() const { return p_one_; }

 private:
  double p_one_ = 0.5;
};

// Closed-form KL(q || p) in nats, summed over dimensions.
double kl_diag_gaussian(const GaussianBelief& q, const GaussianBelief& p);
// KL(q || p) with p clamped by kProbEps; for q in {0,1} this is -log p(selected).
double kl_bernoulli(const BernoulliBelief& q, const BernoulliBelief& p);
// mean + std * noise
std::vector<double> reparam_sample(const GaussianBelief& b, std::span<const double> noise);
// Sum of elementwise log N(x | mean, std^2) with a shared scalar std.
double gaussian_log_density(std::span<const double> x, std::span<const double> mean, double std);

// Differentiable Gaussian on an autodiff graph; mean and std are [rows, dim].
struct GaussianVar {
  ad::Var mean;
  ad::Var stddev;

  // Row `row` as a value-level belief.
  GaussianBelief belief(int row = 0) const;
};

// softplus(raw) + kStdFloor
ad::Var std_from_raw(ad::Var raw);
// Sum over all rows and dimensions of KL(q || p) -> [1].
ad::Var kl_diag_gaussian(const GaussianVar& q, const GaussianVar& p);
// p_one is [1] (already clamped or not); q_one is a constant.
ad::Var kl_bernoulli(double q_one, ad::Var p_one);
ad::Var reparam_sample(const GaussianVar& b, const Tensor& noise);
ad::Var gaussian_log_density(const Tensor& x, ad::Var mean, double std);
// sigmoid(logit) clamped to [kProbEps, 1 - kProbEps].
ad::Var probability_from_logit(ad::Var logit);

}  // namespace dlh
