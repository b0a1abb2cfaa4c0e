#include "dlh/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dlh {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)

// One dimension of KL(N(mq, sq^2) || N(mp, sp^2)). Written via expm1 so that
// nearly equal scales do not cancel catastrophically.
double kl_term(double mq, double sq, double mp, double sp) {
  const double u = 2.0 * (std::log(sq) - std::log(sp));
  const double d = (mq - mp) / sp;
  return std::max(0.0, 0.5 * (std::expm1(u) - u + d * d));
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double xlogy_ratio(double x, double num, double den) {
  return x == 0.0 ? 0.0 : x * std::log(num / den);
}

}  // namespace

GaussianBelief::GaussianBelief(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  require(mean_.size() == std_.size(), "GaussianBelief: mean and std dimensions differ");
  for (double s : std_)
    require(s > 0.0 && std::isfinite(s), "GaussianBelief: std must be strictly positive");
}

GaussianBelief GaussianBelief::standard(int dim) {
  return {std::vector<double>(static_cast<std::size_t>(dim), 0.0),
          std::vector<double>(static_cast<std::size_t>(dim), 1.0)};
}

BernoulliBelief::BernoulliBelief(double p_one) : p_one_(p_one) {
  require(p_one >= 0.0 && p_one <= 1.0, "BernoulliBelief: probability outside [0,1]");
}

double kl_diag_gaussian(const GaussianBelief& q, const GaussianBelief& p) {
  require(q.dim() == p.dim(), "kl_diag_gaussian: dimension mismatch");
  double kl = 0.0;
  for (int i = 0; i < q.dim(); ++i)
    kl += kl_term(q.mean()[i], q.stddev()[i], p.mean()[i], p.stddev()[i]);
  return kl;
}

double kl_bernoulli(const BernoulliBelief& q, const BernoulliBelief& p) {
  const double qp = q.p_one();
  const double pp = clamp_prob(p.p_one());
  return std::max(0.0, xlogy_ratio(qp, qp, pp) + xlogy_ratio(1.0 - qp, 1.0 - qp, 1.0 - pp));
}

std::vector<double> reparam_sample(const GaussianBelief& b, std::span<const double> noise) {
  require(static_cast<int>(noise.size()) == b.dim(), "reparam_sample: noise dimension mismatch");
  std::vector<double> out(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) out[i] = b.mean()[i] + b.stddev()[i] * noise[i];
  return out;
}

double gaussian_log_density(std::span<const double> x, std::span<const double> mean, double std) {
  require(x.size() == mean.size(), "gaussian_log_density: shape mismatch");
  require(std > 0.0, "gaussian_log_density: std must be positive");
  const double log_std = std::log(std);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) / std;
    acc += -kHalfLog2Pi - log_std - 0.5 * z * z;
  }
  return acc;
}

GaussianBelief GaussianVar::belief(int row) const {
  const Tensor& m = mean.value();
  const Tensor& s = stddev.value();
  const int d = m.cols();
  auto first = m.data.begin() + static_cast<std::ptrdiff_t>(row) * d;
  auto sfirst = s.data.begin() + static_cast<std::ptrdiff_t>(row) * d;
  return {std::vector<double>(first, first + d), std::vector<double>(sfirst, sfirst + d)};
}

ad::Var std_from_raw(ad::Var raw) { return ad::add_scalar(ad::softplus(raw), kStdFloor); }

ad::Var kl_diag_gaussian(const GaussianVar& q, const GaussianVar& p) {
  const Tensor& mq = q.mean.value();
  const Tensor& sq = q.stddev.value();
  const Tensor& mp = p.mean.value();
  const Tensor& sp = p.stddev.value();
  require(mq.shape == sq.shape && mp.shape == sp.shape && mq.shape == mp.shape, [&] { return "kl_diag_gaussian: dimension mismatch " + shape_str(mq.shape) + " vs " + shape_str(mp.shape); });
  double kl = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) kl += kl_term(mq[i], sq[i], mp[i], sp[i]);
  const int a = q.mean.id, b = q.stddev.id, c = p.mean.id, d = p.stddev.id;
  return q.mean.graph->make(
      Tensor({1}, {kl}), {q.mean, q.stddev, p.mean, p.stddev}, [a, b, c, d](ad::Graph& g, int self) {
        const double gy = g.grad_ref(self)[0];
        const Tensor& mq = g.value(a);
        const Tensor& sq = g.value(b);
        const Tensor& mp = g.value(c);
        const Tensor& sp = g.value(d);
        const std::size_t n = mq.size();
        auto acc = [&](int id, auto f) {
          if (!g.requires_grad(id)) return;
          Tensor& gt = g.grad_ref(id);
          for (std::size_t i = 0; i < n; ++i) gt[i] += gy * f(i);
        };
        acc(a, [&](std::size_t i) { return (mq[i] - mp[i]) / (sp[i] * sp[i]); });
        acc(c, [&](std::size_t i) { return -(mq[i] - mp[i]) / (sp[i] * sp[i]); });
        acc(b, [&](std::size_t i) { return -1.0 / sq[i] + sq[i] / (sp[i] * sp[i]); });
        acc(d, [&](std::size_t i) {
          const double dm = mq[i] - mp[i];
          return 1.0 / sp[i] - (sq[i] * sq[i] + dm * dm) / (sp[i] * sp[i] * sp[i]);
        });
      });
}

ad::Var kl_bernoulli(double q_one, ad::Var p_one) {
  require(q_one >= 0.0 && q_one <= 1.0, "kl_bernoulli: q outside [0,1]");
  require(p_one.value().size() == 1, "kl_bernoulli: p must be a scalar");
  const double raw = p_one.value()[0];
  const double pp = clamp_prob(raw);
  const double kl = std::max(0.0, xlogy_ratio(q_one, q_one, pp) +
                                      xlogy_ratio(1.0 - q_one, 1.0 - q_one, 1.0 - pp));
  const int pi = p_one.id;
  const bool clamped = pp != raw;
  return p_one.graph->make(Tensor({1}, {kl}), {p_one}, [pi, q_one, pp, clamped](ad::Graph& g, int self) {
    if (clamped) return;
    const double gy = g.grad_ref(self)[0];
    g.grad_ref(pi)[0] += gy * (-q_one / pp + (1.0 - q_one) / (1.0 - pp));
  });
}

ad::Var reparam_sample(const GaussianVar& b, const Tensor& noise) {
  require(noise.size() == b.mean.value().size(), "reparam_sample: noise dimension mismatch");
  ad::Var eps = b.mean.graph->constant(Tensor(b.mean.shape(), noise.data));
  return ad::add(b.mean, ad::mul(b.stddev, eps));
}

ad::Var gaussian_log_density(const Tensor& x, ad::Var mean, double std) {
  require(x.size() == mean.value().size(), "gaussian_log_density: shape mismatch");
  require(std > 0.0, "gaussian_log_density: std must be positive");
  const double ll = gaussian_log_density(x.span(), mean.value().span(), std);
  const int mi = mean.id;
  return mean.graph->make(Tensor({1}, {ll}), {mean}, [mi, x, std](ad::Graph& g, int self) {
    const double gy = g.grad_ref(self)[0];
    const Tensor& m = g.value(mi);
    Tensor& gm = g.grad_ref(mi);
    const double inv_var = 1.0 / (std * std);
    for (std::size_t i = 0; i < m.size(); ++i) gm[i] += gy * (x[i] - m[i]) * inv_var;
  });
}

ad::Var probability_from_logit(ad::Var logit) {
  ad::Var p = ad::sigmoid(logit);
  const Tensor& pv = p.value();
  Tensor clamped = pv;
  bool any = false;
  for (auto& v : clamped.data) {
    const double c = clamp_prob(v);
    any = any || c != v;
    v = c;
  }
  if (!any) return p;
  const int pi = p.id;
  return p.graph->make(std::move(clamped), {p}, [pi](ad::Graph& g, int self) {
    const Tensor& y = g.value(self);
    const Tensor& x = g.value(pi);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_ref(pi);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == x[i]) gx[i] += gy[i];
  });
}

}  // namespace dlh
