#include "dlh/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dlh {

double ElboTerms::total_kl() const {
  double s = 0.0;
  for (double v : kl_state) s += v;
  for (double v : kl_indicator) s += v;
  return s;
}

Tensor frame_at(const Tensor& frames, int t) {
  require(frames.rank() == 4 && t >= 0 && t < frames.dim(0), "frame_at: index out of range");
  const std::size_t stride = frames.size() / static_cast<std::size_t>(frames.dim(0));
  Tensor out({frames.dim(1), frames.dim(2), frames.dim(3)});
  std::copy_n(frames.data.begin() + static_cast<std::ptrdiff_t>(t * stride), stride, out.data.begin());
  return out;
}

Tensor standard_normal(std::vector<int> shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = dist(rng);
  return t;
}

namespace {

double diag_log_density(const std::vector<double>& x, const GaussianBelief& b) {
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - b.mean()[i]) / b.stddev()[i];
    lp += -0.5 * z * z - std::log(b.stddev()[i]) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

}  // namespace

void Engine::check_finite(ad::Var v, int level, const char* head) const {
  for (double x : v.value().data)
    if (!std::isfinite(x))
      throw NumericalError("non-finite value at level " + std::to_string(level) + " in " + head);
}

std::vector<std::vector<ad::Var>> Engine::encode_frames(const Tensor& frames) {
  require(frames.rank() == 4, "encode_frames: expected [T, C, H, W]");
  const int T = frames.dim(0);
  auto xs = net_.encode(graph_, graph_.constant(frames));
  for (std::size_t n = 0; n < xs.size(); ++n) check_finite(xs[n], static_cast<int>(n) + 1, "encoder");
  std::vector<std::vector<ad::Var>> out(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    for (const auto& x : xs) out[t].push_back(T == 1 ? x : ad::slice_rows(x, t, 1));
  return out;
}

void Engine::descend(HierarchyState& state, int top, const std::vector<ad::Var>* features,
                     std::mt19937_64& rng, StepResult& out, bool from_posterior) {
  const int N = net_.levels();
  const int latent = net_.config().latent_dim;
  ad::Var c = top == N ? net_.top_context(graph_) : state.levels[top].below_context;
  for (int n = top; n >= 1; --n) {
    LevelState& lv = state.levels[n - 1];
    GaussianVar change = net_.prior_state_head(graph_, n, lv.recurrent, c);
    check_finite(change.mean, n, "prior-state head");
    check_finite(change.stddev, n, "prior-state head");
    ad::Var s;
    if (from_posterior) {
      GaussianVar q = net_.posterior_head(graph_, n, (*features)[n - 1], c);
      ++out.counts.final_posterior[n - 1];
      check_finite(q.mean, n, "posterior head");
      check_finite(q.stddev, n, "posterior head");
      s = reparam_sample(q, standard_normal({1, latent}, rng));
      ad::Var kl = kl_diag_gaussian(q, change);
      out.terms.kl_state[n - 1] = kl.item();
      if (graph_.grad_enabled()) out.terms.kl_state_vars[n - 1] = kl;
      lv.posterior = q.belief();
      lv.posterior_var = q;
      out.terms.log_ratio_state[n - 1] =
          diag_log_density(s.value().data, change.belief()) - diag_log_density(s.value().data, lv.posterior);
    } else {
      s = reparam_sample(change, standard_normal({1, latent}, rng));
      lv.posterior = change.belief();
      lv.posterior_var = change;
    }
    ad::Var below = net_.decode(graph_, n, s, c);
    ++out.counts.decoder_calls[n - 1];
    check_finite(below, n, "decoder");
    lv.sample = s;
    lv.context = c;
    lv.below_context = below;
    c = below;
  }
  out.image_hidden = state.levels[0].below_context;
}

// The blocking level keeps its carried state, but its fresh posterior pays
// the KL against the static component (the carried posterior). Levels above K
// are frozen, so their carried context is exact.
void Engine::static_level_kl(HierarchyState& state, int K, const std::vector<ad::Var>& features,
                             StepResult& out) {
  const int N = net_.levels();
  LevelState& lv = state.levels[K - 1];
  ad::Var c = K == N ? net_.top_context(graph_) : state.levels[K].below_context;
  GaussianVar q = net_.posterior_head(graph_, K, features[K - 1], c);
  ++out.counts.final_posterior[K - 1];
  check_finite(q.mean, K, "posterior head");
  check_finite(q.stddev, K, "posterior head");
  ad::Var kl = kl_diag_gaussian(q, lv.posterior_var);
  out.terms.kl_state[K - 1] = kl.item();
  if (graph_.grad_enabled()) out.terms.kl_state_vars[K - 1] = kl;
  out.terms.log_ratio_state[K - 1] = -kl.item();  // no sample is drawn at K
}

void Engine::advance_recurrent(HierarchyState& state, const IndicatorVector& e) {
  for (int n = 1; n <= net_.levels(); ++n) {
    LevelState& lv = state.levels[n - 1];
    if (e.active(n - 1)) {
      lv.recurrent = net_.temporal_step(graph_, n, lv.sample, lv.recurrent);
      check_finite(lv.recurrent, n, "temporal GRU");
    }
    lv.factor = net_.factor_step(graph_, n, lv.sample, lv.factor);
    check_finite(lv.factor, n, "prior-factor GRU");
  }
}

void Engine::finish_step(HierarchyState& state, const Tensor* frame, StepResult& out,
                         bool decode_frame) {
  state.t += 1;
  if (!decode_frame) return;
  out.frame_mean = net_.decode_image(graph_, out.image_hidden);
  check_finite(out.frame_mean, 1, "image decoder");
  if (frame) {
    ad::Var ll = gaussian_log_density(*frame, out.frame_mean, net_.config().obs_std);
    out.terms.recon_loglik = ll.item();
    if (graph_.grad_enabled()) out.terms.recon_var = ll;
  }
}

namespace {

StepResult empty_result(int N, bool grad) {
  StepResult r;
  r.terms.kl_state.assign(static_cast<std::size_t>(N), 0.0);
  r.terms.kl_indicator.assign(static_cast<std::size_t>(N), 0.0);
  r.terms.log_ratio_state.assign(static_cast<std::size_t>(N), 0.0);
  if (grad) {
    r.terms.kl_state_vars.resize(static_cast<std::size_t>(N));
    r.terms.kl_indicator_vars.resize(static_cast<std::size_t>(N));
  }
  r.counts.provisional_posterior.assign(static_cast<std::size_t>(N), 0);
  r.counts.final_posterior.assign(static_cast<std::size_t>(N), 0);
  r.counts.decoder_calls.assign(static_cast<std::size_t>(N), 0);
  return r;
}

}  // namespace

StepResult Engine::init_state(HierarchyState& state, const Tensor& frame,
                              const std::vector<ad::Var>& features, std::mt19937_64& rng,
                              bool decode_frame) {
  const int N = net_.levels();
  require(static_cast<int>(features.size()) == N, "init_state: one feature per level required");
  StepResult out = empty_result(N, graph_.grad_enabled());
  state = HierarchyState{};
  state.levels.resize(static_cast<std::size_t>(N));
  for (auto& lv : state.levels) {
    lv.recurrent = net_.zero_recurrent(graph_);
    lv.factor = net_.zero_factor(graph_);
  }
  state.indicators = IndicatorVector::all_active(N);
  state.blocking_level = N + 1;

  std::vector<ad::Var> probs;
  for (int n = 1; n <= N; ++n) {
    probs.push_back(net_.prior_factor_head(graph_, n, state.levels[n - 1].factor));
    check_finite(probs.back(), n, "prior-factor head");
    out.change_probability.push_back(probs.back().item());
  }
  descend(state, N, &features, rng, out, true);
  for (int n = 1; n <= N; ++n) {
    ad::Var kl = kl_bernoulli(1.0, probs[n - 1]);
    out.terms.kl_indicator[n - 1] = kl.item();
    if (graph_.grad_enabled()) out.terms.kl_indicator_vars[n - 1] = kl;
  }
  advance_recurrent(state, state.indicators);
  finish_step(state, &frame, out, decode_frame);
  return out;
}

StepResult Engine::filter_step(HierarchyState& state, const Tensor& frame,
                               const std::vector<ad::Var>& features, std::mt19937_64& rng,
                               bool decode_frame) {
  const int N = net_.levels();
  require(state.num_levels() == N && state.t >= 1, "filter_step: state not initialised");
  require(static_cast<int>(features.size()) == N, "filter_step: one feature per level required");
  StepResult out = empty_result(N, graph_.grad_enabled());

  std::vector<ad::Var> probs;
  for (int n = 1; n <= N; ++n) {
    probs.push_back(net_.prior_factor_head(graph_, n, state.levels[n - 1].factor));
    check_finite(probs.back(), n, "prior-factor head");
    out.change_probability.push_back(probs.back().item());
  }

  // Bottom-up selection. Contexts above the level under test come from the
  // static priors' means, so nothing above the blocking level is inferred.
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(N), 0);
  raw[0] = 1;
  if (N > 1) {
    ad::Graph scratch(false);
    std::vector<ad::Var> approx_context(static_cast<std::size_t>(N + 1));
    approx_context[N] = net_.top_context(scratch);
    for (int j = N; j >= 3; --j) {
      const auto& mean = state.levels[j - 1].posterior.mean();
      ad::Var s = scratch.constant(Tensor::row_vector(mean));
      approx_context[j - 1] = net_.decode(scratch, j, s, approx_context[j]);
    }
    for (int n = 2; n <= N; ++n) {
      const LevelState& lv = state.levels[n - 1];
      ad::Var c = approx_context[n];
      GaussianVar change = net_.prior_state_head(scratch, n, scratch.constant(lv.recurrent.value()), c);
      GaussianVar provisional = net_.posterior_head(scratch, n, scratch.constant(features[n - 1].value()), c);
      ++out.counts.provisional_posterior[n - 1];
      check_finite(provisional.mean, n, "posterior head (selection)");
      check_finite(provisional.stddev, n, "posterior head (selection)");
      const TemporalMoGPrior prior(lv.posterior, change.belief(), BernoulliBelief(out.change_probability[n - 1]));
      raw[n - 1] = static_cast<std::uint8_t>(select_component(provisional.belief(), prior));
      if (raw[n - 1] == 0) break;
    }
  }
  const IndicatorVector e = apply_nested_constraint(raw);
  const int depth = e.depth();
  state.indicators = e;
  state.blocking_level = depth + 1;

  descend(state, depth, &features, rng, out, true);
  if (depth < N) static_level_kl(state, depth + 1, features, out);
  for (int n = 1; n <= N; ++n) {
    ad::Var kl = kl_bernoulli(e.active(n - 1) ? 1.0 : 0.0, probs[n - 1]);
    out.terms.kl_indicator[n - 1] = kl.item();
    if (graph_.grad_enabled()) out.terms.kl_indicator_vars[n - 1] = kl;
  }
  advance_recurrent(state, e);
  finish_step(state, &frame, out, decode_frame);
  return out;
}

StepResult Engine::init_state(HierarchyState& state, const Tensor& frame, std::mt19937_64& rng) {
  const auto& cfg = net_.config();
  Tensor batch({1, cfg.frame_c, cfg.frame_h, cfg.frame_w}, frame.data);
  auto features = encode_frames(batch);
  return init_state(state, frame, features.front(), rng);
}

StepResult Engine::filter_step(HierarchyState& state, const Tensor& frame, std::mt19937_64& rng) {
  const auto& cfg = net_.config();
  Tensor batch({1, cfg.frame_c, cfg.frame_h, cfg.frame_w}, frame.data);
  auto features = encode_frames(batch);
  return filter_step(state, frame, features.front(), rng);
}

FilterResult Engine::filter_sequence(const Tensor& frames, std::mt19937_64& rng) {
  require(frames.rank() == 4 && frames.dim(0) >= 1, "filter_sequence: need at least one frame");
  const int T = frames.dim(0);
  auto features = encode_frames(frames);
  FilterResult result;
  std::vector<ad::Var> hidden;
  std::vector<Tensor> targets;
  for (int t = 0; t < T; ++t) {
    targets.push_back(frame_at(frames, t));
    StepResult r = t == 0 ? init_state(result.state, targets.back(), features[t], rng, false)
                          : filter_step(result.state, targets.back(), features[t], rng, false);
    hidden.push_back(r.image_hidden);
    result.terms.push_back(std::move(r.terms));
    result.indicators.push_back(result.state.indicators);
    result.counts.push_back(std::move(r.counts));
    result.change_probability.push_back(std::move(r.change_probability));
  }
  result.frame_means = net_.decode_image(graph_, T == 1 ? hidden.front() : ad::concat_rows(hidden));
  check_finite(result.frame_means, 1, "image decoder");
  const double sigma = net_.config().obs_std;
  for (int t = 0; t < T; ++t) {
    ad::Var mean_t = T == 1 ? result.frame_means : ad::slice_rows(result.frame_means, t, 1);
    ad::Var ll = gaussian_log_density(targets[t], mean_t, sigma);
    result.terms[t].recon_loglik = ll.item();
    if (graph_.grad_enabled()) result.terms[t].recon_var = ll;
  }
  return result;
}

RolloutTrace Engine::open_loop_rollout(HierarchyState state, int horizon, std::mt19937_64& rng,
                                       bool argmax) {
  require(horizon >= 0, "open_loop_rollout: horizon must be >= 0");
  require(state.t >= 1, "open_loop_rollout: state must have filtered at least one frame");
  const int N = net_.levels();
  RolloutTrace trace;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int step = 0; step < horizon; ++step) {
    StepResult out = empty_result(N, false);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(N), 0);
    std::vector<double> probs;
    for (int n = 1; n <= N; ++n) {
      ad::Var p = net_.prior_factor_head(graph_, n, state.levels[n - 1].factor);
      check_finite(p, n, "prior-factor head");
      probs.push_back(p.item());
    }
    raw[0] = 1;
    for (int n = 2; n <= N; ++n) {
      if (!raw[n - 2]) break;
      const double p = probs[n - 1];
      raw[n - 1] = argmax ? (p > 0.5) : (unif(rng) < p);
    }
    const IndicatorVector e = apply_nested_constraint(raw);
    state.indicators = e;
    state.blocking_level = e.depth() + 1;
    descend(state, e.depth(), nullptr, rng, out, false);

    std::vector<double> kl_ind;
    for (int n = 1; n <= N; ++n) {
      const double p1 = std::clamp(probs[n - 1], kProbEps, 1.0 - kProbEps);
      kl_ind.push_back(-std::log(e.active(n - 1) ? p1 : 1.0 - p1));
    }
    advance_recurrent(state, e);
    finish_step(state, nullptr, out, true);

    const Tensor& img = out.frame_mean.value();
    const auto& cfg = net_.config();
    trace.frames.emplace_back(std::vector<int>{cfg.frame_c, cfg.frame_h, cfg.frame_w}, img.data);
    trace.indicators.push_back(e);
    std::vector<std::vector<double>> samples;
    for (const auto& lv : state.levels) samples.push_back(lv.sample.value().data);
    trace.latent_samples.push_back(std::move(samples));
    trace.kl_state.emplace_back(static_cast<std::size_t>(N), 0.0);
    trace.kl_indicator.push_back(std::move(kl_ind));
  }
  return trace;
}

HierarchyState Engine::import_state(const HierarchyState& other) {
  HierarchyState s = other;
  auto copy = [&](const ad::Var& v) { return v.valid() ? graph_.constant(v.value()) : ad::Var{}; };
  for (auto& lv : s.levels) {
    lv.sample = copy(lv.sample);
    lv.recurrent = copy(lv.recurrent);
    lv.factor = copy(lv.factor);
    lv.context = copy(lv.context);
    lv.below_context = copy(lv.below_context);
    if (lv.posterior_var.mean.valid())
      lv.posterior_var = {copy(lv.posterior_var.mean), copy(lv.posterior_var.stddev)};
  }
  return s;
}

}  // namespace dlh
