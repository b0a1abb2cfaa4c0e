#include "dlh/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace dlh {
namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, [&] {
    return std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape);
  });
  require(a.rank() == 3, [&] { return std::string(op) + ": expected [C, H, W] frames"; });
}

Tensor clamp01(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<double> gray(const Tensor& f) {
  const int C = f.dim(0);
  const std::size_t hw = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
  std::vector<double> g(hw, 0.0);
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) g[i] += f.data[c * hw + i];
  for (double& v : g) v /= C;
  return g;
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    w[i] = std::exp(-x * x / (2 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

Tensor crop_frames(const Tensor& seq, int start, int len) {
  const std::size_t per = seq.size() / static_cast<std::size_t>(seq.dim(0));
  Tensor out({len, seq.dim(1), seq.dim(2), seq.dim(3)});
  std::copy_n(seq.data.begin() + static_cast<std::ptrdiff_t>(start * per), per * len, out.data.begin());
  return out;
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                   static_cast<std::uint32_t>(b)};
  return std::mt19937_64(ss);
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& gt) {
  check_same(pred, gt, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& pred, const Tensor& gt) {
  check_same(pred, gt, "ssim");
  constexpr int kWin = 11;
  const int H = pred.dim(1), W = pred.dim(2);
  require(H >= kWin && W >= kWin, "ssim: frame smaller than the 11x11 window");
  static const std::vector<double> w = gaussian_window(kWin, 1.5);
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const auto x = gray(pred), y = gray(gt);
  double total = 0.0;
  for (int oy = 0; oy + kWin <= H; ++oy)
    for (int ox = 0; ox + kWin <= W; ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double wij = w[i] * w[j];
          const double a = x[(oy + i) * W + ox + j], b = y[(oy + i) * W + ox + j];
          mx += wij * a;
          my += wij * b;
          sxx += wij * a * a;
          syy += wij * b * b;
          sxy += wij * a * b;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
  return total / ((H - kWin + 1) * (W - kWin + 1));
}

double score(Metric m, const Tensor& pred, const Tensor& gt) {
  return m == Metric::Ssim ? ssim(pred, gt) : psnr(pred, gt);
}

HierarchyState filter_context(const Network& net, ad::Graph& graph, const Tensor& context,
                              std::mt19937_64& rng, std::vector<IndicatorVector>* indicators) {
  require(context.rank() == 4 && context.dim(0) >= 1, "filter_context: empty context");
  Engine engine(net, graph);
  auto features = engine.encode_frames(context);
  HierarchyState state;
  for (int t = 0; t < context.dim(0); ++t) {
    const Tensor frame = frame_at(context, t);
    if (t == 0)
      engine.init_state(state, frame, features[t], rng, false);
    else
      engine.filter_step(state, frame, features[t], rng, false);
    if (indicators) indicators->push_back(state.indicators);
  }
  return state;
}

BestOfK best_of_k(const Network& net, const Tensor& context, const Tensor& gt_future, int k,
                  Metric metric, std::uint64_t seed) {
  require(k >= 1, "best_of_k: k must be >= 1");
  require(context.rank() == 4 && context.dim(0) >= 1, "best_of_k: empty context");
  require(gt_future.rank() == 4, "best_of_k: ground truth must be [T, C, H, W]");
  const int horizon = gt_future.dim(0);
  BestOfK out;
  ad::Graph ctx_graph(false);
  auto ctx_rng = stream(seed, 0, 1);
  const HierarchyState state = filter_context(net, ctx_graph, context, ctx_rng, &out.context_indicators);

  std::vector<RolloutTrace> traces(static_cast<std::size_t>(k));
  std::vector<std::vector<double>> curves(static_cast<std::size_t>(k));
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < k; ++j) {
    try {
      ad::Graph g(false);
      Engine engine(net, g);
      auto rng = stream(seed, static_cast<std::uint64_t>(j) + 1);
      traces[j] = engine.open_loop_rollout(engine.import_state(state), horizon, rng);
      for (int t = 0; t < horizon; ++t)
        curves[j].push_back(score(metric, clamp01(traces[j].frames[t]), frame_at(gt_future, t)));
    } catch (const std::exception& e) {
#pragma omp critical(dlh_best_of_k)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericalError(error);
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    double mean = 0.0;
    for (double v : curves[j]) mean += v;
    mean = horizon ? mean / horizon : 0.0;
    out.rollout_means.push_back(mean);
    if (mean > best) {
      best = mean;
      out.best_index = j;
    }
  }
  out.best = std::move(traces[out.best_index]);
  out.curve = std::move(curves[out.best_index]);
  return out;
}

double mean_depth(const std::vector<IndicatorVector>& indicators) {
  require(!indicators.empty(), "mean_depth: no indicators");
  double s = 0.0;
  for (const auto& e : indicators)
    for (auto v : e.values()) s += v;
  return s / static_cast<double>(indicators.size());
}

KlReport kl_per_level_report(const Network& net, const Dataset& data, int count, int length,
                             std::uint64_t seed) {
  require(count >= 1 && length >= 1, "kl_per_level_report: count and length must be positive");
  const int N = net.levels();
  std::vector<std::vector<double>> st(static_cast<std::size_t>(count)), ind(static_cast<std::size_t>(count));
  // Active level-steps and steps, kept as integers so L-bar is exact.
  std::vector<long> active(static_cast<std::size_t>(count), 0), steps(static_cast<std::size_t>(count), 0);
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    try {
      const Tensor seq = crop_frames(data.sequence(static_cast<std::uint64_t>(i)), 0, length);
      ad::Graph g(false);
      Engine engine(net, g);
      auto rng = stream(seed, static_cast<std::uint64_t>(i));
      const FilterResult fr = engine.filter_sequence(seq, rng);
      st[i].assign(static_cast<std::size_t>(N), 0.0);
      ind[i].assign(static_cast<std::size_t>(N), 0.0);
      for (const auto& t : fr.terms)
        for (int n = 0; n < N; ++n) {
          st[i][n] += t.kl_state[n];
          ind[i][n] += t.kl_indicator[n];
        }
      for (const auto& e : fr.indicators)
        for (auto v : e.values()) active[i] += v;
      steps[i] = static_cast<long>(fr.indicators.size());
    } catch (const std::exception& e) {
#pragma omp critical(dlh_kl_report)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericalError(error);
  KlReport r;
  r.state.assign(static_cast<std::size_t>(N), 0.0);
  r.indicator.assign(static_cast<std::size_t>(N), 0.0);
  r.steps = static_cast<long>(count) * length;
  for (int i = 0; i < count; ++i) {
    for (int n = 0; n < N; ++n) {
      r.state[n] += st[i][n] / static_cast<double>(r.steps);
      r.indicator[n] += ind[i][n] / static_cast<double>(r.steps);
    }
  }
  long total_active = 0, total_steps = 0;
  for (int i = 0; i < count; ++i) {
    total_active += active[i];
    total_steps += steps[i];
  }
  r.mean_depth = static_cast<double>(total_active) / static_cast<double>(total_steps);
  for (int n = 0; n < N; ++n) r.per_level.push_back(r.state[n] + r.indicator[n]);
  return r;
}

std::vector<PriorRow> prior_change_report(const Network& net, const Dataset& data, double lambda,
                                          int count, int length, std::uint64_t seed, int level) {
  require(level >= 1 && level <= net.levels(), "prior_change_report: level out of range");
  require(count >= 1 && length >= 2, "prior_change_report: need count >= 1 and length >= 2");
  std::vector<std::vector<std::pair<bool, double>>> samples(static_cast<std::size_t>(count));
  std::string error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    try {
      const Tensor seq = crop_frames(data.sequence(static_cast<std::uint64_t>(i)), 0, length);
      ad::Graph g(false);
      Engine engine(net, g);
      auto rng = stream(seed, static_cast<std::uint64_t>(i));
      const FilterResult fr = engine.filter_sequence(seq, rng);
      for (int t = 1; t < length; ++t)
        samples[i].emplace_back(fr.indicators[t].active(level - 1), fr.change_probability[t][level - 1]);
    } catch (const std::exception& e) {
#pragma omp critical(dlh_prior_report)
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw NumericalError(error);
  std::vector<PriorRow> rows;
  for (const bool change : {true, false}) {
    PriorRow r;
    r.lambda = lambda;
    r.condition = change ? "change" : "static";
    double sum = 0.0, sq = 0.0;
    for (const auto& s : samples)
      for (const auto& [active, p] : s)
        if (active == change) {
          ++r.count;
          sum += p;
          sq += p * p;
        }
    if (r.count == 0) {
      r.mean_p = std::numeric_limits<double>::quiet_NaN();
      r.stderr_p = std::numeric_limits<double>::quiet_NaN();
    } else {
      r.mean_p = sum / r.count;
      const double var = r.count > 1 ? std::max(0.0, (sq - r.count * r.mean_p * r.mean_p) / (r.count - 1)) : 0.0;
      r.stderr_p = std::sqrt(var / r.count);
    }
    rows.push_back(r);
  }
  return rows;
}

AblationResult level_sampling_ablation(const Network& net, const HierarchyState& state,
                                       const std::set<int>& sample_levels,
                                       const std::set<int>& fix_levels, int count,
                                       std::uint64_t seed) {
  const int N = net.levels();
  require(count >= 1, "level_sampling_ablation: count must be >= 1");
  require(state.num_levels() == N && state.t >= 1, "level_sampling_ablation: state not filtered");
  for (int n : sample_levels) {
    require(n >= 1 && n <= N, "level_sampling_ablation: level out of range");
    require(!fix_levels.count(n), "level_sampling_ablation: a level is both sampled and fixed");
  }
  for (int n = 1; n <= N; ++n)
    require(sample_levels.count(n) || fix_levels.count(n),
            "level_sampling_ablation: every level must be sampled or fixed");

  const auto& cfg = net.config();
  AblationResult out;
  out.frames.resize(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int j = 0; j < count; ++j) {
    ad::Graph g(false);
    auto rng = stream(seed, static_cast<std::uint64_t>(j));
    ad::Var c = net.top_context(g);
    for (int n = N; n >= 1; --n) {
      const LevelState& lv = state.levels[n - 1];
      ad::Var s;
      if (sample_levels.count(n)) {
        GaussianVar change = net.prior_state_head(g, n, g.constant(lv.recurrent.value()), c);
        s = reparam_sample(change, standard_normal({1, cfg.latent_dim}, rng));
      } else {
        s = g.constant(Tensor::row_vector(lv.posterior.mean()));
      }
      c = net.decode(g, n, s, c);
    }
    out.frames[j] = Tensor({cfg.frame_c, cfg.frame_h, cfg.frame_w}, net.decode_image(g, c).value().data);
  }
  const std::size_t P = out.frames[0].size();
  double total = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    double mean = 0.0, sq = 0.0;
    int k = 0;
    for (const auto& f : out.frames) {  // Welford: identical frames give exactly 0
      const double delta = f.data[i] - mean;
      mean += delta / ++k;
      sq += delta * (f.data[i] - mean);
    }
    total += sq / count;
  }
  out.pixel_variance = total / static_cast<double>(P);
  return out;
}

FramePurity frame_purity(const Tensor& frame, const std::vector<Rgb>& palette) {
  require(frame.rank() == 3 && frame.dim(0) == 3, "frame_purity: expected an RGB [3, H, W] frame");
  require(palette.size() >= 2, "frame_purity: palette needs at least 2 colors");
  // A pixel matches a color when it is closer than half the smallest
  // distance between two palette colors.
  double min_sep = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < palette.size(); ++a)
    for (std::size_t b = 0; b < a; ++b) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d += (palette[a][c] - palette[b][c]) * (palette[a][c] - palette[b][c]);
      min_sep = std::min(min_sep, std::sqrt(d));
    }
  const double tol = min_sep / 2.0;
  const std::size_t hw = static_cast<std::size_t>(frame.dim(1)) * frame.dim(2);
  std::vector<int> nearest_count(palette.size(), 0), matched(palette.size(), 0);
  FramePurity r;
  for (std::size_t i = 0; i < hw; ++i) {
    const double px[3] = {frame.data[i], frame.data[hw + i], frame.data[2 * hw + i]};
    if (std::max({px[0], px[1], px[2]}) < kBallThreshold) continue;
    ++r.ball_pixels;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < palette.size(); ++k) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d += (px[c] - palette[k][c]) * (px[c] - palette[k][c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    ++nearest_count[best];
    if (std::sqrt(best_d) <= tol) ++matched[best];
  }
  if (r.ball_pixels == 0) return r;
  r.modal_color = static_cast<int>(std::max_element(nearest_count.begin(), nearest_count.end()) -
                                   nearest_count.begin());
  r.purity = static_cast<double>(matched[r.modal_color]) / r.ball_pixels;
  return r;
}

SharpnessReport color_switch_sharpness(const std::vector<Tensor>& frames,
                                       const std::vector<Rgb>& palette) {
  SharpnessReport r;
  for (const auto& f : frames) r.frames.push_back(frame_purity(f, palette));
  int last = -1;  // index of the last frame with a ball
  for (int t = 0; t < static_cast<int>(r.frames.size()); ++t) {
    const auto& cur = r.frames[t];
    if (cur.modal_color < 0) continue;
    if (last >= 0 && r.frames[last].modal_color != cur.modal_color) {
      ColorSwitch s;
      s.t = t;
      s.from = r.frames[last].modal_color;
      s.to = cur.modal_color;
      s.score = std::min(r.frames[last].purity, cur.purity);
      s.sharp = s.score >= kSharpPurity;
      r.switches.push_back(s);
    }
    last = t;
  }
  return r;
}

EvalReport evaluate(const Network& net, const Dataset& data, int count, int context, int horizon,
                    int k, std::uint64_t seed) {
  require(count >= 1, "evaluate: count must be >= 1");
  require(context >= 1, "evaluate: context must be >= 1");
  require(horizon >= 0 && k >= 1, "evaluate: horizon must be >= 0 and k >= 1");
  EvalReport r;
  r.sequences = count;
  r.k = k;
  r.depth_horizon = context;
  r.ssim_curve.assign(static_cast<std::size_t>(horizon), 0.0);
  r.psnr_curve.assign(static_cast<std::size_t>(horizon), 0.0);
  std::vector<IndicatorVector> all_indicators;
  for (int i = 0; i < count; ++i) {
    const Tensor seq = data.sequence(static_cast<std::uint64_t>(i));
    if (seq.dim(0) < context + horizon)
      throw ConfigError("eval.horizon: sequences have " + std::to_string(seq.dim(0)) +
                        " frames, context + horizon needs " + std::to_string(context + horizon));
    const Tensor ctx = crop_frames(seq, 0, context);
    const Tensor gt = crop_frames(seq, context, horizon);
    BestOfK b = best_of_k(net, ctx, gt, k, Metric::Ssim, stream(seed, static_cast<std::uint64_t>(i), 2)());
    r.best_indices.push_back(b.best_index);
    for (int t = 0; t < horizon; ++t) {
      const Tensor pred = clamp01(b.best.frames[t]);
      const Tensor truth = frame_at(gt, t);
      r.ssim_curve[t] += ssim(pred, truth) / count;
      r.psnr_curve[t] += psnr(pred, truth) / count;
    }
    all_indicators.insert(all_indicators.end(), b.context_indicators.begin(), b.context_indicators.end());
  }
  for (int t = 0; t < horizon; ++t) {
    r.mean_ssim += r.ssim_curve[t] / horizon;
    r.mean_psnr += r.psnr_curve[t] / horizon;
  }
  r.mean_depth = mean_depth(all_indicators);
  r.kl_per_level = kl_per_level_report(net, data, count, context, seed).per_level;
  if (net.levels() >= 2 && context >= 2)
    r.prior_table = prior_change_report(net, data, data.config().switch_prob, count, context, seed);
  return r;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "t,ssim,psnr\n";
  for (std::size_t t = 0; t < r.ssim_curve.size(); ++t)
    out << t + 1 << "," << r.ssim_curve[t] << "," << r.psnr_curve[t] << "\n";
}

namespace {
nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
}  // namespace

nlohmann::json prior_table_json(const std::vector<PriorRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : rows)
    a.push_back({{"lambda", p.lambda},
                 {"condition", p.condition},
                 {"mean_p", finite_or_null(p.mean_p)},
                 {"stderr", finite_or_null(p.stderr_p)},
                 {"count", p.count}});
  return a;
}

nlohmann::json eval_summary_json(const EvalReport& r) {
  nlohmann::json j;
  j["mean_ssim"] = finite_or_null(r.mean_ssim);
  j["mean_psnr"] = finite_or_null(r.mean_psnr);
  j["mean_depth"] = r.mean_depth;
  j["depth_horizon"] = r.depth_horizon;
  j["kl_per_level"] = r.kl_per_level;
  j["prior_table"] = prior_table_json(r.prior_table);
  j["best_indices"] = r.best_indices;
  j["sequences"] = r.sequences;
  j["k"] = r.k;
  j["horizon"] = r.ssim_curve.size();
  return j;
}

}  // namespace dlh
