#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlh/data.hpp"
#include "dlh/engine.hpp"

namespace dlh {

inline constexpr double kPsnrCap = 100.0;

// Frames are [C, H, W] with values in [0, 1].
double psnr(const Tensor& pred, const Tensor& gt);
// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) on the channel-mean
// image, averaged over all fully-inside window positions.
double ssim(const Tensor& pred, const Tensor& gt);

enum class Metric { Ssim, Psnr };
double score(Metric m, const Tensor& pred, const Tensor& gt);

// Filters `context` [T, C, H, W] without gradients and returns the state
// after the last frame, valid on `graph`.
HierarchyState filter_context(const Network& net, ad::Graph& graph, const Tensor& context,
                              std::mt19937_64& rng, std::vector<IndicatorVector>* indicators = nullptr);

struct BestOfK {
  RolloutTrace best;
  int best_index = 0;
  std::vector<double> curve;         // per-frame metric of the best rollout
  std::vector<double> rollout_means; // mean metric of every rollout
  std::vector<IndicatorVector> context_indicators;
};

// Rollout j uses an RNG seeded from (seed, j). With k' > k the first k
// rollouts are identical, so the best score never decreases in k.
BestOfK best_of_k(const Network& net, const Tensor& context, const Tensor& gt_future, int k,
                  Metric metric, std::uint64_t seed);

// (1/T) sum_t sum_n e^n_t
double mean_depth(const std::vector<IndicatorVector>& indicators);

struct KlReport {
  std::vector<double> per_level;  // mean over sequences and steps of kl_state + kl_indicator
  std::vector<double> state;      // kl_state part
  std::vector<double> indicator;  // kl_indicator part
  double mean_depth = 0.0;
  long steps = 0;
};
KlReport kl_per_level_report(const Network& net, const Dataset& data, int count, int length,
                             std::uint64_t seed);

struct PriorRow {
  double lambda = 0.0;
  std::string condition;  // "change" or "static"
  double mean_p = 0.0;
  double stderr_p = 0.0;
  long count = 0;
};
// p(e^level = 1) bucketed by the inferred indicator at that level, over steps
// t >= 1 (the first step is active by construction).
std::vector<PriorRow> prior_change_report(const Network& net, const Dataset& data, double lambda,
                                          int count, int length, std::uint64_t seed,
                                          int level = 2);

struct AblationResult {
  std::vector<Tensor> frames;
  double pixel_variance = 0.0;  // per-pixel variance across frames, averaged over pixels
};
// Levels are 1-based. Fixed levels use the state's posterior means; sampled
// levels draw from their change priors given the context from above.
AblationResult level_sampling_ablation(const Network& net, const HierarchyState& state,
                                       const std::set<int>& sample_levels,
                                       const std::set<int>& fix_levels, int count,
                                       std::uint64_t seed);

struct FramePurity {
  int modal_color = -1;  // -1 when no ball pixel was found
  double purity = 0.0;
  int ball_pixels = 0;
};
struct ColorSwitch {
  int t = 0;  // the first frame showing the new color
  int from = -1;
  int to = -1;
  double score = 0.0;  // min purity of frames t-1 and t
  bool sharp = false;
};
struct SharpnessReport {
  std::vector<FramePurity> frames;
  std::vector<ColorSwitch> switches;
};

inline constexpr double kBallThreshold = 0.5;
inline constexpr double kSharpPurity = 0.9;

FramePurity frame_purity(const Tensor& frame, const std::vector<Rgb>& palette);
SharpnessReport color_switch_sharpness(const std::vector<Tensor>& frames,
                                       const std::vector<Rgb>& palette);

struct EvalReport {
  std::vector<double> ssim_curve;  // mean over sequences, per predicted frame
  std::vector<double> psnr_curve;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;
  std::vector<int> best_indices;  // per sequence
  double mean_depth = 0.0;
  int depth_horizon = 0;  // frames filtered for mean_depth
  std::vector<double> kl_per_level;
  std::vector<PriorRow> prior_table;
  int sequences = 0;
  int k = 0;
};

// Best-of-k by SSIM over `count` sequences; both metrics are reported for the
// chosen rollouts.
EvalReport evaluate(const Network& net, const Dataset& data, int count, int context, int horizon,
                    int k, std::uint64_t seed);

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r);
nlohmann::json eval_summary_json(const EvalReport& r);
nlohmann::json prior_table_json(const std::vector<PriorRow>& rows);

}  // namespace dlh
