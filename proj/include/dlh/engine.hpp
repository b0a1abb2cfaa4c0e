#pragma once

#include <random>
#include <vector>

#include "dlh/mog.hpp"
#include "dlh/network.hpp"

namespace dlh {

// Per-step objective pieces. Values are always filled; the *_var handles are
// valid only on a graph with gradients enabled.
struct ElboTerms {
  double recon_loglik = 0.0;
  // Per level, nats. Active levels: KL to the change prior. Blocking level K:
  // KL of a fresh posterior to the static prior. Above K: 0.
  std::vector<double> kl_state;
  std::vector<double> kl_indicator;  // per level, nats
  // log p(s | change) - log q(s) at the drawn sample; -kl_state at K; 0 above K.
  std::vector<double> log_ratio_state;

  ad::Var recon_var;
  std::vector<ad::Var> kl_state_vars;
  std::vector<ad::Var> kl_indicator_vars;

  double total_kl() const;
};

struct LevelState {
  GaussianBelief posterior;  // carried belief; the static component next step
  GaussianVar posterior_var;  // the same belief as graph nodes
  ad::Var sample;            // s^n, reused while the level is static
  ad::Var recurrent;         // d^n, advanced only on change steps
  ad::Var factor;            // prior-factor GRU state, advanced every step
  ad::Var context;           // c^n seen at the last change
  ad::Var below_context;     // c^{n-1} = dec_n(s^n, c^n)
};

struct HierarchyState {
  std::vector<LevelState> levels;  // index 0 is level 1
  int t = 0;                       // frames consumed
  int blocking_level = 0;          // first static level (1-based), N+1 if none
  IndicatorVector indicators;

  int num_levels() const { return static_cast<int>(levels.size()); }
};

// Counts of posterior-head evaluations during one step, per level.
struct StepInstrumentation {
  std::vector<int> provisional_posterior;  // during the bottom-up selection pass
  std::vector<int> final_posterior;        // during the top-down pass
  std::vector<int> decoder_calls;
};

struct StepResult {
  ElboTerms terms;
  StepInstrumentation counts;
  ad::Var image_hidden;  // c^0 code; decode_image gives the frame means
  ad::Var frame_mean;    // valid when the step decoded its frame
  std::vector<double> change_probability;  // p(e^n = 1) used at this step
};

struct RolloutTrace {
  std::vector<Tensor> frames;                  // [C, H, W] each, raw means
  std::vector<IndicatorVector> indicators;
  std::vector<std::vector<std::vector<double>>> latent_samples;  // [t][level][dim]
  std::vector<std::vector<double>> kl_state;   // zero: no posterior in open loop
  std::vector<std::vector<double>> kl_indicator;  // -log p(e = sampled)

  int horizon() const { return static_cast<int>(frames.size()); }
};

struct FilterResult {
  HierarchyState state;
  std::vector<ElboTerms> terms;
  std::vector<IndicatorVector> indicators;
  std::vector<StepInstrumentation> counts;
  std::vector<std::vector<double>> change_probability;  // [t][level]
  ad::Var frame_means;  // [T, C, H, W] reconstructions
};

// Runs the filtering/generation loop of one sequence on one graph.
class Engine {
 public:
  Engine(const Network& net, ad::Graph& graph) : net_(net), graph_(graph) {}

  const Network& network() const { return net_; }
  ad::Graph& graph() { return graph_; }

  // x^1..x^N for each frame of frames [T, C, H, W], encoded as one batch.
  std::vector<std::vector<ad::Var>> encode_frames(const Tensor& frames);

  // First frame: every level active, change priors from zero recurrent state.
  StepResult init_state(HierarchyState& state, const Tensor& frame,
                        const std::vector<ad::Var>& features, std::mt19937_64& rng,
                        bool decode_frame = true);
  StepResult filter_step(HierarchyState& state, const Tensor& frame,
                         const std::vector<ad::Var>& features, std::mt19937_64& rng,
                         bool decode_frame = true);
  // Convenience overloads that encode the single frame [C, H, W] themselves.
  StepResult init_state(HierarchyState& state, const Tensor& frame, std::mt19937_64& rng);
  StepResult filter_step(HierarchyState& state, const Tensor& frame, std::mt19937_64& rng);

  // Folds filter_step over frames [T, C, H, W], decoding images in one batch.
  FilterResult filter_sequence(const Tensor& frames, std::mt19937_64& rng);

  // Open-loop generation from `state` (taken by value; the caller's state is
  // untouched). With argmax the indicator is the prior's mode, else a sample.
  RolloutTrace open_loop_rollout(HierarchyState state, int horizon, std::mt19937_64& rng,
                                 bool argmax = false);

  // Copies the state's values into this engine's graph as constants.
  HierarchyState import_state(const HierarchyState& other);

 private:
  void descend(HierarchyState& state, int top, const std::vector<ad::Var>* features,
               std::mt19937_64& rng, StepResult& out, bool from_posterior);
  void static_level_kl(HierarchyState& state, int K, const std::vector<ad::Var>& features,
                       StepResult& out);
  void advance_recurrent(HierarchyState& state, const IndicatorVector& e);
  void finish_step(HierarchyState& state, const Tensor* frame, StepResult& out, bool decode_frame);
  void check_finite(ad::Var v, int level, const char* head) const;

  const Network& net_;
  ad::Graph& graph_;
};

// [T, C, H, W] -> frame t as [C, H, W]
Tensor frame_at(const Tensor& frames, int t);
Tensor standard_normal(std::vector<int> shape, std::mt19937_64& rng);

}  // namespace dlh
