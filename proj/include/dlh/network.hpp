#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlh/autodiff.hpp"
#include "dlh/distributions.hpp"

namespace dlh {

struct ModelConfig {
  int num_levels = 2;
  int latent_dim = 20;
  int det_dim = 200;  // |x| = |c| = |d|
  int frame_h = 32;
  int frame_w = 32;
  int frame_c = 3;
  double obs_std = 0.3;
  // One stride-2 conv layer per entry; the decoder mirrors it.
  std::vector<int> conv_channels{32, 64, 128, 256};
  int conv_kernel = 4;
  int mlp_hidden = 200;                    // encoder/decoder MLP [200]
  std::vector<int> head_hidden{40, 40, 40};  // posterior/prior-state MLP [40,40,40]
  int factor_hidden = 200;                 // prior-factor GRU [200]

  int image_size() const { return frame_h * frame_w * frame_c; }
  int bottleneck_h() const { return frame_h >> conv_channels.size(); }
  int bottleneck_w() const { return frame_w >> conv_channels.size(); }
  // Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, num_levels, latent_dim, det_dim,
                                                frame_h, frame_w, frame_c, obs_std, conv_channels,
                                                conv_kernel, mlp_hidden, head_hidden,
                                                factor_hidden)

// The six per-level function approximators plus the convolutional image
// encoder/decoder. Every head maps [rows, in] -> [rows, out] row by row, so
// one call can serve a batch. Levels are 1-based.
class Network {
 public:
  Network(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  int levels() const { return config_.num_levels; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }

  // frames [B, C, H, W] in [0,1] -> x^1..x^N, each [B, det_dim]
  std::vector<ad::Var> encode(ad::Graph& g, ad::Var frames) const;
  // c^{n-1} from (s^n, c^n). For level 1 this is the hidden image code; pass
  // it through decode_image for the frame means.
  ad::Var decode(ad::Graph& g, int level, ad::Var s, ad::Var c) const;
  // [B, det_dim] -> image means [B, C, H, W]
  ad::Var decode_image(ad::Graph& g, ad::Var hidden) const;
  // Learned constant standing in for c^N, broadcast to `rows`.
  ad::Var top_context(ad::Graph& g, int rows = 1) const;

  // d^n_{t+1} = GRU(s^n_t, d^n_t)
  ad::Var temporal_step(ad::Graph& g, int level, ad::Var s, ad::Var d) const;
  GaussianVar posterior_head(ad::Graph& g, int level, ad::Var x, ad::Var c) const;
  GaussianVar prior_state_head(ad::Graph& g, int level, ad::Var d, ad::Var c) const;
  // p(e^n = 1) from the prior-factor recurrent state, [B, 1], clamped by kProbEps.
  ad::Var prior_factor_head(ad::Graph& g, int level, ad::Var factor_state) const;
  // Advances the prior-factor GRU with the level's current latent sample.
  ad::Var factor_step(ad::Graph& g, int level, ad::Var s, ad::Var factor_state) const;

  ad::Var zero_recurrent(ad::Graph& g, int rows = 1) const;
  ad::Var zero_factor(ad::Graph& g, int rows = 1) const;

 private:
  void add_linear(const std::string& name, int in, int out, double gain);
  void add_gru(const std::string& name, int in, int hidden);
  ad::Var apply_linear(ad::Graph& g, const std::string& name, ad::Var x) const;
  ad::Var apply_mlp(ad::Graph& g, const std::string& name, int layers, ad::Var x,
                    bool activate_output) const;
  ad::Var apply_gru(ad::Graph& g, const std::string& name, ad::Var x, ad::Var h) const;
  GaussianVar gaussian_head(ad::Graph& g, const std::string& name, ad::Var a, ad::Var b) const;
  ad::Var p(ad::Graph& g, const std::string& name) const { return g.param(params_, name); }
  void check_level(int level) const;

  ModelConfig config_;
  ad::ParameterSet params_;
  std::uint64_t init_seed_;
};

std::string level_prefix(int level);

}  // namespace dlh
