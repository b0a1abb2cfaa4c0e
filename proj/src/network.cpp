#include "dlh/network.hpp"

#include <cmath>
#include <random>

namespace dlh {

std::string level_prefix(int level) { return "L" + std::to_string(level) + "."; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (num_levels < 1) fail("num_levels", "must be >= 1");
  if (latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (det_dim < 1) fail("det_dim", "must be >= 1");
  if (frame_c < 1) fail("frame_c", "must be >= 1");
  if (!(obs_std > 0.0)) fail("obs_std", "must be > 0");
  if (conv_channels.empty()) fail("conv_channels", "needs at least one layer");
  for (int c : conv_channels)
    if (c < 1) fail("conv_channels", "channel counts must be >= 1");
  if (conv_kernel != 4) fail("conv_kernel", "only kernel 4 (stride 2, pad 1) is supported");
  const int stride_product = 1 << conv_channels.size();
  if (frame_h < stride_product || frame_h % stride_product != 0)
    fail("frame_h", "must be a positive multiple of 2^" + std::to_string(conv_channels.size()));
  if (frame_w < stride_product || frame_w % stride_product != 0)
    fail("frame_w", "must be a positive multiple of 2^" + std::to_string(conv_channels.size()));
  if (mlp_hidden < 1) fail("mlp_hidden", "must be >= 1");
  for (int h : head_hidden)
    if (h < 1) fail("head_hidden", "widths must be >= 1");
  if (factor_hidden < 1) fail("factor_hidden", "must be >= 1");
}

namespace {

struct Initializer {
  std::mt19937_64 rng;
  Tensor normal(std::vector<int> shape, double std) {
    std::normal_distribution<double> dist(0.0, std);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
  }
  Tensor uniform(std::vector<int> shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
  }
};

}  // namespace

Network::Network(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), init_seed_(seed) {
  config_.validate();
  Initializer init{std::mt19937_64(seed)};
  const auto& cfg = config_;
  const int k = cfg.conv_kernel;
  const int layers = static_cast<int>(cfg.conv_channels.size());

  // Image encoder
  int in_c = cfg.frame_c;
  for (int i = 0; i < layers; ++i) {
    const int out_c = cfg.conv_channels[i];
    params_.add("enc.conv" + std::to_string(i) + ".w",
                init.normal({out_c, in_c, k, k}, std::sqrt(1.0 / (in_c * k * k))));
    params_.add("enc.conv" + std::to_string(i) + ".b", Tensor({out_c}));
    in_c = out_c;
  }
  const int flat = cfg.conv_channels.back() * cfg.bottleneck_h() * cfg.bottleneck_w();
  params_.add("enc.fc.w", init.normal({flat, cfg.det_dim}, std::sqrt(1.0 / flat)));
  params_.add("enc.fc.b", Tensor({cfg.det_dim}));

  // Image decoder, mirroring the encoder
  params_.add("dec.fc.w", init.normal({cfg.det_dim, flat}, std::sqrt(1.0 / cfg.det_dim)));
  params_.add("dec.fc.b", Tensor({flat}));
  for (int i = layers - 1; i >= 0; --i) {
    const int c_in = cfg.conv_channels[i];
    const int c_out = i == 0 ? cfg.frame_c : cfg.conv_channels[i - 1];
    params_.add("dec.deconv" + std::to_string(i) + ".w",
                init.normal({c_in, c_out, k, k}, std::sqrt(4.0 / (c_in * k * k))));
    params_.add("dec.deconv" + std::to_string(i) + ".b", Tensor({c_out}));
  }

  params_.add("top.c", init.normal({1, cfg.det_dim}, 0.1));

  for (int n = 1; n <= cfg.num_levels; ++n) {
    const std::string L = level_prefix(n);
    if (n >= 2) {
      add_linear(L + "enc.fc0", cfg.det_dim, cfg.mlp_hidden, 1.0);
      add_linear(L + "enc.fc1", cfg.mlp_hidden, cfg.det_dim, 1.0);
    }
    add_linear(L + "dec.fc0", cfg.latent_dim + cfg.det_dim, cfg.mlp_hidden, 1.0);
    add_linear(L + "dec.fc1", cfg.mlp_hidden, cfg.det_dim, 1.0);
    add_gru(L + "tem", cfg.latent_dim, cfg.det_dim);

    for (const char* head : {"post", "prior"}) {
      int width = 2 * cfg.det_dim;
      int idx = 0;
      for (int h : cfg.head_hidden) {
        add_linear(L + head + ".fc" + std::to_string(idx++), width, h, 1.0);
        width = h;
      }
      add_linear(L + head + ".fc" + std::to_string(idx), width, 2 * cfg.latent_dim, 0.1);
    }

    add_gru(L + "factor", cfg.latent_dim, cfg.factor_hidden);
    add_linear(L + "factor.out", cfg.factor_hidden, 1, 0.1);
  }
}

void Network::add_linear(const std::string& name, int in, int out, double gain) {
  Initializer init{std::mt19937_64(init_seed_ ^ std::hash<std::string>{}(name))};
  params_.add(name + ".w", init.normal({in, out}, gain * std::sqrt(1.0 / in)));
  params_.add(name + ".b", Tensor({out}));
}

void Network::add_gru(const std::string& name, int in, int hidden) {
  Initializer init{std::mt19937_64(init_seed_ ^ std::hash<std::string>{}(name))};
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  // Gate blocks along columns: [update z | reset r | candidate n]
  params_.add(name + ".wx", init.uniform({in, 3 * hidden}, bound));
  params_.add(name + ".bx", Tensor({3 * hidden}));
  params_.add(name + ".wh", init.uniform({hidden, 3 * hidden}, bound));
  params_.add(name + ".bh", Tensor({3 * hidden}));
}

void Network::check_level(int level) const {
  require(level >= 1 && level <= config_.num_levels, [&] {
    return "Network: level " + std::to_string(level) + " outside 1.." + std::to_string(config_.num_levels);
  });
}

ad::Var Network::apply_linear(ad::Graph& g, const std::string& name, ad::Var x) const {
  return ad::linear(x, p(g, name + ".w"), p(g, name + ".b"));
}

ad::Var Network::apply_mlp(ad::Graph& g, const std::string& name, int layers, ad::Var x,
                           bool activate_output) const {
  for (int i = 0; i < layers; ++i) {
    x = apply_linear(g, name + ".fc" + std::to_string(i), x);
    if (i + 1 < layers || activate_output) x = ad::elu(x);
  }
  return x;
}

ad::Var Network::apply_gru(ad::Graph& g, const std::string& name, ad::Var x, ad::Var h) const {
  const int hidden = h.value().cols();
  require(x.value().rows() == h.value().rows(), "GRU: batch mismatch");
  ad::Var gx = ad::linear(x, p(g, name + ".wx"), p(g, name + ".bx"));
  ad::Var gh = ad::linear(h, p(g, name + ".wh"), p(g, name + ".bh"));
  ad::Var z = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, hidden), ad::slice_cols(gh, 0, hidden)));
  ad::Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, hidden, hidden), ad::slice_cols(gh, hidden, hidden)));
  ad::Var cand = ad::tanh(ad::add(ad::slice_cols(gx, 2 * hidden, hidden),
                                  ad::mul(r, ad::slice_cols(gh, 2 * hidden, hidden))));
  // h' = n + z * (h - n)
  return ad::add(cand, ad::mul(z, ad::sub(h, cand)));
}

GaussianVar Network::gaussian_head(ad::Graph& g, const std::string& name, ad::Var a,
                                   ad::Var b) const {
  const int layers = static_cast<int>(config_.head_hidden.size()) + 1;
  ad::Var out = apply_mlp(g, name, layers, ad::concat_cols({a, b}), false);
  const int d = config_.latent_dim;
  return {ad::slice_cols(out, 0, d), std_from_raw(ad::slice_cols(out, d, d))};
}

std::vector<ad::Var> Network::encode(ad::Graph& g, ad::Var frames) const {
  const auto& cfg = config_;
  const auto& shape = frames.shape();
  require(shape.size() == 4 && shape[1] == cfg.frame_c && shape[2] == cfg.frame_h &&
              shape[3] == cfg.frame_w, [&] { return "encode: frame shape " + shape_str(shape) + " does not match config"; });
  const int batch = shape[0];
  ad::Var h = frames;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string name = "enc.conv" + std::to_string(i);
    h = ad::elu(ad::conv2d(h, p(g, name + ".w"), p(g, name + ".b"), 2, 1));
  }
  h = ad::reshape(h, {batch, static_cast<int>(h.value().size()) / batch});
  std::vector<ad::Var> xs;
  xs.push_back(ad::elu(apply_linear(g, "enc.fc", h)));
  for (int n = 2; n <= cfg.num_levels; ++n)
    xs.push_back(apply_mlp(g, level_prefix(n) + "enc", 2, xs.back(), true));
  return xs;
}

ad::Var Network::decode(ad::Graph& g, int level, ad::Var s, ad::Var c) const {
  check_level(level);
  require(s.value().cols() == config_.latent_dim && c.value().cols() == config_.det_dim,
          "decode: input dimensions do not match config");
  return apply_mlp(g, level_prefix(level) + "dec", 2, ad::concat_cols({s, c}), true);
}

ad::Var Network::decode_image(ad::Graph& g, ad::Var hidden) const {
  const auto& cfg = config_;
  require(hidden.value().rank() == 2 && hidden.value().cols() == cfg.det_dim,
          "decode_image: expected [B, det_dim]");
  const int batch = hidden.value().rows();
  const int layers = static_cast<int>(cfg.conv_channels.size());
  ad::Var h = ad::elu(apply_linear(g, "dec.fc", hidden));
  h = ad::reshape(h, {batch, cfg.conv_channels.back(), cfg.bottleneck_h(), cfg.bottleneck_w()});
  for (int i = layers - 1; i >= 0; --i) {
    const std::string name = "dec.deconv" + std::to_string(i);
    h = ad::conv_transpose2d(h, p(g, name + ".w"), p(g, name + ".b"), 2, 1);
    if (i > 0) h = ad::elu(h);
  }
  return h;
}

ad::Var Network::top_context(ad::Graph& g, int rows) const {
  ad::Var c = p(g, "top.c");
  if (rows == 1) return c;
  return ad::concat_rows(std::vector<ad::Var>(static_cast<std::size_t>(rows), c));
}

ad::Var Network::temporal_step(ad::Graph& g, int level, ad::Var s, ad::Var d) const {
  check_level(level);
  require(s.value().cols() == config_.latent_dim && d.value().cols() == config_.det_dim,
          "temporal_step: input dimensions do not match config");
  return apply_gru(g, level_prefix(level) + "tem", s, d);
}

GaussianVar Network::posterior_head(ad::Graph& g, int level, ad::Var x, ad::Var c) const {
  check_level(level);
  require(x.value().cols() == config_.det_dim && c.value().cols() == config_.det_dim,
          "posterior_head: input dimensions do not match config");
  return gaussian_head(g, level_prefix(level) + "post", x, c);
}

GaussianVar Network::prior_state_head(ad::Graph& g, int level, ad::Var d, ad::Var c) const {
  check_level(level);
  require(d.value().cols() == config_.det_dim && c.value().cols() == config_.det_dim,
          "prior_state_head: input dimensions do not match config");
  return gaussian_head(g, level_prefix(level) + "prior", d, c);
}

ad::Var Network::prior_factor_head(ad::Graph& g, int level, ad::Var factor_state) const {
  check_level(level);
  require(factor_state.value().cols() == config_.factor_hidden,
          "prior_factor_head: state dimension does not match config");
  return probability_from_logit(apply_linear(g, level_prefix(level) + "factor.out", factor_state));
}

ad::Var Network::factor_step(ad::Graph& g, int level, ad::Var s, ad::Var factor_state) const {
  check_level(level);
  require(s.value().cols() == config_.latent_dim &&
              factor_state.value().cols() == config_.factor_hidden,
          "factor_step: input dimensions do not match config");
  return apply_gru(g, level_prefix(level) + "factor", s, factor_state);
}

ad::Var Network::zero_recurrent(ad::Graph& g, int rows) const {
  return g.constant(Tensor({rows, config_.det_dim}));
}

ad::Var Network::zero_factor(ad::Graph& g, int rows) const {
  return g.constant(Tensor({rows, config_.factor_hidden}));
}

}  // namespace dlh
