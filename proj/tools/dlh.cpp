// dlh: generate-data | train | evaluate | rollout | diagnose

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <set>

#include "dlh/checkpoint.hpp"
#include "dlh/config.hpp"
#include "dlh/eval.hpp"

using namespace dlh;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (overrides [run] seed)");
  cmd->add_option("--out", c.out, "Output directory (overrides [run] out)");
  cmd->add_flag("--deterministic", c.deterministic, "Single-threaded, bit-reproducible run");
}

RunConfig base_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  cfg.resolve();
  return cfg;
}

// Restores the OpenMP thread count on scope exit.
class ThreadScope {
 public:
  explicit ThreadScope(bool single) : saved_(omp_get_max_threads()) {
    if (single) omp_set_num_threads(1);
  }
  ~ThreadScope() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

Dataset test_data(const RunConfig& cfg, const std::string& dir, int min_length) {
  if (!dir.empty()) return import_dataset(dir);
  MovingBallConfig d = cfg.data;
  d.sequence_length = std::max(d.sequence_length, min_length);
  return Dataset::procedural(d, cfg.eval.test_offset);
}

void check_frames(const ModelConfig& m, const MovingBallConfig& d) {
  if (m.frame_h != d.height || m.frame_w != d.width)
    throw ConfigError("data.height: dataset frames are " + std::to_string(d.height) + "x" +
                      std::to_string(d.width) + " but the model expects " + std::to_string(m.frame_h) +
                      "x" + std::to_string(m.frame_w));
}

std::string checkpoint_path(const std::string& given, const RunConfig& cfg) {
  return given.empty() ? (fs::path(cfg.out) / "checkpoint.dlh").string() : given;
}

// Tiles frames [C, H, W] left to right.
Tensor tile(const std::vector<Tensor>& frames) {
  const int C = frames[0].dim(0), H = frames[0].dim(1), W = frames[0].dim(2);
  const int n = static_cast<int>(frames.size());
  Tensor out({C, H, W * n});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          out.data[(static_cast<std::size_t>(c) * H + y) * W * n + i * W + x] =
              frames[i].data[(static_cast<std::size_t>(c) * H + y) * W + x];
  return out;
}

Tensor read_context_dir(const fs::path& dir, int limit) {
  std::vector<fs::path> files;
  const std::regex pattern(R"(frame\d{4}\.png)");
  for (const auto& e : fs::directory_iterator(dir))
    if (std::regex_match(e.path().filename().string(), pattern)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (limit > 0 && static_cast<int>(files.size()) > limit) files.resize(static_cast<std::size_t>(limit));
  if (files.empty()) throw ConfigError("rollout.context-dir: no frameNNNN.png files in " + dir.string());
  std::vector<Tensor> frames;
  for (const auto& f : files) frames.push_back(read_png(f));
  const auto& s = frames[0].shape;
  Tensor out({static_cast<int>(frames.size()), s[0], s[1], s[2]});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].shape != s) throw FormatError("rollout: context frames differ in size");
    std::copy(frames[t].data.begin(), frames[t].data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(t * frames[t].size()));
  }
  return out;
}

int cmd_generate(const Common& c, std::optional<int> count, std::optional<double> lambda,
                 std::optional<int> length) {
  RunConfig cfg = base_config(c);
  if (count) cfg.data_count = *count;
  if (lambda) cfg.data.switch_prob = *lambda;
  if (length) cfg.data.sequence_length = *length;
  if (c.seed) cfg.data.seed = *c.seed;
  cfg.validate();
  ThreadScope threads(c.deterministic);
  export_dataset(cfg.data, cfg.data_count, cfg.out);
  write_resolved_config(cfg, cfg.out);
  std::cerr << "wrote " << cfg.data_count << " sequences to " << cfg.out << "\n";
  return 0;
}

int cmd_train(const Common& c, bool resume, const std::string& data_dir, std::optional<double> lambda,
              std::optional<int> iters, std::optional<int> levels) {
  RunConfig cfg = base_config(c);
  if (!data_dir.empty()) cfg.dataset = data_dir;
  if (lambda) cfg.data.switch_prob = *lambda;
  if (iters) cfg.train.total_iters = *iters;
  if (levels) cfg.model.num_levels = *levels;
  cfg.resolve();
  cfg.validate();
  const Dataset data = cfg.dataset.empty() ? Dataset::procedural(cfg.data) : import_dataset(cfg.dataset);
  check_frames(cfg.model, data.config());
  if (data.config().sequence_length < cfg.train.sequence_length)
    throw ConfigError("train.sequence_length: dataset sequences have only " +
                      std::to_string(data.config().sequence_length) + " frames");
  write_resolved_config(cfg, cfg.out);
  Network net(cfg.model, cfg.seed);
  TrainOptions opts;
  opts.out_dir = cfg.out;
  opts.deterministic = c.deterministic;
  opts.resume = resume;
  opts.on_iteration = [&](const IterationMetrics& m) {
    if (m.iter % 100 == 0 || m.iter == cfg.train.total_iters)
      std::fprintf(stderr, "iter %ld  loss %.2f  recon %.2f  depth %.3f  beta %.3f\n", m.iter, m.loss,
                   m.recon_nats, m.mean_depth, m.beta);
  };
  const TrainResult r = train(net, cfg.train, data, opts);
  std::cerr << "finished at iteration " << r.final_iter << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& ckpt, const std::string& data_dir,
                 std::optional<int> context, std::optional<int> horizon, std::optional<int> k,
                 std::optional<int> count) {
  RunConfig cfg = base_config(c);
  if (context) cfg.eval.context = *context;
  if (horizon) cfg.eval.horizon = *horizon;
  if (k) cfg.eval.k = *k;
  if (count) cfg.eval.count = *count;
  cfg.eval.validate();
  ThreadScope threads(c.deterministic);
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint_path(ckpt, cfg));
  cfg.model = loaded.meta.model;
  const Dataset data = test_data(cfg, data_dir, cfg.eval.context + cfg.eval.horizon);
  check_frames(cfg.model, data.config());
  const EvalReport r = evaluate(loaded.net, data, cfg.eval.count, cfg.eval.context, cfg.eval.horizon,
                                cfg.eval.k, cfg.seed);
  fs::create_directories(cfg.out);
  write_eval_csv(fs::path(cfg.out) / "eval.csv", r);
  std::ofstream(fs::path(cfg.out) / "eval_summary.json") << eval_summary_json(r).dump(2) << "\n";
  write_resolved_config(cfg, cfg.out);
  std::printf("mean SSIM %.4f  mean PSNR %.2f  mean depth %.3f\n", r.mean_ssim, r.mean_psnr, r.mean_depth);
  return 0;
}

int cmd_rollout(const Common& c, const std::string& ckpt, const std::string& context_dir,
                std::optional<int> context, int horizon, int index, bool argmax) {
  RunConfig cfg = base_config(c);
  if (context) cfg.eval.context = *context;
  if (horizon < 0) throw ConfigError("rollout.horizon: must be >= 0");
  ThreadScope threads(c.deterministic);
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint_path(ckpt, cfg));
  const Network& net = loaded.net;
  cfg.model = loaded.meta.model;
  Tensor frames;
  if (!context_dir.empty()) {
    frames = read_context_dir(context_dir, context ? *context : 0);
  } else {
    const Dataset data = test_data(cfg, "", cfg.eval.context);
    check_frames(cfg.model, data.config());
    const Tensor seq = data.sequence(static_cast<std::uint64_t>(index));
    const std::size_t per = seq.size() / static_cast<std::size_t>(seq.dim(0));
    frames = Tensor({cfg.eval.context, seq.dim(1), seq.dim(2), seq.dim(3)},
                    std::vector<double>(seq.data.begin(), seq.data.begin() + static_cast<std::ptrdiff_t>(per * cfg.eval.context)));
  }
  if (frames.dim(2) != cfg.model.frame_h || frames.dim(3) != cfg.model.frame_w)
    throw ConfigError("rollout.context-dir: frame size does not match the model");

  ad::Graph g(false);
  std::mt19937_64 rng(cfg.seed);
  std::vector<IndicatorVector> context_indicators;
  HierarchyState state = filter_context(net, g, frames, rng, &context_indicators);
  Engine engine(net, g);
  const RolloutTrace trace = engine.open_loop_rollout(state, horizon, rng, argmax);

  const fs::path out(cfg.out);
  fs::create_directories(out);
  std::ofstream csv(out / "indicators.csv");
  csv << "t";
  for (int n = 1; n <= net.levels(); ++n) csv << ",e_L" << n;
  csv << "\n";
  for (int t = 0; t < trace.horizon(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame%04d.png", t);
    write_png(out / name, trace.frames[t]);
    csv << t;
    for (auto e : trace.indicators[t].values()) csv << "," << static_cast<int>(e);
    csv << "\n";
  }
  write_resolved_config(cfg, out);
  std::cerr << "wrote " << trace.horizon() << " frames to " << out.string() << "\n";
  return 0;
}

int cmd_diagnose(const Common& c, const std::string& ckpt, const std::string& data_dir,
                 std::optional<int> count, std::optional<int> length, int samples) {
  RunConfig cfg = base_config(c);
  if (count) cfg.eval.count = *count;
  if (length) cfg.eval.diag_length = *length;
  cfg.eval.validate();
  ThreadScope threads(c.deterministic);
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint_path(ckpt, cfg));
  const Network& net = loaded.net;
  cfg.model = loaded.meta.model;
  const Dataset data = test_data(cfg, data_dir, cfg.eval.diag_length);
  check_frames(cfg.model, data.config());
  const int N = net.levels();
  const int length_used = std::min(cfg.eval.diag_length, data.config().sequence_length);

  const KlReport kl = kl_per_level_report(net, data, cfg.eval.count, length_used, cfg.seed);
  nlohmann::json j;
  j["mean_depth"] = kl.mean_depth;
  j["kl_per_level"] = kl.per_level;
  j["kl_state"] = kl.state;
  j["kl_indicator"] = kl.indicator;
  j["steps"] = kl.steps;
  j["prior_table"] = N >= 2 ? prior_table_json(prior_change_report(net, data, data.config().switch_prob,
                                                                   cfg.eval.count, length_used, cfg.seed))
                            : nlohmann::json::array();

  // Ablation grids: sample each level alone, and levels 1-2 together, with
  // the rest fixed at the posterior means after a filtered context.
  ad::Graph g(false);
  std::mt19937_64 rng(cfg.seed);
  const Tensor seq = data.sequence(0);
  const int ctx = std::min(cfg.eval.context, seq.dim(0));
  const std::size_t per = seq.size() / static_cast<std::size_t>(seq.dim(0));
  const Tensor frames({ctx, seq.dim(1), seq.dim(2), seq.dim(3)},
                      std::vector<double>(seq.data.begin(), seq.data.begin() + static_cast<std::ptrdiff_t>(per * ctx)));
  const HierarchyState state = filter_context(net, g, frames, rng);
  std::vector<std::set<int>> groups;
  for (int n = 1; n <= N; ++n) groups.push_back({n});
  if (N >= 2) groups.push_back({1, 2});
  const fs::path out(cfg.out);
  fs::create_directories(out);
  nlohmann::json ablation = nlohmann::json::array();
  for (const auto& sampled : groups) {
    std::set<int> fixed;
    std::string tag = "sample_L";
    for (int n = 1; n <= N; ++n)
      if (!sampled.count(n)) fixed.insert(n);
    for (int n : sampled) tag += std::to_string(n);
    const AblationResult a = level_sampling_ablation(net, state, sampled, fixed, samples, cfg.seed);
    std::vector<Tensor> shown;
    for (const auto& f : a.frames) {
      Tensor clamped = f;
      for (auto& v : clamped.data) v = std::clamp(v, 0.0, 1.0);
      shown.push_back(std::move(clamped));
    }
    write_png(out / ("ablation_" + tag + ".png"), tile(shown));
    ablation.push_back({{"sample_levels", sampled}, {"pixel_variance", a.pixel_variance}});
  }
  j["ablation"] = ablation;
  std::ofstream(out / "diagnostics.json") << j.dump(2) << "\n";
  write_resolved_config(cfg, out);
  std::printf("mean depth %.3f\n", kl.mean_depth);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic latent hierarchy video model"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, roll_c, diag_c;
  std::optional<int> gen_count, gen_length;
  std::optional<double> gen_lambda;
  auto* gen = app.add_subcommand("generate-data", "Export a Moving Ball dataset as PNG frames");
  add_common(gen, gen_c);
  gen->add_option("--count", gen_count, "Number of sequences");
  gen->add_option("--lambda", gen_lambda, "Color switch probability per step");
  gen->add_option("--length", gen_length, "Frames per sequence");

  bool resume = false;
  std::string train_data;
  std::optional<double> train_lambda;
  std::optional<int> train_iters, train_levels;
  auto* tr = app.add_subcommand("train", "Train a model; writes metrics.csv and checkpoint.dlh");
  add_common(tr, train_c);
  tr->add_flag("--resume", resume, "Continue from out/checkpoint.dlh");
  tr->add_option("--data", train_data, "Exported dataset directory (default: generate on the fly)");
  tr->add_option("--lambda", train_lambda, "Color switch probability of generated data");
  tr->add_option("--iters", train_iters, "Total iterations");
  tr->add_option("--levels", train_levels, "Number of hierarchy levels");

  std::string eval_ckpt, eval_data;
  std::optional<int> eval_context, eval_horizon, eval_k, eval_count;
  auto* ev = app.add_subcommand("evaluate", "Best-of-k open-loop prediction metrics");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint (default: out/checkpoint.dlh)");
  ev->add_option("--data", eval_data, "Exported test dataset (default: generated test split)");
  ev->add_option("--context", eval_context, "Context frames (default 30)");
  ev->add_option("--horizon", eval_horizon, "Predicted frames");
  ev->add_option("--k", eval_k, "Rollouts per sequence (default 100)");
  ev->add_option("--count", eval_count, "Test sequences");

  std::string roll_ckpt, roll_dir;
  std::optional<int> roll_context;
  int roll_horizon = 20, roll_index = 0;
  bool roll_argmax = false;
  auto* ro = app.add_subcommand("rollout", "Open-loop rollout exported as PNG frames and indicators.csv");
  add_common(ro, roll_c);
  ro->add_option("--checkpoint", roll_ckpt, "Checkpoint (default: out/checkpoint.dlh)");
  ro->add_option("--context-dir", roll_dir, "Directory of frameNNNN.png context frames");
  ro->add_option("--context", roll_context, "Context frames to use");
  ro->add_option("--horizon", roll_horizon, "Frames to generate");
  ro->add_option("--index", roll_index, "Test sequence used when no --context-dir is given");
  ro->add_flag("--argmax", roll_argmax, "Take the indicator prior's mode instead of sampling");

  std::string diag_ckpt, diag_data;
  std::optional<int> diag_count, diag_length;
  int diag_samples = 16;
  auto* dg = app.add_subcommand("diagnose", "Per-level KL, prior table and level-sampling ablations");
  add_common(dg, diag_c);
  dg->add_option("--checkpoint", diag_ckpt, "Checkpoint (default: out/checkpoint.dlh)");
  dg->add_option("--data", diag_data, "Exported dataset (default: generated test split)");
  dg->add_option("--count", diag_count, "Sequences");
  dg->add_option("--length", diag_length, "Frames filtered per sequence");
  dg->add_option("--samples", diag_samples, "Samples per ablation grid")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (*gen) return cmd_generate(gen_c, gen_count, gen_lambda, gen_length);
    if (*tr) return cmd_train(train_c, resume, train_data, train_lambda, train_iters, train_levels);
    if (*ev) return cmd_evaluate(eval_c, eval_ckpt, eval_data, eval_context, eval_horizon, eval_k, eval_count);
    if (*ro) return cmd_rollout(roll_c, roll_ckpt, roll_dir, roll_context, roll_horizon, roll_index, roll_argmax);
    if (*dg) return cmd_diagnose(diag_c, diag_ckpt, diag_data, diag_count, diag_length, diag_samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
