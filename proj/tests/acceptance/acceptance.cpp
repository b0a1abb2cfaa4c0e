// Acceptance runner: one PASS/FAIL line per criterion.
//
// Criteria 5-9 need the desk-scale models under --models/<name>. A missing or
// unfinished model is trained (or resumed) in-process from --config unless
// --no-train is given, in which case the criterion fails.

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "../checks.hpp"
#include "dlh/checkpoint.hpp"
#include "dlh/config.hpp"
#include "dlh/eval.hpp"

using namespace dlh;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path models;
  fs::path config;
  fs::path cli;
  fs::path scratch;
  bool train_missing = true;
  std::set<int> only;
  int eval_count = 100;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

struct ModelSpec {
  std::string name;
  int levels;
  double lambda;
};

const std::map<std::string, ModelSpec> kModels{
    {"L2_lambda0", {"L2_lambda0", 2, 0.0}},      {"L3_lambda0", {"L3_lambda0", 3, 0.0}},
    {"L4_lambda0", {"L4_lambda0", 4, 0.0}},      {"L5_lambda0", {"L5_lambda0", 5, 0.0}},
    {"L2_lambda0.1", {"L2_lambda0.1", 2, 0.1}}, {"L2_lambda0.3", {"L2_lambda0.3", 2, 0.3}},
};

RunConfig model_config(const Options& o, const ModelSpec& m) {
  RunConfig cfg = load_run_config(o.config);
  cfg.model.num_levels = m.levels;
  cfg.data.switch_prob = m.lambda;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

// Returns the finished model, training or resuming it when allowed.
std::optional<Network> load_model(const Options& o, const std::string& name, std::string& why) {
  const ModelSpec& m = kModels.at(name);
  const RunConfig cfg = model_config(o, m);
  const fs::path dir = o.models / name;
  const fs::path ckpt = dir / "checkpoint.dlh";
  if (fs::exists(ckpt)) {
    LoadedCheckpoint l = load_checkpoint(ckpt);
    if (l.meta.iteration >= cfg.train.total_iters) return std::move(l.net);
  }
  if (!o.train_missing) {
    why = name + " not trained (" + ckpt.string() + ")";
    return std::nullopt;
  }
  std::cerr << "training " << name << " into " << dir << "\n";
  Network net(cfg.model, cfg.seed);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.resume = fs::exists(ckpt);
  opts.on_iteration = [&](const IterationMetrics& it) {
    if (it.iter % 500 == 0) std::cerr << name << " iter " << it.iter << " loss " << it.loss << "\n";
  };
  fs::create_directories(dir);
  write_resolved_config(cfg, dir);
  train(net, cfg.train, Dataset::procedural(cfg.data), opts);
  return net;
}

// Held-out sequences of the model's own data distribution.
Dataset held_out(const Options& o, const std::string& name, int length) {
  RunConfig cfg = model_config(o, kModels.at(name));
  cfg.data.sequence_length = length;
  return Dataset::procedural(cfg.data, cfg.eval.test_offset);
}

// The distribution and mixture test files are compiled into this binary.
Outcome math_core() {
  doctest::Context ctx;
  std::ostringstream sink;
  ctx.setCout(&sink);
  const int rc = ctx.run();
  std::cerr << sink.str();
  std::string summary = "no summary";
  const std::string text = sink.str();
  if (const auto at = text.find("test cases:"); at != std::string::npos)
    summary = text.substr(at, text.find('\n', at) - at);
  return {rc == 0 && text.find("test cases:") != std::string::npos, "distribution and mixture properties, " + summary};
}

Outcome gradient_fidelity() {
  Network net(dlh::testing::micro_model_config(), 11);
  const Dataset data = Dataset::procedural(dlh::testing::micro_data_config());
  const auto rep = dlh::testing::check_elbo_gradients(net, {data.sequence(0)}, 1.0, 3);
  return {rep.worst_rel_err < 1e-3 && rep.checked == net.params().scalar_count(),
          "worst relative error " + std::to_string(rep.worst_rel_err) + " at " +
              net.params()[rep.worst_param].name + " over " + std::to_string(rep.checked) + " parameters"};
}

Outcome carry_over() {
  ModelConfig m = dlh::testing::micro_model_config();
  m.num_levels = 3;
  Network net(m, 21);
  MovingBallConfig d = dlh::testing::micro_data_config();
  d.sequence_length = 10;
  d.switch_prob = 0.3;
  const auto r = dlh::testing::check_carry_over(net, Dataset::procedural(d, 5000), 100, 10, 77);
  const long bad = r.carry_violations + r.blocking_violations + r.first_level_violations + r.prefix_violations;
  return {bad == 0 && r.frozen_level_steps > 0,
          std::to_string(r.steps) + " steps, " + std::to_string(r.frozen_level_steps) + " frozen level-steps, " +
              std::to_string(r.carry_violations) + " carry / " + std::to_string(r.blocking_violations) +
              " blocking violations"};
}

Outcome training_smoke(const Options& o) {
  const auto r = dlh::testing::training_smoke(o.scratch / "smoke");
  return {r.passed(), "window means " + fmt(r.early, 1) + " -> " + fmt(r.late, 1)};
}

Outcome structure(const Options& o) {
  std::map<int, double> depth;
  std::string why;
  for (int levels : {2, 3, 4, 5}) {
    const std::string name = "L" + std::to_string(levels) + "_lambda0";
    auto net = load_model(o, name, why);
    if (!net) return {false, why};
    const RunConfig cfg = model_config(o, kModels.at(name));
    const int T = cfg.train.sequence_length;
    depth[levels] = kl_per_level_report(*net, held_out(o, name, T), o.eval_count, T, cfg.seed).mean_depth;
  }
  bool ok = depth[2] >= 1.05 && depth[2] <= 1.7;
  std::string d = "L-bar over training length:";
  for (auto [n, v] : depth) {
    d += " " + std::to_string(n) + "-level " + fmt(v);
    if (n > 2) ok = ok && std::abs(v - depth[2]) <= 0.4;
  }
  return {ok, d};
}

std::optional<KlReport> three_level_kl(const Options& o, std::string& why) {
  static std::optional<KlReport> cached;
  if (cached) return cached;
  auto net = load_model(o, "L3_lambda0", why);
  if (!net) return std::nullopt;
  const RunConfig cfg = model_config(o, kModels.at("L3_lambda0"));
  const int T = cfg.train.sequence_length;
  cached = kl_per_level_report(*net, held_out(o, "L3_lambda0", T), o.eval_count, T, cfg.seed);
  return cached;
}

Outcome level_collapse(const Options& o) {
  std::string why;
  const auto kl = three_level_kl(o, why);
  if (!kl) return {false, why};
  const auto& k = kl->per_level;
  const bool ok = k[0] > k[1] && k[1] > k[2] && k[2] < 1.0 && k[0] > 10.0;
  return {ok, "per-step KL " + fmt(k[0], 2) + " / " + fmt(k[1], 2) + " / " + fmt(k[2], 2) + " nats"};
}

Outcome stochasticity(const Options& o) {
  std::vector<double> change, stat;
  std::string d, why;
  for (const char* name : {"L2_lambda0", "L2_lambda0.1", "L2_lambda0.3"}) {
    auto net = load_model(o, name, why);
    if (!net) return {false, why};
    const ModelSpec& m = kModels.at(name);
    const RunConfig cfg = model_config(o, m);
    const int T = cfg.train.sequence_length;
    const auto rows = prior_change_report(*net, held_out(o, name, T), m.lambda, o.eval_count, T, cfg.seed);
    double c = std::nan(""), s = std::nan("");
    long cn = 0, sn = 0;
    for (const auto& r : rows) {
      if (r.condition == "change" && r.count > 0) c = r.mean_p, cn = r.count;
      if (r.condition == "static" && r.count > 0) s = r.mean_p, sn = r.count;
    }
    change.push_back(c);
    stat.push_back(s);
    d += " lambda " + fmt(m.lambda, 1) + ": change " + fmt(c) + " (n=" + std::to_string(cn) + "), static " + fmt(s) +
         " (n=" + std::to_string(sn) + ");";
  }
  // NaN (an empty bucket) fails every comparison.
  const bool ok = change[0] > change[1] && change[1] > change[2] && stat[0] < stat[1] && stat[1] < stat[2] &&
                  change[0] > 0.9 && stat[0] < 0.05;
  return {ok, d};
}

Outcome sharp_switches(const Options& o) {
  std::string why;
  auto net = load_model(o, "L2_lambda0.1", why);
  if (!net) return {false, why};
  const RunConfig cfg = model_config(o, kModels.at("L2_lambda0.1"));
  const int context = cfg.eval.context, horizon = cfg.eval.horizon;
  const Dataset data = held_out(o, "L2_lambda0.1", context);
  int with_switch = 0;
  long switches = 0, sharp = 0;
  const int rollouts = 100;
  for (int i = 0; i < rollouts; ++i) {
    ad::Graph g(false);
    std::mt19937_64 rng(cfg.seed * 1000003 + static_cast<std::uint64_t>(i));
    const HierarchyState state =
        filter_context(*net, g, dlh::testing::crop_frames(data.sequence(static_cast<std::uint64_t>(i)), context), rng);
    Engine engine(*net, g);
    RolloutTrace trace = engine.open_loop_rollout(state, horizon, rng);
    for (auto& f : trace.frames)
      for (auto& v : f.data) v = std::clamp(v, 0.0, 1.0);
    const auto rep = color_switch_sharpness(trace.frames, cfg.data.palette);
    if (!rep.switches.empty()) ++with_switch;
    for (const auto& s : rep.switches) {
      ++switches;
      sharp += s.sharp;
    }
  }
  const double frac_roll = static_cast<double>(with_switch) / rollouts;
  const double frac_sharp = switches ? static_cast<double>(sharp) / switches : 0.0;
  return {frac_roll >= 0.3 && switches > 0 && frac_sharp >= 0.8,
          std::to_string(with_switch) + "/" + std::to_string(rollouts) + " rollouts switch; " + std::to_string(sharp) +
              "/" + std::to_string(switches) + " switches sharp (horizon " + std::to_string(horizon) + ")"};
}

Outcome ablation(const Options& o) {
  std::string why;
  const auto kl = three_level_kl(o, why);
  if (!kl) return {false, why};
  std::set<int> collapsed;
  for (int n = 1; n <= 3; ++n)
    if (kl->per_level[static_cast<std::size_t>(n - 1)] < 1.0) collapsed.insert(n);
  const std::string kls = "per-step KL " + fmt(kl->per_level[0], 2) + " / " + fmt(kl->per_level[1], 2) + " / " +
                          fmt(kl->per_level[2], 2);
  if (collapsed.empty() || collapsed.count(1)) return {false, "no collapsed level above level 1; " + kls};
  auto net = load_model(o, "L3_lambda0", why);
  if (!net) return {false, why};
  const RunConfig cfg = model_config(o, kModels.at("L3_lambda0"));
  const Dataset data = held_out(o, "L3_lambda0", cfg.eval.context);
  double var_collapsed = 0.0, var_low = 0.0;
  const int contexts = 10, samples = 16;
  for (int i = 0; i < contexts; ++i) {
    ad::Graph g(false);
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(i));
    const HierarchyState state = filter_context(
        *net, g, dlh::testing::crop_frames(data.sequence(static_cast<std::uint64_t>(i)), cfg.eval.context), rng);
    std::set<int> fixed_c, fixed_low;
    for (int n = 1; n <= 3; ++n) {
      if (!collapsed.count(n)) fixed_c.insert(n);
      if (n > 2) fixed_low.insert(n);
    }
    var_collapsed += level_sampling_ablation(*net, state, collapsed, fixed_c, samples, cfg.seed + i).pixel_variance;
    var_low += level_sampling_ablation(*net, state, {1, 2}, fixed_low, samples, cfg.seed + i).pixel_variance;
  }
  const double ratio = var_low > 0 ? var_collapsed / var_low : std::nan("");
  std::string levels;
  for (int n : collapsed) levels += (levels.empty() ? "L" : ",L") + std::to_string(n);
  return {ratio <= 0.1, "variance sampling collapsed " + levels + " " + std::to_string(var_collapsed / contexts) +
                            ", sampling L1-2 " + std::to_string(var_low / contexts) + ", ratio " + fmt(ratio, 4) +
                            "; " + kls};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& diff) {
  std::set<fs::path> files;
  for (const auto& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), root));
  for (const auto& f : files)
    if (!fs::exists(a / f) || !fs::exists(b / f) || slurp(a / f) != slurp(b / f)) {
      diff = f.string();
      return false;
    }
  return !files.empty();
}

Outcome reproducibility(const Options& o) {
  const fs::path root = o.scratch / "repro";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "tiny.ini") << "[model]\nnum_levels = 2\nlatent_dim = 4\ndet_dim = 16\n"
                                      "conv_channels = 8, 16\nmlp_hidden = 16\nhead_hidden = 16, 16, 16\n"
                                      "factor_hidden = 16\n[train]\nbatch_size = 4\nsequence_length = 10\n"
                                      "beta_anneal_iters = 25\ntotal_iters = 50\ncheckpoint_every = 25\n"
                                      "[data]\nheight = 16\nwidth = 16\nball_radius = 3\nsequence_length = 10\n"
                                      "switch_prob = 0.1\n";
  // Both runs use the same relative paths so resolved_config.json matches too.
  auto run = [&](const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd \"" + dir.string() + "\" && \"" + fs::absolute(o.cli).string() + "\" " + args +
                            " --config ../tiny.ini --seed 4 --deterministic > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  for (const char* r : {"a", "b"}) {
    const fs::path dir = root / r;
    fs::create_directories(dir);
    if (!run(dir, "generate-data --count 16 --out data")) return {false, "generate-data failed"};
    if (!run(dir, "train --iters 50 --data data --out train")) return {false, "train failed"};
  }
  std::string diff;
  if (!same_tree(root / "a" / "data", root / "b" / "data", diff)) return {false, "generate-data differs: " + diff};
  const std::string ma = slurp(root / "a" / "train" / "metrics.csv");
  if (ma.empty() || ma != slurp(root / "b" / "train" / "metrics.csv")) return {false, "train metrics.csv differs"};
  const long rows = std::count(ma.begin(), ma.end(), '\n') - 1;
  return {rows == 50, "dataset files and metrics.csv bit-identical (" + std::to_string(rows) + " iterations)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  Options o;
  std::string only;
  bool no_train = false;
  app.add_option("--models", o.models, "Directory of trained desk-scale models")->required();
  app.add_option("--config", o.config, "Desk-scale run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--cli", o.cli, "Path to the dlh executable")->required()->check(CLI::ExistingFile);
  app.add_option("--scratch", o.scratch, "Scratch directory")->required();
  app.add_option("--only", only, "Comma-separated criteria to run");
  app.add_option("--eval-count", o.eval_count, "Held-out sequences per diagnostic")->check(CLI::PositiveNumber);
  app.add_flag("--no-train", no_train, "Fail instead of training missing models");
  CLI11_PARSE(app, argc, argv);
  o.train_missing = !no_train;
  for (std::stringstream ss(only); ss.good();) {
    std::string tok;
    std::getline(ss, tok, ',');
    if (!tok.empty()) o.only.insert(std::stoi(tok));
  }
  fs::create_directories(o.scratch);

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "math-core property suite", 300, math_core},
      {2, "gradient fidelity", 120, gradient_fidelity},
      {3, "carry-over and blocking", 120, carry_over},
      {4, "training smoke", 600, [&] { return training_smoke(o); }},
      {5, "structure convergence", 0, [&] { return structure(o); }},
      {6, "level collapse", 0, [&] { return level_collapse(o); }},
      {7, "stochasticity response", 0, [&] { return stochasticity(o); }},
      {8, "sharp stochastic switches", 0, [&] { return sharp_switches(o); }},
      {9, "ablation variance", 0, [&] { return ablation(o); }},
      {10, "reproducibility", 0, [&] { return reproducibility(o); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!o.only.empty() && !o.only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      r.pass = false;
      r.detail += "; over the " + fmt(c.limit_s, 0) + " s budget";
    }
    failed += !r.pass;
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", c.id, r.pass ? "PASS" : "FAIL", c.name, r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
