#include "dlh/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dlh/error.hpp"

namespace dlh {

void EvalOptions::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("eval." + m); };
  if (context < 1) fail("context: must be >= 1");
  if (horizon < 0) fail("horizon: must be >= 0");
  if (k < 1) fail("k: must be >= 1");
  if (count < 1) fail("count: must be >= 1");
  if (diag_length < 2) fail("diag_length: must be >= 2");
}

void RunConfig::resolve() {
  model.frame_h = data.height;
  model.frame_w = data.width;
  model.frame_c = data.channels;
  train.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  eval.validate();
  if (model.frame_h != data.height || model.frame_w != data.width)
    throw ConfigError("model.frame_h: frame size must match data.height/width");
  if (out.empty()) throw ConfigError("run.out: must not be empty");
  if (data_count < 1) throw ConfigError("run.data_count: must be >= 1");
}

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& field, const std::string& text) {
  const std::string s = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(field + ": cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& field, const std::string& text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(field + ": expected true/false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& field, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(field, item));
  return out;
}

// "1 0 0; 0 1 0; ..."
std::vector<Rgb> parse_palette(const std::string& field, const std::string& text) {
  std::vector<Rgb> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    std::stringstream cs(item);
    Rgb c{};
    std::string v;
    int i = 0;
    while (cs >> v) {
      if (i == 3) throw ConfigError(field + ": each color needs exactly 3 components");
      c[static_cast<std::size_t>(i++)] = parse_number<double>(field, v);
    }
    if (i != 3) throw ConfigError(field + ": each color needs exactly 3 components");
    out.push_back(c);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& field, const std::string& value)>;

std::map<std::string, Setter> setters() {
  std::map<std::string, Setter> s;
  auto i32 = [&](const std::string& key, auto get) {
    s[key] = [get](RunConfig& c, const std::string& f, const std::string& v) { get(c) = parse_number<int>(f, v); };
  };
  auto f64 = [&](const std::string& key, auto get) {
    s[key] = [get](RunConfig& c, const std::string& f, const std::string& v) { get(c) = parse_number<double>(f, v); };
  };
  auto u64 = [&](const std::string& key, auto get) {
    s[key] = [get](RunConfig& c, const std::string& f, const std::string& v) {
      get(c) = parse_number<std::uint64_t>(f, v);
    };
  };

  u64("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
  s["run.out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = trim(v); };
  s["run.dataset"] = [](RunConfig& c, const std::string&, const std::string& v) { c.dataset = trim(v); };
  i32("run.data_count", [](RunConfig& c) -> int& { return c.data_count; });

  i32("model.num_levels", [](RunConfig& c) -> int& { return c.model.num_levels; });
  i32("model.latent_dim", [](RunConfig& c) -> int& { return c.model.latent_dim; });
  i32("model.det_dim", [](RunConfig& c) -> int& { return c.model.det_dim; });
  f64("model.obs_std", [](RunConfig& c) -> double& { return c.model.obs_std; });
  s["model.conv_channels"] = [](RunConfig& c, const std::string& f, const std::string& v) {
    c.model.conv_channels = parse_int_list(f, v);
  };
  i32("model.conv_kernel", [](RunConfig& c) -> int& { return c.model.conv_kernel; });
  i32("model.mlp_hidden", [](RunConfig& c) -> int& { return c.model.mlp_hidden; });
  s["model.head_hidden"] = [](RunConfig& c, const std::string& f, const std::string& v) {
    c.model.head_hidden = parse_int_list(f, v);
  };
  i32("model.factor_hidden", [](RunConfig& c) -> int& { return c.model.factor_hidden; });

  f64("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
  f64("train.adam_epsilon", [](RunConfig& c) -> double& { return c.train.adam_epsilon; });
  f64("train.adam_beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; });
  f64("train.adam_beta2", [](RunConfig& c) -> double& { return c.train.adam_beta2; });
  i32("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; });
  i32("train.sequence_length", [](RunConfig& c) -> int& { return c.train.sequence_length; });
  i32("train.beta_anneal_iters", [](RunConfig& c) -> int& { return c.train.beta_anneal_iters; });
  i32("train.total_iters", [](RunConfig& c) -> int& { return c.train.total_iters; });
  f64("train.grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; });
  i32("train.checkpoint_every", [](RunConfig& c) -> int& { return c.train.checkpoint_every; });

  i32("data.height", [](RunConfig& c) -> int& { return c.data.height; });
  i32("data.width", [](RunConfig& c) -> int& { return c.data.width; });
  f64("data.ball_radius", [](RunConfig& c) -> double& { return c.data.ball_radius; });
  f64("data.speed", [](RunConfig& c) -> double& { return c.data.speed; });
  s["data.palette"] = [](RunConfig& c, const std::string& f, const std::string& v) {
    c.data.palette = parse_palette(f, v);
  };
  f64("data.switch_prob", [](RunConfig& c) -> double& { return c.data.switch_prob; });
  i32("data.sequence_length", [](RunConfig& c) -> int& { return c.data.sequence_length; });
  u64("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; });
  s["data.anti_alias"] = [](RunConfig& c, const std::string& f, const std::string& v) {
    c.data.anti_alias = parse_bool(f, v);
  };

  i32("eval.context", [](RunConfig& c) -> int& { return c.eval.context; });
  i32("eval.horizon", [](RunConfig& c) -> int& { return c.eval.horizon; });
  i32("eval.k", [](RunConfig& c) -> int& { return c.eval.k; });
  i32("eval.count", [](RunConfig& c) -> int& { return c.eval.count; });
  i32("eval.diag_length", [](RunConfig& c) -> int& { return c.eval.diag_length; });
  u64("eval.test_offset", [](RunConfig& c) -> std::uint64_t& { return c.eval.test_offset; });
  return s;
}

RunConfig from_tree(const pt::ptree& tree) {
  static const auto table = setters();
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(section + ": keys must be inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string field = section + "." + key;
      const auto it = table.find(field);
      if (it == table.end()) throw ConfigError(field + ": unknown key");
      it->second(cfg, field, value.data());
    }
  }
  cfg.resolve();
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_tree(tree);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["run"] = {{"seed", cfg.seed}, {"out", cfg.out}, {"dataset", cfg.dataset}, {"data_count", cfg.data_count}};
  j["model"] = cfg.model;
  j["train"] = cfg.train;
  const auto& d = cfg.data;
  j["data"] = {{"height", d.height},           {"width", d.width},
               {"channels", d.channels},       {"ball_radius", d.ball_radius},
               {"speed", d.speed},             {"palette", d.palette},
               {"switch_prob", d.switch_prob}, {"sequence_length", d.sequence_length},
               {"seed", d.seed},               {"anti_alias", d.anti_alias}};
  const auto& e = cfg.eval;
  j["eval"] = {{"context", e.context}, {"horizon", e.horizon},          {"k", e.k},
               {"count", e.count},     {"diag_length", e.diag_length}, {"test_offset", e.test_offset}};
  return j;
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "resolved_config.json") << to_json(cfg).dump(2) << "\n";
}

}  // namespace dlh
