#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / ("dlh_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    std::ofstream(p / "tiny.ini") << "[model]\nnum_levels = 2\nlatent_dim = 2\ndet_dim = 8\n"
                                     "conv_channels = 4, 4\nmlp_hidden = 8\nhead_hidden = 8, 8, 8\n"
                                     "factor_hidden = 8\n[train]\nbatch_size = 2\nsequence_length = 6\n"
                                     "beta_anneal_iters = 2\ntotal_iters = 4\ncheckpoint_every = 2\n"
                                     "[data]\nheight = 16\nwidth = 16\nball_radius = 3\nsequence_length = 6\n"
                                     "switch_prob = 0.3\n[eval]\ncontext = 3\nhorizon = 2\nk = 2\ncount = 2\n"
                                     "diag_length = 6\n";
    return p;
  }();
  return dir;
}

// Exit status of `dlh args` run inside the work directory.
int dlh(const std::string& args) {
  const std::string cmd = "cd \"" + workdir().string() + "\" && \"" DLH_CLI_PATH "\" " + args + " > cli.log 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void ensure_trained() {
  static const bool done = [] {
    REQUIRE(dlh("train --config tiny.ini --seed 2 --out run") == 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST_CASE("configuration and usage errors exit with status 2") {
  std::ofstream(workdir() / "bad.ini") << "[model]\nlatent_dims = 3\n";
  CHECK(dlh("train --config bad.ini --out bad") == 2);
  CHECK(dlh("train --config tiny.ini --lambda 1.5 --out bad") == 2);
  CHECK(dlh("train --no-such-flag") == 2);
  CHECK(dlh("evaluate --config tiny.ini --checkpoint missing.dlh --out bad") == 1);
}

TEST_CASE("train writes metrics, checkpoint and the resolved config") {
  ensure_trained();
  const auto rows = lines(workdir() / "run" / "metrics.csv");
  CHECK(rows.size() == 5);
  CHECK(fs::exists(workdir() / "run" / "checkpoint.dlh"));
  std::ifstream in(workdir() / "run" / "resolved_config.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("run").at("seed") == 2);
  CHECK(j.at("model").at("num_levels") == 2);
}

TEST_CASE("rollout with horizon 0 writes no frames and a header-only indicator log") {
  ensure_trained();
  REQUIRE(dlh("rollout --config tiny.ini --checkpoint run/checkpoint.dlh --horizon 0 --out roll0") == 0);
  CHECK(lines(workdir() / "roll0" / "indicators.csv") == std::vector<std::string>{"t,e_L1,e_L2"});
  CHECK_FALSE(fs::exists(workdir() / "roll0" / "frame0000.png"));
  CHECK(dlh("rollout --config tiny.ini --checkpoint run/checkpoint.dlh --horizon -1 --out rollneg") == 2);
}

TEST_CASE("rollout indicator rows are prefix-monotone") {
  ensure_trained();
  REQUIRE(dlh("rollout --config tiny.ini --checkpoint run/checkpoint.dlh --horizon 12 --out roll") == 0);
  const auto rows = lines(workdir() / "roll" / "indicators.csv");
  REQUIRE(rows.size() == 13);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    int t = 0, e1 = 0, e2 = 0;
    char c1 = 0, c2 = 0;
    std::istringstream(rows[i]) >> t >> c1 >> e1 >> c2 >> e2;
    CHECK(t == static_cast<int>(i) - 1);
    CHECK(e1 == 1);
    CHECK(e2 <= e1);
  }
  CHECK(fs::exists(workdir() / "roll" / "frame0011.png"));
}

TEST_CASE("evaluate with k = 1 and horizon 1 runs end to end") {
  ensure_trained();
  REQUIRE(dlh("evaluate --config tiny.ini --checkpoint run/checkpoint.dlh --k 1 --horizon 1 --out ev") == 0);
  std::ifstream in(workdir() / "ev" / "eval_summary.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("k") == 1);
  CHECK(lines(workdir() / "ev" / "eval.csv").size() >= 2);
}

TEST_CASE("diagnose and generate-data") {
  ensure_trained();
  REQUIRE(dlh("diagnose --config tiny.ini --checkpoint run/checkpoint.dlh --samples 4 --out diag") == 0);
  std::ifstream in(workdir() / "diag" / "diagnostics.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("kl_per_level").size() == 2);
  CHECK(j.at("mean_depth").get<double>() >= 1.0);
  CHECK(fs::exists(workdir() / "diag" / "ablation_sample_L12.png"));
  REQUIRE(dlh("generate-data --config tiny.ini --count 3 --out gen") == 0);
  CHECK(fs::exists(workdir() / "gen" / "manifest.json"));
}
