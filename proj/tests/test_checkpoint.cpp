#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "checks.hpp"
#include "dlh/checkpoint.hpp"

using namespace dlh;
namespace fs = std::filesystem;

namespace {

fs::path scratch_file(const std::string& name) {
  return fs::temp_directory_path() / ("dlh_ckpt_" + name + "_" + std::to_string(::getpid()) + ".dlh");
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise") {
  ModelConfig m = dlh::testing::micro_model_config();
  m.num_levels = 2;
  Network net(m, 31);
  AdamState adam;
  adam.step = 17;
  adam.m = net.params().zeros_like();
  adam.v = net.params().zeros_like();
  adam.m[0].data[0] = 0.25;
  adam.v.back().data.back() = 3.5;
  TrainConfig t;
  t.total_iters = 1234;
  t.seed = 99;
  const fs::path p = scratch_file("roundtrip");
  save_checkpoint(p, Checkpoint{m, t, 42}, net, adam);

  std::ifstream in(p, std::ios::binary);
  std::string magic(std::string(kCheckpointMagic).size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  CHECK(magic == kCheckpointMagic);

  const LoadedCheckpoint l = load_checkpoint(p);
  CHECK(l.meta.model == m);
  CHECK(l.meta.train == t);
  CHECK(l.meta.iteration == 42);
  CHECK(l.adam.step == 17);
  REQUIRE(l.net.params().size() == net.params().size());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    CHECK(l.net.params()[i].name == net.params()[i].name);
    CHECK(l.net.params()[i].value.data == net.params()[i].value.data);
    CHECK(l.adam.m[i].data == adam.m[i].data);
    CHECK(l.adam.v[i].data == adam.v[i].data);
  }
  fs::remove(p);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Network net(dlh::testing::micro_model_config(), 1);
  const fs::path p = scratch_file("corrupt");
  save_checkpoint(p, Checkpoint{net.config(), TrainConfig{}, 1}, net, AdamState{});
  const auto size = fs::file_size(p);

  SUBCASE("truncated payload") {
    fs::resize_file(p, size - 8);
    CHECK_THROWS_AS(load_checkpoint(p), FormatError);
  }
  SUBCASE("bad magic") {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXX", 3);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(p), FormatError);
  }
  SUBCASE("missing file") {
    fs::remove(p);
    CHECK_THROWS_AS(load_checkpoint(p), FormatError);
  }
  fs::remove(p);
}
