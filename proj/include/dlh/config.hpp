#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dlh/data.hpp"
#include "dlh/elbo.hpp"
#include "dlh/network.hpp"

namespace dlh {

struct EvalOptions {
  int context = 30;
  int horizon = 20;
  int k = 100;
  int count = 100;  // test sequences
  int diag_length = 100;  // frames filtered for the diagnostic reports
  std::uint64_t test_offset = 1000000;  // first test sequence index, disjoint from training

  void validate() const;
  friend bool operator==(const EvalOptions&, const EvalOptions&) = default;
};

// Everything one command needs. Read from an INI file with sections
// [run] [model] [train] [data] [eval].
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MovingBallConfig data;
  EvalOptions eval;
  std::uint64_t seed = 0;     // network initialisation, training noise, evaluation
  std::string out = "out";
  std::string dataset;        // exported dataset directory; empty = generate on the fly
  int data_count = 1000;      // sequences written by generate-data

  // Model frame size follows the data section; train.seed follows seed.
  void resolve();
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Unknown sections or keys and unparsable values raise ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& ini_text);

nlohmann::json to_json(const RunConfig& cfg);
// Writes the canonical JSON form of the config to dir/resolved_config.json.
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace dlh
