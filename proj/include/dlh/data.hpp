#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dlh/tensor.hpp"

namespace dlh {

using Rgb = std::array<double, 3>;

struct MovingBallConfig {
  int height = 32;
  int width = 32;
  int channels = 3;
  double ball_radius = 4.0;
  double speed = 2.0;
  std::vector<Rgb> palette{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}};
  double switch_prob = 0.0;
  int sequence_length = 100;
  std::uint64_t seed = 0;
  bool anti_alias = false;

  // Throws ConfigError naming the offending field.
  void validate() const;
  friend bool operator==(const MovingBallConfig&, const MovingBallConfig&) = default;
};

struct BallSequence {
  Tensor frames;                    // [T, C, H, W] in [0, 1]
  std::vector<int> switch_steps;    // t at which the color differs from t-1
  std::vector<int> color_index;     // per frame
  std::vector<std::array<double, 2>> centers;  // (x, y) per frame
};

// Pure function of (cfg, index).
BallSequence generate_sequence(const MovingBallConfig& cfg, std::uint64_t index);

// Sequences either held in memory (imported or pre-generated) or generated on
// demand from the config.
class Dataset {
 public:
  // Sequence i is generate_sequence(cfg, first_index + i).
  static Dataset procedural(MovingBallConfig cfg, std::uint64_t first_index = 0);
  static Dataset in_memory(MovingBallConfig cfg, std::vector<Tensor> sequences);
  static Dataset generate(MovingBallConfig cfg, int count);

  const MovingBallConfig& config() const { return cfg_; }
  bool is_procedural() const { return sequences_.empty(); }
  int size() const { return static_cast<int>(sequences_.size()); }
  // Procedural datasets accept any index; in-memory ones wrap around.
  Tensor sequence(std::uint64_t index) const;

 private:
  MovingBallConfig cfg_;
  std::vector<Tensor> sequences_;
  std::uint64_t first_index_ = 0;
};

inline constexpr int kDatasetFormatVersion = 1;

void export_dataset(const MovingBallConfig& cfg, int count, const std::filesystem::path& dir);
// Throws FormatError on a missing/corrupt manifest or a version mismatch.
Dataset import_dataset(const std::filesystem::path& dir);

// 8-bit RGB PNG I/O for [C, H, W] frames (C = 1 or 3). Values are clamped to
// [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor& frame);
Tensor read_png(const std::filesystem::path& path);

}  // namespace dlh
