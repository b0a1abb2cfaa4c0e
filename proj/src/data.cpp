#include "dlh/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "dlh/error.hpp"

namespace dlh {

void MovingBallConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("data." + m); };
  if (height <= 0 || width <= 0) fail("frame_size: must be positive");
  if (channels != 3) fail("frame_size: only 3 channels are supported");
  if (!(ball_radius > 0)) fail("ball_radius: must be positive");
  if (2 * ball_radius >= std::min(height, width)) fail("ball_radius: ball does not fit the frame");
  if (!(speed > 0)) fail("speed: must be positive");
  if (palette.size() < 2) fail("palette: need at least 2 colors");
  for (std::size_t i = 0; i < palette.size(); ++i) {
    for (double v : palette[i])
      if (!(v >= 0.0 && v <= 1.0)) fail("palette: components must lie in [0, 1]");
    for (std::size_t j = 0; j < i; ++j)
      if (palette[i] == palette[j]) fail("palette: colors must be distinct");
  }
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) fail("switch_prob: must lie in [0, 1]");
  if (sequence_length <= 0) fail("sequence_length: must be positive");
}

namespace {

void reflect(double& x, double& v, double lo, double hi) {
  // Speed is smaller than the free range, so at most one bounce per step.
  if (x < lo) {
    x = 2 * lo - x;
    v = -v;
  } else if (x > hi) {
    x = 2 * hi - x;
    v = -v;
  }
}

void render(const MovingBallConfig& cfg, double cx, double cy, const Rgb& color, double* frame) {
  const int H = cfg.height, W = cfg.width;
  const double r2 = cfg.ball_radius * cfg.ball_radius;
  const int ss = cfg.anti_alias ? 4 : 1;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - cx;
          const double py = y + (sy + 0.5) / ss - cy;
          hits += (px * px + py * py <= r2);
        }
      if (hits == 0) continue;
      const double cover = static_cast<double>(hits) / (ss * ss);
      for (int c = 0; c < 3; ++c) frame[(c * H + y) * W + x] = cover * color[c];
    }
}

}  // namespace

BallSequence generate_sequence(const MovingBallConfig& cfg, std::uint64_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double r = cfg.ball_radius;
  const double xmax = cfg.width - r, ymax = cfg.height - r;
  double x = r + unif(rng) * (xmax - r);
  double y = r + unif(rng) * (ymax - r);
  const int dir = static_cast<int>(rng() % 8);
  const double angle = dir * (M_PI / 4.0);
  double vx = cfg.speed * std::cos(angle), vy = cfg.speed * std::sin(angle);
  if (dir % 2 == 0) (dir == 0 || dir == 4 ? vy : vx) = 0.0;  // exact axis motion
  const int k = static_cast<int>(cfg.palette.size());
  int color = static_cast<int>(rng() % static_cast<std::uint64_t>(k));

  const int T = cfg.sequence_length;
  BallSequence out;
  out.frames = Tensor({T, 3, cfg.height, cfg.width});
  const std::size_t frame_size = static_cast<std::size_t>(3) * cfg.height * cfg.width;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      x += vx;
      y += vy;
      reflect(x, vx, r, xmax);
      reflect(y, vy, r, ymax);
      if (unif(rng) < cfg.switch_prob) {
        const int step = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(k - 1));
        color = (color + step) % k;
        out.switch_steps.push_back(t);
      }
    }
    render(cfg, x, y, cfg.palette[color], out.frames.data.data() + t * frame_size);
    out.color_index.push_back(color);
    out.centers.push_back({x, y});
  }
  return out;
}

Dataset Dataset::procedural(MovingBallConfig cfg, std::uint64_t first_index) {
  cfg.validate();
  Dataset d;
  d.cfg_ = std::move(cfg);
  d.first_index_ = first_index;
  return d;
}

Dataset Dataset::in_memory(MovingBallConfig cfg, std::vector<Tensor> sequences) {
  require(!sequences.empty(), "Dataset: no sequences");
  Dataset d;
  d.cfg_ = std::move(cfg);
  d.sequences_ = std::move(sequences);
  return d;
}

Dataset Dataset::generate(MovingBallConfig cfg, int count) {
  require(count > 0, "Dataset::generate: count must be positive");
  std::vector<Tensor> seqs;
  for (int i = 0; i < count; ++i) seqs.push_back(generate_sequence(cfg, static_cast<std::uint64_t>(i)).frames);
  return in_memory(std::move(cfg), std::move(seqs));
}

Tensor Dataset::sequence(std::uint64_t index) const {
  if (is_procedural()) return generate_sequence(cfg_, first_index_ + index).frames;
  return sequences_[index % sequences_.size()];
}

void write_png(const std::filesystem::path& path, const Tensor& frame) {
  require(frame.rank() == 3 && (frame.dim(0) == 1 || frame.dim(0) == 3), "write_png: expected [C, H, W]");
  const int C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        const double v = std::clamp(frame.data[(static_cast<std::size_t>(c) * H + y) * W + x], 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * W + x) * C + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw FormatError("write_png: " + path.string() + ": " + img.message);
}

Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError("read_png: " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw FormatError("read_png: " + path.string() + ": " + img.message);
  Tensor out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        out.data[(static_cast<std::size_t>(c) * H + y) * W + x] =
            buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0;
  return out;
}

namespace {

std::string seq_dir(int i) {
  char b[32];
  std::snprintf(b, sizeof b, "seq%05d", i);
  return b;
}
std::string frame_file(int t) {
  char b[32];
  std::snprintf(b, sizeof b, "frame%04d.png", t);
  return b;
}

}  // namespace

void export_dataset(const MovingBallConfig& cfg, int count, const std::filesystem::path& dir) {
  cfg.validate();
  if (count <= 0) throw ConfigError("data.count: must be positive");
  std::filesystem::create_directories(dir);
  const std::size_t frame_size = static_cast<std::size_t>(3) * cfg.height * cfg.width;
  for (int i = 0; i < count; ++i) {
    const BallSequence s = generate_sequence(cfg, static_cast<std::uint64_t>(i));
    const auto sdir = dir / seq_dir(i);
    std::filesystem::create_directories(sdir);
    for (int t = 0; t < cfg.sequence_length; ++t) {
      Tensor f({3, cfg.height, cfg.width});
      std::copy_n(s.frames.data.begin() + static_cast<std::ptrdiff_t>(t * frame_size), frame_size, f.data.begin());
      write_png(sdir / frame_file(t), f);
    }
  }
  nlohmann::json m;
  m["version"] = kDatasetFormatVersion;
  m["frame_size"] = {cfg.height, cfg.width, cfg.channels};
  m["ball_radius"] = cfg.ball_radius;
  m["speed"] = cfg.speed;
  m["palette"] = cfg.palette;
  m["switch_prob"] = cfg.switch_prob;
  m["sequence_length"] = cfg.sequence_length;
  m["count"] = count;
  m["seed"] = cfg.seed;
  m["anti_alias"] = cfg.anti_alias;
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

Dataset import_dataset(const std::filesystem::path& dir) {
  const auto manifest = dir / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw FormatError("import_dataset: missing " + manifest.string());
  nlohmann::json m;
  MovingBallConfig cfg;
  int count = 0;
  try {
    in >> m;
    const int version = m.at("version").get<int>();
    if (version != kDatasetFormatVersion)
      throw FormatError("import_dataset: format version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kDatasetFormatVersion) + ")");
    const auto fs = m.at("frame_size").get<std::vector<int>>();
    if (fs.size() != 3) throw FormatError("import_dataset: frame_size must have 3 entries");
    cfg.height = fs[0];
    cfg.width = fs[1];
    cfg.channels = fs[2];
    cfg.ball_radius = m.at("ball_radius").get<double>();
    cfg.speed = m.at("speed").get<double>();
    cfg.palette = m.at("palette").get<std::vector<Rgb>>();
    cfg.switch_prob = m.at("switch_prob").get<double>();
    cfg.sequence_length = m.at("sequence_length").get<int>();
    cfg.seed = m.at("seed").get<std::uint64_t>();
    cfg.anti_alias = m.value("anti_alias", false);
    count = m.at("count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("import_dataset: corrupt manifest: " + std::string(e.what()));
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("import_dataset: invalid manifest: ") + e.what());
  }
  if (count <= 0) throw FormatError("import_dataset: count must be positive");
  const std::size_t frame_size = static_cast<std::size_t>(3) * cfg.height * cfg.width;
  std::vector<Tensor> seqs;
  for (int i = 0; i < count; ++i) {
    Tensor s({cfg.sequence_length, 3, cfg.height, cfg.width});
    for (int t = 0; t < cfg.sequence_length; ++t) {
      const Tensor f = read_png(dir / seq_dir(i) / frame_file(t));
      if (f.dim(1) != cfg.height || f.dim(2) != cfg.width)
        throw FormatError("import_dataset: frame size differs from manifest");
      std::copy(f.data.begin(), f.data.end(), s.data.begin() + static_cast<std::ptrdiff_t>(t * frame_size));
    }
    seqs.push_back(std::move(s));
  }
  return Dataset::in_memory(std::move(cfg), std::move(seqs));
}

}  // namespace dlh
