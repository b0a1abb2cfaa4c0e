#include "dlh/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace dlh {
namespace {

void write_tensors(std::ostream& out, const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

void read_into(std::istream& in, Tensor& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw FormatError("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     const Network& net, const AdamState& adam) {
  nlohmann::json h;
  h["model"] = meta.model;
  h["train"] = meta.train;
  h["iteration"] = meta.iteration;
  h["adam_step"] = adam.step;
  h["has_adam"] = !adam.m.empty();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : net.params()) tensors.push_back({{"name", p.name}, {"shape", p.value.shape}});
  h["tensors"] = tensors;
  const std::string header = h.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<Tensor> values;
    for (const auto& p : net.params()) values.push_back(p.value);
    write_tensors(out, values);
    if (!adam.m.empty()) {
      write_tensors(out, adam.m);
      write_tensors(out, adam.v);
    }
    if (!out) throw FormatError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::size_t mlen = std::strlen(kCheckpointMagic);
  std::string magic(mlen, '\0');
  in.read(magic.data(), static_cast<std::streamsize>(mlen));
  if (!in || magic != kCheckpointMagic) throw FormatError(path.string() + " is not a DLH checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw FormatError("checkpoint header length is corrupt");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint header truncated");

  nlohmann::json h;
  Checkpoint meta;
  bool has_adam = false;
  long adam_step = 0;
  try {
    h = nlohmann::json::parse(header);
    meta.model = h.at("model").get<ModelConfig>();
    meta.train = h.at("train").get<TrainConfig>();
    meta.iteration = h.at("iteration").get<long>();
    adam_step = h.at("adam_step").get<long>();
    has_adam = h.at("has_adam").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is corrupt: ") + e.what());
  }
  meta.model.validate();
  Network net(meta.model, 0);
  const auto& tensors = h.at("tensors");
  if (tensors.size() != net.params().size())
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, model expects " + std::to_string(net.params().size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = net.params()[i];
    if (tensors[i].at("name").get<std::string>() != p.name ||
        tensors[i].at("shape").get<std::vector<int>>() != p.value.shape)
      throw FormatError("checkpoint tensor " + std::to_string(i) + " does not match parameter " + p.name);
    read_into(in, p.value, p.name);
  }
  AdamState adam;
  adam.step = adam_step;
  if (has_adam) {
    adam.m = net.params().zeros_like();
    adam.v = net.params().zeros_like();
    for (auto& t : adam.m) read_into(in, t, "adam first moment");
    for (auto& t : adam.v) read_into(in, t, "adam second moment");
  }
  return LoadedCheckpoint{std::move(meta), std::move(net), std::move(adam)};
}

}  // namespace dlh
