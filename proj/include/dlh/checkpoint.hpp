#pragma once

#include <filesystem>

#include "dlh/elbo.hpp"
#include "dlh/network.hpp"

namespace dlh {

inline constexpr const char* kCheckpointMagic = "DLH-CKPT-v1";

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  long iteration = 0;
};

// Layout: magic, u64 header length, JSON header (configs, iteration, tensor
// names and shapes), then raw little-endian doubles for every parameter
// followed by the Adam first and second moments. Written to a temporary file
// and renamed, so a crash never leaves a truncated checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& meta,
                     const Network& net, const AdamState& adam);

struct LoadedCheckpoint {
  Checkpoint meta;
  Network net;
  AdamState adam;
};

// Throws FormatError on a bad magic, truncated payload or shape mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dlh
