#pragma once

// Versioned binary checkpoint: JSON header (names, shapes, offsets, config
// hash, counters) followed by a little-endian float32 payload holding each
// parameter's value and Adam moment buffers.

#include <cstdint>
#include <string>

#include "mpnerf/network.hpp"

namespace mpnerf::train {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int version = kCheckpointVersion;
  uint64_t config_hash = 0;
  std::string config_text;  // canonical key=value config, for standalone reload
  long step = 0;
  int epoch = 0;
  long adam_t = 0;
};

void save_checkpoint(const std::string& path, const net::ParamStore& store,
                     const CheckpointMeta& meta);

// Replaces the store's parameters with the checkpoint contents.
CheckpointMeta load_checkpoint(const std::string& path, net::ParamStore& store);

}  // namespace mpnerf::train
