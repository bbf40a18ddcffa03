#pragma once

// Run configuration: UTF-8 key=value files plus CLI overrides, with a stable
// content hash stamped into checkpoints and reports.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpnerf/losses.hpp"
#include "mpnerf/multiplane.hpp"
#include "mpnerf/network.hpp"

namespace mpnerf::train {

struct TrainConfig {
  uint64_t seed = 0;
  int num_planes = 64;
  double depth_near = 0.2, depth_far = 20.0;
  int batch_size = 2;
  int epochs = 10;
  double lr = 1e-4;
  double lr_pose_mult = 1.0;  // lr multiplier for "pose.*" parameters
  std::vector<int> lr_halve_epochs{4, 6, 8};
  double w_l1 = 1.0, w_ssim = 1.0, w_smooth = 1.0, w_consist = 0.01, w_reproj = 1.0;
  int pe_bands = 8;
  int depth_c1 = 8, depth_c2 = 12, depth_c3 = 16, feature_channels = 16;
  int pose_channels = 12, decoder_channels = 16;
  double depth_head_bias = 0.0;    // initial disparity prior, see NetworkSpec
  double density_head_bias = 0.0;  // initial field transparency, see NetworkSpec
  std::string delta_mode = "ray";
  bool deterministic = true;
  int threads = 0;           // 0: MPNERF_THREADS or hardware count
  int checkpoint_every = 0;  // steps; 0 = once per epoch

  void validate() const;
  double disparity_min() const { return 1.0 / depth_far; }
  double disparity_max() const { return 1.0 / depth_near; }
  loss::LossWeights weights() const;
  net::NetworkSpec network_spec() const;
  mpi::DeltaMode delta() const;

  // Sorted key=value serialization; hash is FNV-1a over it.
  std::string canonical() const;
  uint64_t hash() const;

  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  // Inverse of canonical(): parses its key=value lines.
  static TrainConfig from_canonical(const std::string& text);
};

// key=value per line; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Each override is "key=value"; malformed entries throw ConfigError.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides);

}  // namespace mpnerf::train
