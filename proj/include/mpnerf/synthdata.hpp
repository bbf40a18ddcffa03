#pragma once

// Synthetic layered-scene video generator with analytic ground truth, plus
// the on-disk dataset format. Scenes are textured fronto-parallel planes with
// elliptic cutouts over an opaque background, rendered exactly per ray, so
// every rendered pixel has a closed-form color and depth.

#include <cstdint>
#include <string>
#include <vector>

#include "mpnerf/geometry.hpp"

namespace mpnerf::synth {

inline constexpr int kDatasetVersion = 1;

struct SceneConfig {
  int layers = 3;  // 1..4; layer 1 is the opaque background
  int width = 64, height = 64;
  double focal = 0;  // <= 0 derives 0.9 * width
  double depth_min = 0.5, depth_max = 15.0;
  double texture_scale = 1.0;  // multiplies the noise cell size

  void validate() const;
  geo::Intrinsics intrinsics() const;
};

struct Layer {
  double depth = 0;
  uint64_t tex_seed = 0;
  bool background = false;
  // Elliptic cutout on the plane, world units (unused for the background).
  double cx = 0, cy = 0, rx = 0, ry = 0;

  bool covers(double x, double y) const;
};

struct SyntheticScene {
  SceneConfig config;
  std::vector<Layer> layers;  // ascending depth: nearest first, background last

  // Analytic texture color of one layer at a world point on its plane.
  void color_at(int layer, double x, double y, float rgb[3]) const;
};

struct TrajectoryConfig {
  int frames = 3;
  double min_translation = 0.01, max_translation = 0.1;
  double max_rotation_deg = 3.0;

  void validate() const;
};

struct SceneSample {
  std::string clip_id;
  std::vector<int> frame_ids;
  geo::Intrinsics intrinsics;
  std::vector<std::vector<float>> frames;  // per frame, planar [3,H,W] in [0,1]
  std::vector<std::vector<float>> depths;  // per frame, [H,W] camera-space depth
  // Point transform from frame k's camera into the source (middle) camera.
  std::vector<geo::RigidTransform> gt_poses;

  int source_index() const { return static_cast<int>(frames.size()) / 2; }
};

SyntheticScene generate_scene(uint64_t seed, const SceneConfig& config);

// Camera-to-world poses (world = middle camera frame; middle pose identity).
std::vector<geo::RigidTransform> sample_trajectory(uint64_t seed,
                                                   const TrajectoryConfig& config);

// Exact per-ray rendering. Throws NumericError if any ray hits no layer.
SceneSample render_clip(const SyntheticScene& scene,
                        const std::vector<geo::RigidTransform>& trajectory,
                        const geo::Intrinsics& k);

// render_clip with hole-retry: shrinks the motion and resamples up to 5 times.
SceneSample generate_clip(const SyntheticScene& scene, uint64_t trajectory_seed,
                          const TrajectoryConfig& config, const geo::Intrinsics& k);

struct DatasetConfig {
  uint64_t seed = 0;
  int clips = 8;
  SceneConfig scene;
  TrajectoryConfig trajectory;
};

void write_dataset(const std::string& dir, const DatasetConfig& config);

class Dataset {
 public:
  static Dataset open(const std::string& dir);

  int size() const { return static_cast<int>(clip_ids_.size()); }
  int width() const { return width_; }
  int height() const { return height_; }
  int frames_per_clip() const { return frames_per_clip_; }
  const std::vector<std::string>& clip_ids() const { return clip_ids_; }

  SceneSample load_clip(int index) const;

 private:
  std::string root_;
  int width_ = 0, height_ = 0, frames_per_clip_ = 0;
  std::vector<std::string> clip_ids_;
};

}  // namespace mpnerf::synth
