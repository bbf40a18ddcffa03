#pragma once

// Offline metrics: monocular depth error suites, image fidelity (PSNR/SSIM),
// trajectory error after similarity alignment, and the per-task evaluation
// driver that reads a checkpoint and writes CSV/JSON reports.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpnerf/config.hpp"
#include "mpnerf/geometry.hpp"
#include "mpnerf/synthdata.hpp"

namespace mpnerf::eval {

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // % within 1.25 / 1.25^2 / 1.25^3
  double scale = 1;                           // applied median alignment factor
};

// Elementwise metrics after median scale alignment (pred *= med(gt)/med(pred));
// both inputs must be positive and the same length.
DepthMetrics depth_metrics(const std::vector<float>& pred, const std::vector<float>& gt,
                           bool median_align = true);

// Peak signal-to-noise ratio over [0,1] intensities; +infinity when identical.
double psnr(const std::vector<float>& pred, const std::vector<float>& gt);

// Mean SSIM index (3x3 uniform windows) over a [3,H,W] image pair.
double ssim(const std::vector<float>& pred, const std::vector<float>& gt, int height,
            int width);

// Similarity y = scale * R x + t.
struct Similarity {
  double scale = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

// Least-squares similarity mapping src onto dst (closed form via SVD).
// Needs >= 3 point pairs and nonzero spread in src.
Similarity umeyama_align(const std::vector<Eigen::Vector3d>& src,
                         const std::vector<Eigen::Vector3d>& dst);

struct AteStats {
  double mean = 0, rmse = 0, max = 0;
};

// Absolute trajectory error of pred against gt after Umeyama alignment.
AteStats ate(const std::vector<Eigen::Vector3d>& pred,
             const std::vector<Eigen::Vector3d>& gt);

// Integrates per-step transforms (frame k -> frame k+1 point transforms) into
// camera-to-world poses with frame 0 as the world origin.
std::vector<geo::RigidTransform> chain_relative_poses(
    const std::vector<geo::RigidTransform>& rel);

struct EvalSummary {
  std::string task;
  uint64_t config_hash = 0;
  int clips = 0;
  DepthMetrics depth;  // task "depth": averaged over clips
  double psnr = 0, ssim = 0;  // task "nvs": averaged over clips and targets
  AteStats ate;               // task "pose": averaged over clips
};

// Loads the checkpoint (hash-checked against cfg), evaluates every clip of the
// dataset on one task in {"depth", "pose", "nvs"} and writes
// <out_dir>/per_clip.csv plus <out_dir>/summary.json.
EvalSummary evaluate_run(const train::TrainConfig& cfg, const std::string& checkpoint_path,
                         const synth::Dataset& dataset, const std::string& task,
                         const std::string& out_dir);

// Same, with the config reconstructed from the checkpoint's embedded text.
EvalSummary evaluate_run(const std::string& checkpoint_path, const synth::Dataset& dataset,
                         const std::string& task, const std::string& out_dir);

}  // namespace mpnerf::eval
