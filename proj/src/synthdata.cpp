#include "mpnerf/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mpnerf/errors.hpp"
#include "mpnerf/image_io.hpp"
#include "mpnerf/rng.hpp"

namespace mpnerf::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneConfig::validate() const {
  if (layers < 1 || layers > 4) throw ConfigError("scene: layers must be in [1,4]");
  if (width < 8 || height < 8) throw ConfigError("scene: image size too small");
  if (width % 4 != 0 || height % 4 != 0)
    throw ConfigError("scene: image size must be divisible by 4");
  if (!(depth_min > 0) || !(depth_max > depth_min))
    throw ConfigError("scene: need 0 < depth_min < depth_max");
  if (!(texture_scale > 0)) throw ConfigError("scene: texture_scale must be positive");
}

geo::Intrinsics SceneConfig::intrinsics() const {
  double f = focal > 0 ? focal : 0.9 * width;
  return geo::Intrinsics{f, f, width / 2.0 - 0.5, height / 2.0 - 0.5, width, height};
}

void TrajectoryConfig::validate() const {
  if (frames < 2) throw ConfigError("trajectory: need at least 2 frames");
  if (!(min_translation >= 0) || !(max_translation >= min_translation))
    throw ConfigError("trajectory: bad translation range");
  if (!(max_rotation_deg >= 0)) throw ConfigError("trajectory: bad rotation bound");
}

bool Layer::covers(double x, double y) const {
  if (background) return true;
  double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

namespace {

// Hash a lattice point to [0,1); stable across platforms.
double lattice_value(uint64_t seed, int64_t ix, int64_t iy, int channel) {
  uint64_t s = seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(ix)) ^
               (0xc2b2ae3d27d4eb4full * static_cast<uint64_t>(iy)) ^
               (0x165667b19e3779f9ull * static_cast<uint64_t>(channel + 1));
  return (splitmix64(s) >> 11) * 0x1.0p-53;
}

double smootherstep(double t) { return t * t * t * (t * (6 * t - 15) + 10); }

// Band-limited value noise: one octave, C2-smooth interpolation.
double value_noise(uint64_t seed, double x, double y, int channel) {
  double fx = std::floor(x), fy = std::floor(y);
  int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
  double tx = smootherstep(x - fx), ty = smootherstep(y - fy);
  double v00 = lattice_value(seed, ix, iy, channel);
  double v10 = lattice_value(seed, ix + 1, iy, channel);
  double v01 = lattice_value(seed, ix, iy + 1, channel);
  double v11 = lattice_value(seed, ix + 1, iy + 1, channel);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

}  // namespace

void SyntheticScene::color_at(int layer, double x, double y, float rgb[3]) const {
  const Layer& l = layers.at(layer);
  // Cell size ~8 pixels at this plane's depth as seen from the middle camera,
  // so bilinear resampling of rendered frames stays accurate.
  auto k = config.intrinsics();
  double cell = config.texture_scale * 8.0 * l.depth / k.fx;
  // Low-frequency stripes give each layer some oriented structure.
  Rng dir_rng(l.tex_seed ^ 0x5bf03635ull);
  double ang = dir_rng.uniform(0, 2 * M_PI), phase = dir_rng.uniform(0, 2 * M_PI);
  double stripe = std::sin((std::cos(ang) * x + std::sin(ang) * y) / (2.0 * cell) + phase);
  for (int c = 0; c < 3; ++c) {
    double n = value_noise(l.tex_seed, x / cell, y / cell, c);
    double v = 0.18 + 0.55 * n + 0.12 * (stripe + 1.0) / 2.0;
    rgb[c] = static_cast<float>(std::clamp(v, 0.02, 0.98));
  }
}

SyntheticScene generate_scene(uint64_t seed, const SceneConfig& config) {
  config.validate();
  Rng rng(seed);
  SyntheticScene scene;
  scene.config = config;
  auto k = config.intrinsics();

  // One depth per stratified disparity band: guaranteed inside the configured
  // range and naturally separated. Sorted nearest-first; background deepest.
  std::vector<double> depths(config.layers);
  double disp_min = 1.0 / config.depth_max, disp_max = 1.0 / config.depth_min;
  double band = (disp_max - disp_min) / config.layers;
  for (int i = 0; i < config.layers; ++i) {
    double lo = disp_max - band * (i + 0.8), hi = disp_max - band * (i + 0.2);
    depths[i] = 1.0 / rng.uniform(lo, hi);
  }

  for (int i = 0; i < config.layers; ++i) {
    Layer l;
    l.depth = depths[i];
    l.tex_seed = rng.next_u64();
    l.background = (i == config.layers - 1);
    if (!l.background) {
      // Visible half-extent of this plane from the middle camera.
      double hx = l.depth * config.width / (2.0 * k.fx);
      double hy = l.depth * config.height / (2.0 * k.fy);
      l.cx = rng.uniform(-0.45 * hx, 0.45 * hx);
      l.cy = rng.uniform(-0.45 * hy, 0.45 * hy);
      l.rx = rng.uniform(0.25 * hx, 0.5 * hx);
      l.ry = rng.uniform(0.25 * hy, 0.5 * hy);
    }
    scene.layers.push_back(l);
  }
  return scene;
}

std::vector<geo::RigidTransform> sample_trajectory(uint64_t seed,
                                                   const TrajectoryConfig& config) {
  config.validate();
  Rng rng(seed);
  const int n = config.frames;

  // Random walk of camera-to-previous-frame steps, then re-anchor so the
  // middle frame is the identity (the world frame).
  std::vector<geo::RigidTransform> absolute(n);
  for (int i = 1; i < n; ++i) {
    Eigen::Matrix<double, 6, 1> xi = Eigen::Matrix<double, 6, 1>::Zero();
    double angle = rng.uniform(0, config.max_rotation_deg * M_PI / 180.0);
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() > 1e-12) axis.normalize();
    xi.head<3>() = axis * angle;
    double norm = rng.uniform(config.min_translation, config.max_translation);
    Eigen::Vector3d tdir(rng.normal(), rng.normal(), rng.normal());
    if (tdir.norm() > 1e-12) tdir.normalize();
    xi.tail<3>() = tdir * norm;
    if (config.max_translation == 0 && config.max_rotation_deg == 0)
      xi.setZero();
    absolute[i] = absolute[i - 1].compose(geo::RigidTransform::exp(xi));
  }
  auto anchor = absolute[n / 2].inverse();
  for (auto& p : absolute) p = anchor.compose(p);
  return absolute;
}

SceneSample render_clip(const SyntheticScene& scene,
                        const std::vector<geo::RigidTransform>& trajectory,
                        const geo::Intrinsics& k) {
  const int n = static_cast<int>(trajectory.size());
  if (n < 2) throw InvariantError("render_clip: need at least 2 frames");
  const int h = k.height, w = k.width;
  Eigen::Matrix3d kinv = k.inverse();

  SceneSample out;
  out.intrinsics = k;
  for (int f = 0; f < n; ++f) {
    const auto& pose = trajectory[f];  // camera-to-world
    std::vector<float> img(static_cast<size_t>(3) * h * w);
    std::vector<float> depth(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        Eigen::Vector3d dir_cam = kinv * Eigen::Vector3d(j, i, 1.0);
        Eigen::Vector3d dir_w = pose.rotation * dir_cam;
        const Eigen::Vector3d& origin = pose.translation;
        bool hit = false;
        // Layers are sorted nearest-first: the first covering layer wins.
        for (size_t li = 0; li < scene.layers.size(); ++li) {
          const Layer& l = scene.layers[li];
          if (std::abs(dir_w.z()) < 1e-12) continue;
          double lambda = (l.depth - origin.z()) / dir_w.z();
          if (lambda <= 1e-9) continue;
          double x = origin.x() + lambda * dir_w.x();
          double y = origin.y() + lambda * dir_w.y();
          if (!l.covers(x, y)) continue;
          float rgb[3];
          scene.color_at(static_cast<int>(li), x, y, rgb);
          long p = static_cast<long>(i) * w + j;
          for (int c = 0; c < 3; ++c) img[static_cast<long>(c) * h * w + p] = rgb[c];
          // dir_cam.z = 1, so camera-space depth equals the ray parameter.
          depth[p] = static_cast<float>(lambda);
          hit = true;
          break;
        }
        if (!hit) throw NumericError("render_clip: ray hit no layer (hole)");
      }
    out.frames.push_back(std::move(img));
    out.depths.push_back(std::move(depth));
    out.gt_poses.push_back(pose);  // world = middle camera frame
    out.frame_ids.push_back(f);
  }
  return out;
}

SceneSample generate_clip(const SyntheticScene& scene, uint64_t trajectory_seed,
                          const TrajectoryConfig& config, const geo::Intrinsics& k) {
  TrajectoryConfig cfg = config;
  for (int attempt = 0; attempt < 5; ++attempt) {
    try {
      return render_clip(scene, sample_trajectory(trajectory_seed + attempt, cfg), k);
    } catch (const NumericError&) {
      cfg.min_translation *= 0.5;
      cfg.max_translation *= 0.5;
      cfg.max_rotation_deg *= 0.5;
    }
  }
  throw NumericError("generate_clip: holes persisted after 5 retries");
}

namespace {

std::string clip_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

json pose_to_json(const geo::RigidTransform& p) {
  json row = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) row.push_back(p.rotation(i, j));
    row.push_back(p.translation(i));
  }
  return row;
}

geo::RigidTransform pose_from_json(const json& row) {
  if (!row.is_array() || row.size() != 12) throw IoError("poses.json: bad 3x4 row");
  geo::RigidTransform p;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.rotation(i, j) = row[4 * i + j].get<double>();
    p.translation(i) = row[4 * i + 3].get<double>();
  }
  return p;
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void write_dataset(const std::string& dir, const DatasetConfig& config) {
  config.scene.validate();
  config.trajectory.validate();
  fs::create_directories(fs::path(dir) / "clips");
  auto k = config.scene.intrinsics();

  json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["width"] = config.scene.width;
  manifest["height"] = config.scene.height;
  manifest["frames_per_clip"] = config.trajectory.frames;
  manifest["clips"] = json::array();

  Rng master(config.seed);
  for (int c = 0; c < config.clips; ++c) {
    Rng clip_rng = master.fork(static_cast<uint64_t>(c));
    auto scene = generate_scene(clip_rng.next_u64(), config.scene);
    auto sample = generate_clip(scene, clip_rng.next_u64(), config.trajectory, k);
    sample.clip_id = clip_name(c);

    fs::path cdir = fs::path(dir) / "clips" / sample.clip_id;
    fs::create_directories(cdir);
    const int h = k.height, w = k.width;
    for (size_t f = 0; f < sample.frames.size(); ++f) {
      io::write_png((cdir / ("frame_" + std::to_string(f) + ".png")).string(),
                    io::to_image8(sample.frames[f], h, w));
      io::write_pfm((cdir / ("depth_" + std::to_string(f) + ".pfm")).string(),
                    io::FloatMap{w, h, sample.depths[f]});
    }
    json poses;
    poses["frames"] = json::array();
    for (const auto& p : sample.gt_poses) poses["frames"].push_back(pose_to_json(p));
    std::ofstream(cdir / "poses.json") << poses.dump(1) << "\n";
    json intr = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                 {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
    std::ofstream(cdir / "intrinsics.json") << intr.dump(1) << "\n";
    manifest["clips"].push_back({{"id", sample.clip_id}});
  }
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(1) << "\n";
}

Dataset Dataset::open(const std::string& dir) {
  json manifest = load_json(fs::path(dir) / "manifest.json");
  if (!manifest.contains("version") || manifest["version"].get<int>() != kDatasetVersion)
    throw ConfigError("dataset version mismatch in " + dir);
  Dataset d;
  d.root_ = dir;
  d.width_ = manifest["width"].get<int>();
  d.height_ = manifest["height"].get<int>();
  d.frames_per_clip_ = manifest["frames_per_clip"].get<int>();
  for (const auto& c : manifest["clips"]) d.clip_ids_.push_back(c["id"].get<std::string>());
  return d;
}

SceneSample Dataset::load_clip(int index) const {
  if (index < 0 || index >= size()) throw InvariantError("load_clip: index out of range");
  fs::path cdir = fs::path(root_) / "clips" / clip_ids_[index];
  SceneSample out;
  out.clip_id = clip_ids_[index];

  json intr = load_json(cdir / "intrinsics.json");
  out.intrinsics = geo::Intrinsics{intr["fx"].get<double>(), intr["fy"].get<double>(),
                                   intr["cx"].get<double>(), intr["cy"].get<double>(),
                                   intr["width"].get<int>(), intr["height"].get<int>()};
  json poses = load_json(cdir / "poses.json");
  for (const auto& row : poses["frames"]) out.gt_poses.push_back(pose_from_json(row));
  if (static_cast<int>(out.gt_poses.size()) != frames_per_clip_)
    throw InvariantError("clip " + out.clip_id + ": frame count does not match manifest");

  for (int f = 0; f < frames_per_clip_; ++f) {
    fs::path png = cdir / ("frame_" + std::to_string(f) + ".png");
    fs::path pfm = cdir / ("depth_" + std::to_string(f) + ".pfm");
    if (!fs::exists(png)) throw IoError("missing file: " + png.string());
    if (!fs::exists(pfm)) throw IoError("missing file: " + pfm.string());
    auto img = io::read_png(png.string());
    if (img.width != width_ || img.height != height_)
      throw InvariantError("clip " + out.clip_id + ": image size mismatch");
    out.frames.push_back(io::to_chw(img));
    auto depth = io::read_pfm(pfm.string());
    if (depth.width != width_ || depth.height != height_)
      throw InvariantError("clip " + out.clip_id + ": depth size mismatch");
    out.depths.push_back(std::move(depth.data));
    out.frame_ids.push_back(f);
  }
  return out;
}

}  // namespace mpnerf::synth
