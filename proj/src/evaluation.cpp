#include "mpnerf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Geometry>
#include <json.hpp>

#include "mpnerf/checkpoint.hpp"
#include "mpnerf/errors.hpp"
#include "mpnerf/losses.hpp"
#include "mpnerf/multiplane.hpp"
#include "mpnerf/training.hpp"

namespace mpnerf::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw InvariantError("median of an empty vector");
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

geo::RigidTransform to_rigid(const geo::PoseT<float>& p) {
  auto r = p.rotation.values();
  auto t = p.translation.values();
  geo::RigidTransform out;
  for (int i = 0; i < 3; ++i) {
    out.translation(i) = t[i];
    for (int j = 0; j < 3; ++j) out.rotation(i, j) = r[3 * i + j];
  }
  return out;
}

}  // namespace

DepthMetrics depth_metrics(const std::vector<float>& pred, const std::vector<float>& gt,
                           bool median_align) {
  if (pred.size() != gt.size() || pred.empty())
    throw InvariantError("depth_metrics: size mismatch or empty input");
  for (size_t i = 0; i < pred.size(); ++i)
    if (!(pred[i] > 0) || !(gt[i] > 0))
      throw InvariantError("depth_metrics: depths must be positive");

  DepthMetrics m;
  if (median_align) {
    std::vector<double> p(pred.begin(), pred.end()), g(gt.begin(), gt.end());
    m.scale = median(g) / median(p);
  }
  const double n = static_cast<double>(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    double p = m.scale * pred[i], g = gt[i];
    double diff = p - g;
    m.abs_rel += std::abs(diff) / g;
    m.sq_rel += diff * diff / g;
    m.rmse += diff * diff;
    double ld = std::log(p) - std::log(g);
    m.rmse_log += ld * ld;
    double ratio = std::max(p / g, g / p);
    m.delta1 += ratio < 1.25;
    m.delta2 += ratio < 1.25 * 1.25;
    m.delta3 += ratio < 1.25 * 1.25 * 1.25;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(m.rmse / n);
  m.rmse_log = std::sqrt(m.rmse_log / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

double psnr(const std::vector<float>& pred, const std::vector<float>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw InvariantError("psnr: size mismatch or empty input");
  double mse = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred[i]) - gt[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const std::vector<float>& pred, const std::vector<float>& gt, int height,
            int width) {
  if (static_cast<long>(pred.size()) != 3L * height * width || pred.size() != gt.size())
    throw InvariantError("ssim: inputs must both be [3,H,W]");
  ad::Graph<double> g;
  auto a = g.leaf({1, 3, height, width}, std::vector<double>(pred.begin(), pred.end()));
  auto b = g.leaf({1, 3, height, width}, std::vector<double>(gt.begin(), gt.end()));
  return 1.0 - loss::ssim_loss(a, b).item();
}

Similarity umeyama_align(const std::vector<Eigen::Vector3d>& src,
                         const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size()) throw InvariantError("umeyama: size mismatch");
  if (src.size() < 3) throw InvariantError("umeyama: needs at least 3 point pairs");
  const long n = static_cast<long>(src.size());
  Eigen::Matrix3Xd s(3, n), d(3, n);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (long i = 0; i < n; ++i) {
    s.col(i) = src[i];
    d.col(i) = dst[i];
    mean += src[i];
  }
  mean /= static_cast<double>(n);
  double spread = (s.colwise() - mean).squaredNorm();
  if (!(spread > 1e-18)) throw InvariantError("umeyama: degenerate source points");

  Eigen::Matrix4d t = Eigen::umeyama(s, d, true);
  Similarity out;
  Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  out.scale = std::cbrt(sr.determinant());
  out.rotation = sr / out.scale;
  out.translation = t.topRightCorner<3, 1>();
  return out;
}

AteStats ate(const std::vector<Eigen::Vector3d>& pred,
             const std::vector<Eigen::Vector3d>& gt) {
  if (pred.size() != gt.size() || pred.size() < 3)
    throw InvariantError("ate: needs >= 3 matched positions");
  // A collapsed prediction (e.g. an identity trajectory) admits no similarity
  // fit; the best alignment is then translation only, and the error is the
  // ground truth's spread around its mean.
  Eigen::Vector3d pm = Eigen::Vector3d::Zero(), gm = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < pred.size(); ++i) {
    pm += pred[i];
    gm += gt[i];
  }
  pm /= static_cast<double>(pred.size());
  gm /= static_cast<double>(pred.size());
  double spread = 0;
  for (const auto& p : pred) spread += (p - pm).squaredNorm();
  Similarity sim;
  if (spread > 1e-18)
    sim = umeyama_align(pred, gt);
  else
    sim.translation = gm - pm;
  AteStats out;
  double sq = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double e = (sim.apply(pred[i]) - gt[i]).norm();
    out.mean += e;
    sq += e * e;
    out.max = std::max(out.max, e);
  }
  out.mean /= static_cast<double>(pred.size());
  out.rmse = std::sqrt(sq / static_cast<double>(pred.size()));
  return out;
}

std::vector<geo::RigidTransform> chain_relative_poses(
    const std::vector<geo::RigidTransform>& rel) {
  std::vector<geo::RigidTransform> abs(rel.size() + 1);
  for (size_t k = 0; k < rel.size(); ++k)
    abs[k + 1] = abs[k].compose(rel[k].inverse());
  return abs;
}

namespace {

struct Accumulator {
  DepthMetrics depth;
  Accumulator() { depth.scale = 0; }  // accumulates; default is the no-op scale
  double psnr = 0, ssim = 0;
  AteStats ate;
  int count = 0;

  void add_depth(const DepthMetrics& m) {
    depth.abs_rel += m.abs_rel;
    depth.sq_rel += m.sq_rel;
    depth.rmse += m.rmse;
    depth.rmse_log += m.rmse_log;
    depth.delta1 += m.delta1;
    depth.delta2 += m.delta2;
    depth.delta3 += m.delta3;
    depth.scale += m.scale;
  }
  void finish() {
    if (count == 0) return;
    double n = count;
    depth.abs_rel /= n;
    depth.sq_rel /= n;
    depth.rmse /= n;
    depth.rmse_log /= n;
    depth.delta1 /= n;
    depth.delta2 /= n;
    depth.delta3 /= n;
    depth.scale /= n;
    psnr /= n;
    ssim /= n;
    ate.mean /= n;
    ate.rmse /= n;
    ate.max /= n;
  }
};

}  // namespace

EvalSummary evaluate_run(const train::TrainConfig& cfg, const std::string& checkpoint_path,
                         const synth::Dataset& dataset, const std::string& task,
                         const std::string& out_dir) {
  if (task != "depth" && task != "pose" && task != "nvs")
    throw ConfigError("evaluate: task must be depth, pose or nvs");
  if (dataset.size() == 0) throw InvariantError("evaluate: empty dataset");
  cfg.validate();

  net::ParamStore store(cfg.seed);
  auto meta = train::load_checkpoint(checkpoint_path, store);
  if (meta.config_hash != cfg.hash())
    throw ConfigError("evaluate: checkpoint config hash does not match the active config");

  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "per_clip.csv");
  if (!csv) throw IoError("evaluate: cannot write per_clip.csv in " + out_dir);
  if (task == "depth")
    csv << "clip_id,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,scale\n";
  else if (task == "nvs")
    csv << "clip_id,psnr,ssim\n";
  else
    csv << "clip_id,ate_mean,ate_rmse,ate_max\n";

  auto spec = cfg.network_spec();
  Accumulator acc;
  char row[512];

  for (int ci = 0; ci < dataset.size(); ++ci) {
    auto sample = dataset.load_clip(ci);
    const int src = sample.source_index();
    const auto& k = sample.intrinsics;
    const int h = k.height, w = k.width;

    ad::Graph<float> g;
    net::Binder<float> b(g, store);
    auto frame = [&](int f) { return g.leaf({1, 3, h, w}, sample.frames[f]); };

    if (task == "depth") {
      // Depth comes from the rendered disparity of the composited field, not
      // the monocular head.
      net::DepthEncoder<float> de(spec);
      net::MpiDecoder<float> dec(spec);
      auto enc = train::encode_field(b, de, dec, cfg, frame(src));
      auto render =
          mpi::render_nerf(enc.field, std::optional<geo::PoseT<float>>{}, k, k, cfg.delta());
      auto disp = render.disparity.values();
      // Low-accumulation pixels can composite to near-zero disparity; floor at
      // the far plane so depths stay finite.
      const float floor = static_cast<float>(cfg.disparity_min());
      std::vector<float> depth(disp.size());
      for (size_t i = 0; i < disp.size(); ++i) depth[i] = 1.0f / std::max(disp[i], floor);
      auto m = depth_metrics(depth, sample.depths[src]);
      acc.add_depth(m);
      std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    sample.clip_id.c_str(), m.abs_rel, m.sq_rel, m.rmse, m.rmse_log,
                    m.delta1, m.delta2, m.delta3, m.scale);
      csv << row;
    } else if (task == "nvs") {
      net::DepthEncoder<float> de(spec);
      net::MpiDecoder<float> dec(spec);
      auto enc = train::encode_field(b, de, dec, cfg, frame(src));
      // The field lives at the network's depth scale; bring the ground-truth
      // camera motion into that scale before rendering.
      auto disp = enc.depth.disparity.values();
      std::vector<double> pd(disp.size()), gd(sample.depths[src].begin(),
                                              sample.depths[src].end());
      for (size_t i = 0; i < disp.size(); ++i) pd[i] = 1.0 / disp[i];
      double scale = median(pd) / median(gd);

      double clip_psnr = 0, clip_ssim = 0;
      int targets = 0;
      for (int f = 0; f < static_cast<int>(sample.frames.size()); ++f) {
        if (f == src) continue;
        geo::RigidTransform tgt_to_src = sample.gt_poses[f];
        tgt_to_src.translation *= scale;
        auto pose = geo::pose_constant<float>(g, tgt_to_src);
        auto render = mpi::render_nerf(enc.field, std::optional{pose}, k, k, cfg.delta());
        auto img = render.image.values();
        clip_psnr += std::min(psnr(img, sample.frames[f]), 99.0);
        clip_ssim += ssim(img, sample.frames[f], h, w);
        ++targets;
      }
      clip_psnr /= targets;
      clip_ssim /= targets;
      acc.psnr += clip_psnr;
      acc.ssim += clip_ssim;
      std::snprintf(row, sizeof(row), "%s,%.6f,%.6f\n", sample.clip_id.c_str(), clip_psnr,
                    clip_ssim);
      csv << row;
    } else {
      net::PoseEncoder<float> pe(spec);
      std::vector<geo::RigidTransform> rel;
      for (int f = 0; f + 1 < static_cast<int>(sample.frames.size()); ++f)
        rel.push_back(to_rigid(pe.forward(b, frame(f), frame(f + 1))));
      auto abs = chain_relative_poses(rel);
      std::vector<Eigen::Vector3d> pred, gt;
      for (size_t i = 0; i < abs.size(); ++i) {
        pred.push_back(abs[i].translation);
        gt.push_back(sample.gt_poses[i].translation);
      }
      auto a = ate(pred, gt);
      acc.ate.mean += a.mean;
      acc.ate.rmse += a.rmse;
      acc.ate.max += a.max;
      std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f\n", sample.clip_id.c_str(), a.mean,
                    a.rmse, a.max);
      csv << row;
    }
    ++acc.count;
  }
  acc.finish();

  EvalSummary summary;
  summary.task = task;
  summary.config_hash = cfg.hash();
  summary.clips = acc.count;
  summary.depth = acc.depth;
  summary.psnr = acc.psnr;
  summary.ssim = acc.ssim;
  summary.ate = acc.ate;

  if (task == "depth")
    csv << "mean," << summary.depth.abs_rel << "," << summary.depth.sq_rel << ","
        << summary.depth.rmse << "," << summary.depth.rmse_log << "," << summary.depth.delta1
        << "," << summary.depth.delta2 << "," << summary.depth.delta3 << ","
        << summary.depth.scale << "\n";
  else if (task == "nvs")
    csv << "mean," << summary.psnr << "," << summary.ssim << "\n";
  else
    csv << "mean," << summary.ate.mean << "," << summary.ate.rmse << "," << summary.ate.max
        << "\n";
  if (!csv) throw IoError("evaluate: short write to per_clip.csv in " + out_dir);

  json j;
  j["task"] = task;
  j["config_hash"] = summary.config_hash;
  j["clips"] = summary.clips;
  if (task == "depth")
    j["metrics"] = {{"abs_rel", summary.depth.abs_rel},  {"sq_rel", summary.depth.sq_rel},
                    {"rmse", summary.depth.rmse},        {"rmse_log", summary.depth.rmse_log},
                    {"delta1", summary.depth.delta1},    {"delta2", summary.depth.delta2},
                    {"delta3", summary.depth.delta3},    {"scale", summary.depth.scale}};
  else if (task == "nvs")
    j["metrics"] = {{"psnr", summary.psnr}, {"ssim", summary.ssim}};
  else
    j["metrics"] = {{"ate_mean", summary.ate.mean},
                    {"ate_rmse", summary.ate.rmse},
                    {"ate_max", summary.ate.max}};
  std::ofstream js(fs::path(out_dir) / "summary.json");
  if (!js) throw IoError("evaluate: cannot write summary.json in " + out_dir);
  js << j.dump(2) << "\n";

  return summary;
}

EvalSummary evaluate_run(const std::string& checkpoint_path, const synth::Dataset& dataset,
                         const std::string& task, const std::string& out_dir) {
  net::ParamStore probe(0);
  auto meta = train::load_checkpoint(checkpoint_path, probe);
  if (meta.config_text.empty())
    throw ConfigError("evaluate: checkpoint carries no config text; pass a config");
  auto cfg = train::TrainConfig::from_canonical(meta.config_text);
  return evaluate_run(cfg, checkpoint_path, dataset, task, out_dir);
}

}  // namespace mpnerf::eval
