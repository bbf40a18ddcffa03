#include "mpnerf/training.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "mpnerf/errors.hpp"
#include "mpnerf/rng.hpp"

namespace mpnerf::train {

namespace fs = std::filesystem;

void adam_step(net::ParamStore& store, const std::map<std::string, std::vector<float>>& grads,
               double lr, long& t, double beta1, double beta2, double eps,
               double pose_lr_mult) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& [name, g] : grads) {
    const double plr = name.rfind("pose.head.", 0) == 0 ? lr * pose_lr_mult : lr;
    auto it = store.params().find(name);
    if (it == store.params().end())
      throw InvariantError("adam_step: gradient for unknown parameter '" + name + "'");
    auto& p = it->second;
    if (g.size() != p.value.size())
      throw InvariantError("adam_step: gradient size mismatch for '" + name + "'");
    if (p.m.empty()) p.m.assign(p.value.size(), 0.f);
    if (p.v.empty()) p.v.assign(p.value.size(), 0.f);
    for (size_t i = 0; i < p.value.size(); ++i) {
      double gi = g[i];
      double m = beta1 * p.m[i] + (1.0 - beta1) * gi;
      double v = beta2 * p.v[i] + (1.0 - beta2) * gi * gi;
      p.m[i] = static_cast<float>(m);
      p.v[i] = static_cast<float>(v);
      p.value[i] -= static_cast<float>(plr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

int resolve_threads(const TrainConfig& cfg) {
  if (cfg.deterministic) return 1;
  if (cfg.threads > 0) return cfg.threads;
  if (const char* env = std::getenv("MPNERF_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), store_(cfg.seed) { cfg_.validate(); }

void Trainer::restore(const std::string& checkpoint_path) {
  auto meta = load_checkpoint(checkpoint_path, store_);
  if (meta.config_hash != cfg_.hash())
    throw ConfigError("checkpoint config hash does not match the active config");
  step_ = meta.step;
  epoch_ = meta.epoch;
  adam_t_ = meta.adam_t;
}

void Trainer::save(const std::string& checkpoint_path) const {
  CheckpointMeta meta;
  meta.config_hash = cfg_.hash();
  meta.config_text = cfg_.canonical();
  meta.step = step_;
  meta.epoch = epoch_;
  meta.adam_t = adam_t_;
  save_checkpoint(checkpoint_path, store_, meta);
}

Trainer::SampleGrads Trainer::compute_gradients(const synth::SceneSample& sample) {
  const int n = static_cast<int>(sample.frames.size());
  if (n < 2) throw InvariantError("train_step: clip needs at least 2 frames");
  const int src = sample.source_index();
  const auto& k = sample.intrinsics;
  const int h = k.height, w = k.width;

  ad::Graph<float> g;
  net::Binder<float> b(g, store_);
  auto spec = cfg_.network_spec();
  net::DepthEncoder<float> depth_enc(spec);
  net::PoseEncoder<float> pose_enc(spec);
  net::MpiDecoder<float> plane_dec(spec);

  auto leaf_image = [&](int f) {
    return g.leaf({1, 3, h, w}, sample.frames[f]);
  };
  auto frame_s = leaf_image(src);
  auto enc = encode_field(b, depth_enc, plane_dec, cfg_, frame_s);
  auto source_render =
      mpi::render_nerf(enc.field, std::optional<geo::PoseT<float>>{}, k, k, cfg_.delta());

  std::vector<loss::TargetTerms<float>> targets;
  for (int f = 0; f < n; ++f) {
    if (f == src) continue;
    auto frame_t = leaf_image(f);
    auto pose_st = pose_enc.forward(b, frame_s, frame_t);  // source -> target
    // Target rendering warps planes from the source field, which takes the
    // target -> source transform; invert the predicted pose analytically.
    auto render =
        mpi::render_nerf(enc.field, std::optional{pose_st.inverse()}, k, k, cfg_.delta());
    targets.push_back({loss::l1_rgb(render.image, frame_t),
                       loss::ssim_loss(render.image, frame_t),
                       loss::reprojection(frame_s, frame_t, enc.depth.disparity, pose_st, k)});
  }

  auto smooth = loss::smoothness(source_render.disparity, frame_s);
  auto consist = loss::depth_consistency(enc.depth.disparity, source_render.disparity);

  SampleGrads out;
  auto total = loss::total(targets, smooth, consist, cfg_.weights(), &out.report);
  if (!std::isfinite(out.report.total)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "train_step: non-finite loss (l1=%g ssim=%g smooth=%g consist=%g reproj=%g)",
                  out.report.l1, out.report.ssim, out.report.smooth, out.report.consist,
                  out.report.reproj);
    throw NumericError(buf);
  }
  g.backward(total);
  for (const auto& [name, t] : b.bound()) {
    const auto& grad = g.grad(t);
    if (grad.empty())
      out.grads[name].assign(t.numel(), 0.f);
    else
      out.grads[name] = grad;
  }
  return out;
}

loss::LossReport Trainer::train_step(const std::vector<synth::SceneSample>& batch, double lr) {
  if (batch.empty()) throw InvariantError("train_step: empty batch");
  const int threads = std::min<int>(resolve_threads(cfg_), static_cast<int>(batch.size()));

  std::vector<SampleGrads> results(batch.size());
  if (threads <= 1) {
    for (size_t i = 0; i < batch.size(); ++i) results[i] = compute_gradients(batch[i]);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex mu;
    std::atomic<size_t> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < batch.size(); i = next.fetch_add(1)) {
          try {
            results[i] = compute_gradients(batch[i]);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  // Average gradients and reports in batch order (deterministic summation).
  std::map<std::string, std::vector<float>> grads = std::move(results[0].grads);
  loss::LossReport report = results[0].report;
  for (size_t i = 1; i < results.size(); ++i) {
    for (auto& [name, g] : grads) {
      const auto& other = results[i].grads.at(name);
      for (size_t j = 0; j < g.size(); ++j) g[j] += other[j];
    }
    report.l1 += results[i].report.l1;
    report.ssim += results[i].report.ssim;
    report.smooth += results[i].report.smooth;
    report.consist += results[i].report.consist;
    report.reproj += results[i].report.reproj;
    report.total += results[i].report.total;
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (auto& [name, g] : grads)
    for (auto& v : g) v *= inv;
  report.l1 *= inv;
  report.ssim *= inv;
  report.smooth *= inv;
  report.consist *= inv;
  report.reproj *= inv;
  report.total *= inv;

  adam_step(store_, grads, lr, adam_t_, 0.9, 0.999, 1e-8, cfg_.lr_pose_mult);
  ++step_;
  return report;
}

double Trainer::lr_for_epoch(int epoch) const {
  double lr = cfg_.lr;
  for (int h : cfg_.lr_halve_epochs)
    if (epoch >= h) lr *= 0.5;
  return lr;
}

void Trainer::fit(const synth::Dataset& dataset, const std::string& out_dir) {
  if (dataset.size() == 0) throw InvariantError("fit: empty dataset");
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.ckpt").string();

  const long steps_per_epoch =
      (dataset.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  const bool resuming = step_ > 0;
  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("fit: cannot write " + log_path);
  if (!resuming) log << "step,epoch,lr,l1,ssim,smooth,consist,reproj,total\n";

  for (int epoch = epoch_; epoch < cfg_.epochs; ++epoch) {
    epoch_ = epoch;
    const double lr = lr_for_epoch(epoch);

    // Deterministic per-epoch shuffle, independent of the resume point.
    std::vector<int> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg_.seed ^ net::name_hash("epoch" + std::to_string(epoch)));
    for (int i = dataset.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    for (long bstart = 0, bidx = 0; bstart < dataset.size();
         bstart += cfg_.batch_size, ++bidx) {
      long global = static_cast<long>(epoch) * steps_per_epoch + bidx;
      if (global < step_) continue;  // already done before a resume

      std::vector<synth::SceneSample> batch;
      for (long i = bstart; i < std::min<long>(bstart + cfg_.batch_size, dataset.size()); ++i)
        batch.push_back(dataset.load_clip(order[i]));
      auto report = train_step(batch, lr);

      char row[320];
      std::snprintf(row, sizeof(row), "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    step_, epoch, lr, report.l1, report.ssim, report.smooth, report.consist,
                    report.reproj, report.total);
      log << row;
      log.flush();
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) save(ckpt_path);
    }
    epoch_ = epoch + 1;
    save(ckpt_path);
  }
}

}  // namespace mpnerf::train
