#pragma once

// End-to-end training: encode a clip into a multiplane field, render source
// and target views, assemble the total loss, and update all weights with
// Adam. Also hosts the shared "image -> field" forward used by rendering and
// evaluation.

#include <map>
#include <string>
#include <vector>

#include "mpnerf/checkpoint.hpp"
#include "mpnerf/config.hpp"
#include "mpnerf/losses.hpp"
#include "mpnerf/multiplane.hpp"
#include "mpnerf/network.hpp"
#include "mpnerf/synthdata.hpp"

namespace mpnerf::train {

template <class T>
struct ClipEncode {
  net::DepthOutput<T> depth;       // monocular disparity + features
  mpi::MultiplaneFieldT<T> field;  // density field over D planes
};

// Depth encoder once, then the shared plane decoder across all D planes.
template <class T>
ClipEncode<T> encode_field(net::Binder<T>& b, net::DepthEncoder<T>& depth_enc,
                           net::MpiDecoder<T>& plane_dec, const TrainConfig& cfg,
                           const ad::Tensor<T>& image) {
  ClipEncode<T> out{depth_enc.forward(b, image), {}};
  out.field.kind = mpi::OpacityKind::density;
  out.field.disparities =
      mpi::uniform_disparities(cfg.disparity_min(), cfg.disparity_max(), cfg.num_planes);
  for (double d : out.field.disparities) {
    auto p = plane_dec.forward(b, out.depth.features, d);
    out.field.planes.push_back({p.color, p.density});
  }
  return out;
}

// Standard Adam with bias correction over every entry of `grads`; moments are
// kept in the store. `t` is the shared step counter, incremented once.
// Parameters named "pose.head.*" use lr * pose_lr_mult: the pose head's output
// is scaled by 0.01 before the exponential map, so its weights need to travel
// much further than conv weights within a short run. The multiplier is limited
// to the head because the same boost on the conv trunk kills its ReLUs.
void adam_step(net::ParamStore& store, const std::map<std::string, std::vector<float>>& grads,
               double lr, long& t, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8, double pose_lr_mult = 1.0);

int resolve_threads(const TrainConfig& cfg);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  net::ParamStore& store() { return store_; }
  long step() const { return step_; }
  int epoch() const { return epoch_; }

  // Loads weights/moments/counters; rejects a mismatched config hash.
  void restore(const std::string& checkpoint_path);
  void save(const std::string& checkpoint_path) const;

  struct SampleGrads {
    loss::LossReport report;
    std::map<std::string, std::vector<float>> grads;
  };
  // Forward + backward for one clip (no weight update).
  SampleGrads compute_gradients(const synth::SceneSample& sample);

  // One optimizer step over a batch: gradients averaged across samples.
  loss::LossReport train_step(const std::vector<synth::SceneSample>& batch, double lr);

  double lr_for_epoch(int epoch) const;

  // Epoch loop with the halving schedule, CSV log and periodic checkpoints.
  // Writes <out_dir>/train_log.csv and <out_dir>/checkpoint.ckpt.
  void fit(const synth::Dataset& dataset, const std::string& out_dir);

 private:
  TrainConfig cfg_;
  net::ParamStore store_;
  long step_ = 0;
  int epoch_ = 0;
  long adam_t_ = 0;
};

}  // namespace mpnerf::train
