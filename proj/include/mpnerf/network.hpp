#pragma once

// Learnable networks: monocular depth encoder, camera pose encoder, and the
// shared per-plane decoder. Weights live in a ParamStore (float32, named);
// each forward pass binds them once into the active graph so the trainer can
// read one gradient buffer per parameter afterwards.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpnerf/geometry.hpp"
#include "mpnerf/linops.hpp"
#include "mpnerf/rng.hpp"
#include "mpnerf/tensor.hpp"

namespace mpnerf::net {

// FNV-1a; std::hash is not stable across platforms and parameter
// initialization must be.
inline uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct NetworkSpec {
  uint64_t seed = 0;
  double d_min = 1.0 / 20.0;
  double d_max = 1.0 / 0.2;
  int pe_bands = 8;  // L
  // Depth encoder stage widths (full res, /2, /4) and feature channels.
  int depth_c1 = 8, depth_c2 = 12, depth_c3 = 16, feature_channels = 16;
  int pose_channels = 12;
  int decoder_channels = 16;
  // Added to the depth head's raw output before the sigmoid; sets the initial
  // disparity prior (zero-init head => sigmoid(bias)) to the expected scene
  // median instead of the frustum midpoint.
  double depth_head_bias = 0.0;
  // Added to the decoder's raw density channel before the softplus; negative
  // values start the field nearly transparent so plane placement is learned
  // after the pose leaves identity (and can match the monocular depth scale).
  double density_head_bias = 0.0;

  void validate() const {
    if (!(d_min > 0) || !(d_max > d_min)) throw InvariantError("spec: bad frustum");
    if (pe_bands < 1) throw InvariantError("spec: pe_bands must be >= 1");
    for (int c : {depth_c1, depth_c2, depth_c3, feature_channels, pose_channels,
                  decoder_channels})
      if (c < 1) throw InvariantError("spec: channel widths must be >= 1");
  }
};

// Named float32 parameters plus the trainer's Adam moment buffers.
class ParamStore {
 public:
  struct Param {
    ad::Shape shape;
    std::vector<float> value;
    std::vector<float> m, v;  // Adam first/second moments, lazily sized
  };

  explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

  // Fetch a parameter, creating it with uniform fan-in initialization the
  // first time. fan_in <= 0 means zero initialization.
  Param& get_or_create(const std::string& name, const ad::Shape& shape, long fan_in) {
    auto it = params_.find(name);
    if (it != params_.end()) {
      if (it->second.shape != shape)
        throw InvariantError("param '" + name + "': shape changed between uses");
      return it->second;
    }
    Param p;
    p.shape = shape;
    p.value.resize(ad::numel(shape));
    if (fan_in > 0) {
      Rng rng(seed_ ^ name_hash(name));
      float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
      for (auto& v : p.value) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return params_.emplace(name, std::move(p)).first->second;
  }

  std::map<std::string, Param>& params() { return params_; }
  const std::map<std::string, Param>& params() const { return params_; }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::map<std::string, Param> params_;
};

// Per-graph view of a ParamStore: every parameter becomes exactly one
// requires-grad leaf, reused across repeated layer invocations (this is what
// makes the plane decoder weight-shared across D plane evaluations).
template <class T>
class Binder {
 public:
  Binder(ad::Graph<T>& g, ParamStore& store) : g_(&g), store_(&store) {}

  ad::Tensor<T> param(const std::string& name, const ad::Shape& shape, long fan_in) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto& p = store_->get_or_create(name, shape, fan_in);
    std::vector<T> vals(p.value.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(p.value[i]);
    auto t = g_->leaf(shape, std::move(vals), /*requires_grad=*/true);
    bound_.emplace(name, t);
    return t;
  }

  const std::map<std::string, ad::Tensor<T>>& bound() const { return bound_; }

 private:
  ad::Graph<T>* g_;
  ParamStore* store_;
  std::map<std::string, ad::Tensor<T>> bound_;
};

namespace detail {

template <class T>
ad::Tensor<T> conv_layer(Binder<T>& b, const std::string& name, const ad::Tensor<T>& x,
                         int in_ch, int out_ch, int k, int stride, int pad) {
  auto w = b.param(name + ".w", {out_ch, in_ch, k, k}, static_cast<long>(in_ch) * k * k);
  auto bias = b.param(name + ".b", {1, out_ch, 1, 1}, 0);
  return ad::add(ad::conv2d(x, w, stride, pad), bias);
}

template <class T>
ad::Tensor<T> conv_relu(Binder<T>& b, const std::string& name, const ad::Tensor<T>& x,
                        int in_ch, int out_ch, int stride = 1) {
  return ad::relu(conv_layer(b, name, x, in_ch, out_ch, 3, stride, 1));
}

}  // namespace detail

// PE(d) = [sin(2^k pi d~), cos(2^k pi d~)]_{k<L} with d~ = (d-dmin)/(dmax-dmin).
inline std::vector<double> positional_encode(double d, int bands, double d_min, double d_max) {
  if (!(d >= d_min && d <= d_max))
    throw InvariantError("positional_encode: disparity outside frustum");
  double dn = (d - d_min) / (d_max - d_min);
  std::vector<double> out(2 * bands);
  for (int k = 0; k < bands; ++k) {
    double phase = std::ldexp(M_PI * dn, k);  // 2^k * pi * d~
    out[2 * k] = std::sin(phase);
    out[2 * k + 1] = std::cos(phase);
  }
  return out;
}

template <class T>
struct DepthOutput {
  ad::Tensor<T> disparity;  // [1,1,H,W] in (d_min, d_max)
  ad::Tensor<T> features;   // [1,Cf,H/4,W/4]
};

// 4-stage CNN with skip upsampling; sigmoid head maps into the frustum.
template <class T>
class DepthEncoder {
 public:
  explicit DepthEncoder(const NetworkSpec& spec) : spec_(spec) {}

  DepthOutput<T> forward(Binder<T>& b, const ad::Tensor<T>& image) {
    ++forward_calls;
    const NetworkSpec& s = spec_;
    if (image.shape.size() != 4 || image.shape[1] != 3)
      throw InvariantError("depth encoder: image must be [B,3,H,W]");
    if (image.shape[2] % 4 != 0 || image.shape[3] % 4 != 0)
      throw InvariantError("depth encoder: spatial dims must be divisible by 4");
    auto e1 = detail::conv_relu(b, "depth.enc1", image, 3, s.depth_c1);            // H
    auto e2 = detail::conv_relu(b, "depth.enc2", e1, s.depth_c1, s.depth_c2, 2);   // H/2
    auto e3 = detail::conv_relu(b, "depth.enc3", e2, s.depth_c2, s.depth_c3, 2);   // H/4
    auto features = detail::conv_relu(b, "depth.feat", e3, s.depth_c3, s.feature_channels);
    auto u2 = ad::concat<T>({ad::upsample_nearest2(features), e2}, 1);             // H/2
    auto d2 = detail::conv_relu(b, "depth.dec2", u2, s.feature_channels + s.depth_c2,
                                s.depth_c2);
    auto u1 = ad::concat<T>({ad::upsample_nearest2(d2), e1}, 1);                   // H
    auto d1 = detail::conv_relu(b, "depth.dec1", u1, s.depth_c2 + s.depth_c1, s.depth_c1);
    auto raw = detail::conv_layer(b, "depth.head", d1, s.depth_c1, 1, 3, 1, 1);
    auto& g = *image.g;
    if (s.depth_head_bias != 0.0)
      raw = ad::add(raw, g.scalar(static_cast<T>(s.depth_head_bias)));
    auto disparity = ad::add(
        g.scalar(static_cast<T>(s.d_min)),
        ad::mul(ad::sigmoid(raw), g.scalar(static_cast<T>(s.d_max - s.d_min))));
    return {disparity, features};
  }

  int forward_calls = 0;

 private:
  NetworkSpec spec_;
};

// 5-conv strided trunk over the 6-channel frame stack, pooled to a 6-vector
// scaled by 0.01 before the exponential map. Returns the s->t transform.
template <class T>
class PoseEncoder {
 public:
  explicit PoseEncoder(const NetworkSpec& spec) : spec_(spec) {}

  geo::PoseT<T> forward(Binder<T>& b, const ad::Tensor<T>& frame_s,
                        const ad::Tensor<T>& frame_t) {
    ++forward_calls;
    if (frame_s.shape != frame_t.shape)
      throw InvariantError("pose encoder: frame shapes differ");
    const int c = spec_.pose_channels;
    auto x = ad::concat<T>({frame_s, frame_t}, 1);  // [1,6,H,W]
    x = detail::conv_relu(b, "pose.conv1", x, 6, c, 2);
    x = detail::conv_relu(b, "pose.conv2", x, c, c, 2);
    x = detail::conv_relu(b, "pose.conv3", x, c, c, 2);
    x = detail::conv_relu(b, "pose.conv4", x, c, c, 2);
    x = detail::conv_relu(b, "pose.conv5", x, c, c, 2);
    auto pooled = ad::reshape(ad::mean(x, {2, 3}), {1, c});
    // Zero-initialized head: training starts from the identity motion.
    auto w = b.param("pose.head.w", {c, 6}, 0);
    auto bias = b.param("pose.head.b", {1, 6}, 0);
    auto xi = ad::mul(ad::add(ad::matmul(pooled, w), bias),
                      frame_s.g->scalar(T(0.01)));
    return geo::se3_exp_ad(ad::reshape(xi, {6}));
  }

  int forward_calls = 0;

 private:
  NetworkSpec spec_;
};

template <class T>
struct PlaneOutput {
  ad::Tensor<T> color;    // [1,3,H,W] in [0,1]
  ad::Tensor<T> density;  // [1,1,H,W] >= 0
};

// Shared-weight per-plane decoder: positional encoding of the plane's
// disparity enters as constant channels at the bottleneck, then two
// upsampling conv stages emit sigmoid RGB and softplus density.
template <class T>
class MpiDecoder {
 public:
  explicit MpiDecoder(const NetworkSpec& spec) : spec_(spec) {}

  PlaneOutput<T> forward(Binder<T>& b, const ad::Tensor<T>& features, double disparity) {
    ++forward_calls;
    const NetworkSpec& s = spec_;
    auto& g = *features.g;
    const int h4 = features.shape[2], w4 = features.shape[3];
    auto pe = positional_encode(disparity, s.pe_bands, s.d_min, s.d_max);
    const int pc = static_cast<int>(pe.size());
    std::vector<T> pev(static_cast<size_t>(pc) * h4 * w4);
    for (int c = 0; c < pc; ++c)
      std::fill_n(pev.begin() + static_cast<long>(c) * h4 * w4, static_cast<long>(h4) * w4,
                  static_cast<T>(pe[c]));
    auto pe_t = g.leaf({1, pc, h4, w4}, std::move(pev));
    auto x = ad::concat<T>({features, pe_t}, 1);
    x = detail::conv_relu(b, "mpi.conv1", x, s.feature_channels + pc, s.decoder_channels);
    x = ad::upsample_nearest2(x);  // H/2
    x = detail::conv_relu(b, "mpi.conv2", x, s.decoder_channels, s.decoder_channels);
    x = ad::upsample_nearest2(x);  // H
    x = detail::conv_relu(b, "mpi.conv3", x, s.decoder_channels, s.decoder_channels);
    auto head = detail::conv_layer(b, "mpi.head", x, s.decoder_channels, 4, 3, 1, 1);
    auto color = ad::sigmoid(ad::slice(head, 1, 0, 3));
    auto density_raw = ad::slice(head, 1, 3, 1);
    if (s.density_head_bias != 0.0)
      density_raw = ad::add(density_raw, g.scalar(static_cast<T>(s.density_head_bias)));
    auto density = ad::softplus(density_raw);
    return {color, density};
  }

  int forward_calls = 0;

 private:
  NetworkSpec spec_;
};

}  // namespace mpnerf::net
