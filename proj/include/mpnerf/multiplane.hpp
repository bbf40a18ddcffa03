#pragma once

// Multiplane scene representation and its two render paths: classic alpha
// over-compositing and the density-based volumetric variant where per-plane
// densities are converted to alphas using per-ray plane spacings.

#include <optional>
#include <vector>

#include "mpnerf/geometry.hpp"
#include "mpnerf/tensor.hpp"

namespace mpnerf::mpi {

enum class OpacityKind { alpha, density };

// How plane spacing delta_i is measured when converting density to alpha:
// along each pixel's viewing ray (scaled by |K^-1 [u,v,1]|) or along the
// optical axis only.
enum class DeltaMode { ray, axial };

template <class T>
struct PlaneT {
  ad::Tensor<T> color;    // [1,3,H,W], values in [0,1]
  ad::Tensor<T> opacity;  // [1,1,H,W]
};

// Ordered front-to-back in disparity: planes[0] is farthest (smallest d),
// planes back() nearest. Matches the occlusion order of the over operator.
template <class T>
struct MultiplaneFieldT {
  std::vector<PlaneT<T>> planes;
  OpacityKind kind = OpacityKind::alpha;
  std::vector<double> disparities;  // ascending, positive

  int height() const { return planes.at(0).color.shape[2]; }
  int width() const { return planes.at(0).color.shape[3]; }

  void validate() const {
    if (planes.empty() || planes.size() != disparities.size())
      throw InvariantError("multiplane: plane/disparity count mismatch");
    const int h = height(), w = width();
    for (const auto& p : planes) {
      if (p.color.shape != ad::Shape{1, 3, h, w} || p.opacity.shape != ad::Shape{1, 1, h, w})
        throw InvariantError("multiplane: inconsistent plane shapes");
    }
    double prev = 0;
    for (double d : disparities) {
      if (!(d > prev)) throw InvariantError("multiplane: disparities must be ascending positive");
      prev = d;
    }
    for (const auto& p : planes)
      for (T v : p.opacity.values()) {
        if (kind == OpacityKind::alpha) {
          if (!(v >= T(0) && v <= T(1)))
            throw InvariantError("multiplane: alpha outside [0,1]");
        } else if (!(v >= T(0))) {
          throw InvariantError("multiplane: negative density");
        }
      }
  }
};

// D disparities uniformly spaced over [d_min, d_max], ascending.
inline std::vector<double> uniform_disparities(double d_min, double d_max, int count) {
  if (!(d_min > 0) || !(d_max > d_min) || count < 1)
    throw InvariantError("uniform_disparities: need 0 < d_min < d_max, count >= 1");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = d_min;
    return out;
  }
  for (int i = 0; i < count; ++i)
    out[i] = d_min + (d_max - d_min) * i / (count - 1);
  return out;
}

template <class T>
struct RenderOutputT {
  ad::Tensor<T> image;         // [1,3,H,W]
  ad::Tensor<T> disparity;     // [1,1,H,W]
  ad::Tensor<T> accumulation;  // [1,1,H,W], total composited weight
};

namespace detail {

// Back-to-front over-compositing of per-plane colors and alphas.
// w_i = alpha_i * prod_{j>i}(1 - alpha_j); runs nearest plane first so the
// running transmittance picks up each (1 - alpha) exactly once.
template <class T>
RenderOutputT<T> over_composite(const std::vector<ad::Tensor<T>>& colors,
                                const std::vector<ad::Tensor<T>>& alphas,
                                const std::vector<double>& disparities) {
  ad::Graph<T>& g = *colors.front().g;
  const int h = colors.front().shape[2], w = colors.front().shape[3];
  const int count = static_cast<int>(colors.size());
  auto image = g.constant({1, 3, h, w}, T(0));
  auto disparity = g.constant({1, 1, h, w}, T(0));
  auto acc = g.constant({1, 1, h, w}, T(0));
  ad::Tensor<T> trans;  // transmittance of all planes nearer than i
  for (int i = count - 1; i >= 0; --i) {
    auto weight = i == count - 1 ? alphas[i] : ad::mul(alphas[i], trans);
    image = ad::add(image, ad::mul(colors[i], weight));
    disparity = ad::add(disparity, ad::mul(weight, g.scalar(static_cast<T>(disparities[i]))));
    acc = ad::add(acc, weight);
    auto one_minus = ad::sub(g.scalar(T(1)), alphas[i]);
    trans = i == count - 1 ? one_minus : ad::mul(trans, one_minus);
  }
  return {image, disparity, acc};
}

}  // namespace detail

// Render the field from its own (source) viewpoint: Eq. 5.
template <class T>
RenderOutputT<T> composite_source(const MultiplaneFieldT<T>& field) {
  if (field.kind != OpacityKind::alpha)
    throw InvariantError("composite_source: needs an alpha field");
  std::vector<ad::Tensor<T>> colors, alphas;
  colors.reserve(field.planes.size());
  alphas.reserve(field.planes.size());
  for (const auto& p : field.planes) {
    colors.push_back(p.color);
    alphas.push_back(p.opacity);
  }
  return detail::over_composite(colors, alphas, field.disparities);
}

// Render the field from a novel viewpoint: warp every plane into the target
// view through its plane homography, then composite (Eq. 4 + 6). Pixels whose
// warp is degenerate or lands outside the source image get alpha 0 and drop
// out of the accumulation.
template <class T>
RenderOutputT<T> composite_target(const MultiplaneFieldT<T>& field,
                                  const geo::PoseT<T>& t_tgt_to_src, const geo::Intrinsics& k_src,
                                  const geo::Intrinsics& k_tgt) {
  if (field.kind != OpacityKind::alpha)
    throw InvariantError("composite_target: needs an alpha field");
  const int h = k_tgt.height, w = k_tgt.width;
  std::vector<ad::Tensor<T>> colors, alphas;
  for (size_t i = 0; i < field.planes.size(); ++i) {
    auto hmat = geo::plane_homography_ad(k_src, k_tgt, t_tgt_to_src,
                                         geo::Plane{field.disparities[i]});
    auto grid = geo::warp_grid_ad(hmat, h, w);
    auto stacked = ad::concat<T>({field.planes[i].color, field.planes[i].opacity}, 1);
    auto sampled = ad::grid_sample_bilinear(stacked, grid.coords);
    auto alpha = ad::slice(sampled.output, 1, 3, 1);
    // Constant masks: in-bounds bilinear support and nondegenerate warp depth.
    alpha = ad::mul(ad::mul(alpha, sampled.mask), grid.mask);
    colors.push_back(ad::slice(sampled.output, 1, 0, 3));
    alphas.push_back(alpha);
  }
  return detail::over_composite(colors, alphas, field.disparities);
}

// Convert a density field to an alpha field: alpha = 1 - exp(-sigma * delta)
// with delta the gap to the next nearer plane, measured along each pixel's
// viewing ray (DeltaMode::ray) or the optical axis (DeltaMode::axial). The
// nearest plane reuses the previous gap.
template <class T>
MultiplaneFieldT<T> density_to_alpha(const MultiplaneFieldT<T>& field, const geo::Intrinsics& k,
                                     DeltaMode mode = DeltaMode::ray) {
  if (field.kind != OpacityKind::density)
    throw InvariantError("density_to_alpha: needs a density field");
  const int count = static_cast<int>(field.planes.size());
  if (count < 2) throw InvariantError("density_to_alpha: needs at least two planes");
  for (const auto& p : field.planes)
    for (T v : p.opacity.values())
      if (!(v >= T(0))) throw NumericError("density_to_alpha: negative density");

  ad::Graph<T>& g = *field.planes.front().color.g;
  const int h = field.height(), w = field.width();

  // Per-pixel ray length factor r(u,v) = |K^-1 [u,v,1]|.
  std::vector<T> ray(static_cast<size_t>(h) * w, T(1));
  if (mode == DeltaMode::ray) {
    Eigen::Matrix3d kinv = k.inverse();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        ray[static_cast<size_t>(i) * w + j] =
            static_cast<T>((kinv * Eigen::Vector3d(j, i, 1.0)).norm());
  }
  auto ray_t = g.leaf({1, 1, h, w}, std::move(ray));

  // Axial gaps z_i - z_{i+1}; z descends with ascending disparity.
  std::vector<double> gaps(count);
  for (int i = 0; i + 1 < count; ++i)
    gaps[i] = 1.0 / field.disparities[i] - 1.0 / field.disparities[i + 1];
  gaps[count - 1] = gaps[count - 2];

  MultiplaneFieldT<T> out;
  out.kind = OpacityKind::alpha;
  out.disparities = field.disparities;
  for (int i = 0; i < count; ++i) {
    auto delta = ad::mul(ray_t, g.scalar(static_cast<T>(gaps[i])));
    auto alpha = ad::sub(g.scalar(T(1)),
                         ad::exp(ad::neg(ad::mul(field.planes[i].opacity, delta))));
    out.planes.push_back({field.planes[i].color, alpha});
  }
  return out;
}

// The decoder's render path: convert densities, then composite from the
// source view (no pose) or a novel view.
template <class T>
RenderOutputT<T> render_nerf(const MultiplaneFieldT<T>& field,
                             const std::optional<geo::PoseT<T>>& t_tgt_to_src,
                             const geo::Intrinsics& k_src, const geo::Intrinsics& k_tgt,
                             DeltaMode mode = DeltaMode::ray) {
  auto alpha_field = density_to_alpha(field, k_src, mode);
  if (t_tgt_to_src) return composite_target(alpha_field, *t_tgt_to_src, k_src, k_tgt);
  return composite_source(alpha_field);
}

}  // namespace mpnerf::mpi
