#pragma once

// Pinhole camera models, SE(3) algebra, plane-induced homographies and point
// reprojection. Closed-form double-precision versions live in geometry.cpp;
// the differentiable versions below build graph nodes so pose and depth
// receive gradients.

#include <Eigen/Dense>

#include "mpnerf/linops.hpp"
#include "mpnerf/sampling.hpp"
#include "mpnerf/tensor.hpp"

namespace mpnerf::geo {

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  Eigen::Matrix3d matrix() const;
  Eigen::Matrix3d inverse() const;
};

// SE(3) element: p_out = R * p_in + t.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  RigidTransform compose(const RigidTransform& then_apply_this_first) const;
  RigidTransform inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
  // Orthonormality / det checks within 1e-6.
  void validate() const;

  // xi = [rotation axis-angle, translation].
  static RigidTransform exp(const Eigen::Matrix<double, 6, 1>& xi);
  Eigen::Matrix<double, 6, 1> log() const;
};

struct Plane {
  double disparity = 0;                       // 1 / depth, > 0
  Eigen::Vector3d normal{0.0, 0.0, 1.0};      // unit, source camera frame
};

// H maps homogeneous target pixels to source pixels for points on the plane.
// T is the target-to-source transform.
Eigen::Matrix3d plane_homography(const Intrinsics& k_src, const Intrinsics& k_tgt,
                                 const RigidTransform& t_tgt_to_src, const Plane& plane);

struct GridCoords {
  std::vector<double> coords;  // H*W*2, (u, v) per pixel
  std::vector<float> valid;    // H*W, 1 valid / 0 invalid
};

GridCoords warp_grid(const Eigen::Matrix3d& h, int height, int width);

// Lifts each source pixel through its depth, applies T_src_to_tgt, projects
// through k_tgt. depth is row-major height*width.
GridCoords reproject(const std::vector<double>& depth, const RigidTransform& t_src_to_tgt,
                     const Intrinsics& k_src, const Intrinsics& k_tgt);

// ---------------------------------------------------------------------------
// Differentiable counterparts

template <class T>
struct PoseT {
  ad::Tensor<T> rotation;     // [3,3]
  ad::Tensor<T> translation;  // [3,1]

  PoseT inverse() const {
    auto rt = ad::transpose(rotation);
    return {rt, ad::neg(ad::matmul(rt, translation))};
  }
};

template <class T>
PoseT<T> pose_constant(ad::Graph<T>& g, const RigidTransform& p) {
  std::vector<T> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    t[i] = static_cast<T>(p.translation(i));
    for (int j = 0; j < 3; ++j) r[3 * i + j] = static_cast<T>(p.rotation(i, j));
  }
  return {g.leaf({3, 3}, std::move(r)), g.leaf({3, 1}, std::move(t))};
}

// Rodrigues exponential built from primitives; differentiable in xi.
template <class T>
PoseT<T> se3_exp_ad(const ad::Tensor<T>& xi) {
  ad::Graph<T>& g = *xi.g;
  auto w = ad::slice(xi, 0, 0, 3);
  auto t = ad::reshape(ad::slice(xi, 0, 3, 3), {3, 1});
  auto theta2 = ad::sum_all(ad::mul(w, w));
  auto a = ad::sinc_sqrt(theta2);
  auto b = ad::cosc_sqrt(theta2);
  auto w0 = ad::slice(w, 0, 0, 1), w1 = ad::slice(w, 0, 1, 1), w2 = ad::slice(w, 0, 2, 1);
  auto z = g.scalar(T(0));
  auto skew = ad::reshape(
      ad::concat<T>({z, ad::neg(w2), w1, w2, z, ad::neg(w0), ad::neg(w1), w0, z}, 0),
      {3, 3});
  auto eye = g.leaf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto r = ad::add(eye, ad::add(ad::mul(a, skew), ad::mul(b, ad::matmul(skew, skew))));
  return {r, t};
}

// Differentiable twin of plane_homography: exact warp for the plane
// n.X = 1/d in the source frame, (R, t) = target-to-source point transform.
template <class T>
ad::Tensor<T> plane_homography_ad(const Intrinsics& k_src, const Intrinsics& k_tgt,
                                  const PoseT<T>& t_tgt_to_src, const Plane& plane) {
  ad::Graph<T>& g = *t_tgt_to_src.rotation.g;
  Eigen::Matrix3d ks = k_src.matrix();
  Eigen::Matrix3d kti = k_tgt.inverse();
  std::vector<T> ksv(9), ktiv(9), nv(3);
  for (int i = 0; i < 3; ++i) {
    nv[i] = static_cast<T>(plane.normal(i));
    for (int j = 0; j < 3; ++j) {
      ksv[3 * i + j] = static_cast<T>(ks(i, j));
      ktiv[3 * i + j] = static_cast<T>(kti(i, j));
    }
  }
  auto ks_t = g.leaf({3, 3}, std::move(ksv));
  auto kti_t = g.leaf({3, 3}, std::move(ktiv));
  auto n_row = g.leaf({1, 3}, std::move(nv));
  auto denom = ad::sub(g.scalar(static_cast<T>(1.0 / plane.disparity)),
                       ad::matmul(n_row, t_tgt_to_src.translation));  // [1,1]
  auto outer = ad::matmul(t_tgt_to_src.translation,
                          ad::matmul(n_row, t_tgt_to_src.rotation));  // [3,3]
  auto mid = ad::add(t_tgt_to_src.rotation,
                     ad::div(outer, ad::clamp_away_zero(ad::reshape(denom, {1}), T(1e-12))));
  return ad::matmul(ks_t, ad::matmul(mid, kti_t));
}

template <class T>
struct GridT {
  ad::Tensor<T> coords;  // [1,H,W,2]
  ad::Tensor<T> mask;    // [1,1,H,W], constant
};

// Source-pixel lookup coordinates for every target pixel under homography H.
template <class T>
GridT<T> warp_grid_ad(const ad::Tensor<T>& h, int height, int width) {
  ad::Graph<T>& g = *h.g;
  const long n = static_cast<long>(height) * width;
  std::vector<T> grid(n * 3);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      long p = static_cast<long>(i) * width + j;
      grid[p * 3 + 0] = static_cast<T>(j);
      grid[p * 3 + 1] = static_cast<T>(i);
      grid[p * 3 + 2] = T(1);
    }
  auto pix = g.leaf({static_cast<int>(n), 3}, std::move(grid));
  auto proj = ad::matmul(pix, ad::transpose(h));  // [n,3]
  auto wc = ad::slice(proj, 1, 2, 1);
  std::vector<T> maskv(n);
  const auto& wv = wc.values();
  for (long p = 0; p < n; ++p) maskv[p] = wv[p] > T(1e-8) ? T(1) : T(0);
  auto wsafe = ad::clamp_away_zero(wc, T(1e-8));
  auto uv = ad::div(ad::slice(proj, 1, 0, 2), wsafe);
  return {ad::reshape(uv, {1, height, width, 2}),
          g.leaf({1, 1, height, width}, std::move(maskv))};
}

// Differentiable reprojection of source pixels into the target view.
// depth is [1,1,H,W]; gradients reach both depth and the pose.
template <class T>
GridT<T> reproject_ad(const ad::Tensor<T>& depth, const PoseT<T>& t_src_to_tgt,
                      const Intrinsics& k_src, const Intrinsics& k_tgt) {
  ad::Graph<T>& g = *depth.g;
  if (depth.shape.size() != 4 || depth.shape[0] != 1 || depth.shape[1] != 1)
    throw InvariantError("reproject: depth must be [1,1,H,W]");
  const int height = depth.shape[2], width = depth.shape[3];
  const long n = static_cast<long>(height) * width;
  for (T v : depth.values())
    if (!(v > T(0))) throw NumericError("reproject: nonpositive depth");

  std::vector<T> xs(n), ys(n);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      long p = static_cast<long>(i) * width + j;
      xs[p] = static_cast<T>((j - k_src.cx) / k_src.fx);
      ys[p] = static_cast<T>((i - k_src.cy) / k_src.fy);
    }
  auto z = ad::reshape(depth, {static_cast<int>(n), 1});
  auto xcol = ad::mul(g.leaf({static_cast<int>(n), 1}, std::move(xs)), z);
  auto ycol = ad::mul(g.leaf({static_cast<int>(n), 1}, std::move(ys)), z);
  auto pts = ad::concat<T>({xcol, ycol, z}, 1);                       // [n,3]
  auto cam = ad::add(ad::matmul(pts, ad::transpose(t_src_to_tgt.rotation)),
                     ad::transpose(t_src_to_tgt.translation));        // [n,3]
  auto zc = ad::slice(cam, 1, 2, 1);
  auto zsafe = ad::clamp_min(zc, T(1e-6));
  auto u = ad::add(ad::mul(ad::div(ad::slice(cam, 1, 0, 1), zsafe),
                           g.scalar(static_cast<T>(k_tgt.fx))),
                   g.scalar(static_cast<T>(k_tgt.cx)));
  auto v = ad::add(ad::mul(ad::div(ad::slice(cam, 1, 1, 1), zsafe),
                           g.scalar(static_cast<T>(k_tgt.fy))),
                   g.scalar(static_cast<T>(k_tgt.cy)));
  auto uv = ad::concat<T>({u, v}, 1);

  std::vector<T> maskv(n);
  {
    const auto& zv = zc.values();
    const auto& uvv = uv.values();
    for (long p = 0; p < n; ++p) {
      bool ok = zv[p] > T(1e-6) && uvv[p * 2] >= T(0) &&
                uvv[p * 2] <= T(k_tgt.width - 1) && uvv[p * 2 + 1] >= T(0) &&
                uvv[p * 2 + 1] <= T(k_tgt.height - 1);
      maskv[p] = ok ? T(1) : T(0);
    }
  }
  return {ad::reshape(uv, {1, height, width, 2}),
          g.leaf({1, 1, height, width}, std::move(maskv))};
}

}  // namespace mpnerf::geo
