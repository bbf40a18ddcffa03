#include "mpnerf/geometry.hpp"

#include <cmath>

#include "mpnerf/errors.hpp"

namespace mpnerf::geo {

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw InvariantError("intrinsics: focal lengths must be positive");
  if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
    throw InvariantError("intrinsics: principal point outside image");
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Eigen::Matrix3d Intrinsics::inverse() const {
  Eigen::Matrix3d k;
  k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
  return k;
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const {
  return {rotation * first.rotation, rotation * first.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  return {rotation.transpose(), -(rotation.transpose() * translation)};
}

Eigen::Vector3d RigidTransform::apply(const Eigen::Vector3d& p) const {
  return rotation * p + translation;
}

void RigidTransform::validate() const {
  if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm() > 1e-6)
    throw InvariantError("rigid transform: rotation not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-6)
    throw InvariantError("rigid transform: det(R) != +1");
}

RigidTransform RigidTransform::exp(const Eigen::Matrix<double, 6, 1>& xi) {
  Eigen::Vector3d w = xi.head<3>();
  double theta2 = w.squaredNorm();
  double a, b;
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  Eigen::Matrix3d skew;
  skew << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  RigidTransform out;
  out.rotation = Eigen::Matrix3d::Identity() + a * skew + b * skew * skew;
  out.translation = xi.tail<3>();
  return out;
}

Eigen::Matrix<double, 6, 1> RigidTransform::log() const {
  Eigen::Matrix<double, 6, 1> xi;
  double c = (rotation.trace() - 1.0) * 0.5;
  c = std::min(1.0, std::max(-1.0, c));
  double theta = std::acos(c);
  Eigen::Vector3d w;
  if (theta < 1e-10) {
    w = Eigen::Vector3d(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                        rotation(1, 0) - rotation(0, 1)) * 0.5;
  } else {
    double s = std::sin(theta);
    w = Eigen::Vector3d(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
                        rotation(1, 0) - rotation(0, 1)) * (theta / (2.0 * s));
  }
  xi.head<3>() = w;
  xi.tail<3>() = translation;
  return xi;
}

Eigen::Matrix3d plane_homography(const Intrinsics& k_src, const Intrinsics& k_tgt,
                                 const RigidTransform& t_tgt_to_src, const Plane& plane) {
  if (!(plane.disparity > 0)) throw InvariantError("plane: disparity must be positive");
  // Exact warp for the plane n.X = 1/d in the source frame, with (R, t) the
  // target-to-source point transform. Expands to R + t n^T R d for small
  // motion.
  const Eigen::Matrix3d& r = t_tgt_to_src.rotation;
  const Eigen::Vector3d& t = t_tgt_to_src.translation;
  double denom = 1.0 / plane.disparity - plane.normal.dot(t);
  if (std::abs(denom) < 1e-12) throw NumericError("plane_homography: plane through target camera");
  Eigen::Matrix3d mid = r + t * (plane.normal.transpose() * r) / denom;
  return k_src.matrix() * mid * k_tgt.inverse();
}

GridCoords warp_grid(const Eigen::Matrix3d& h, int height, int width) {
  GridCoords out;
  out.coords.resize(static_cast<size_t>(height) * width * 2);
  out.valid.resize(static_cast<size_t>(height) * width);
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      Eigen::Vector3d p = h * Eigen::Vector3d(j, i, 1.0);
      long idx = static_cast<long>(i) * width + j;
      if (p.z() <= 1e-8) {
        out.valid[idx] = 0.f;
        out.coords[idx * 2] = 0;
        out.coords[idx * 2 + 1] = 0;
      } else {
        out.valid[idx] = 1.f;
        out.coords[idx * 2] = p.x() / p.z();
        out.coords[idx * 2 + 1] = p.y() / p.z();
      }
    }
  return out;
}

GridCoords reproject(const std::vector<double>& depth, const RigidTransform& t_src_to_tgt,
                     const Intrinsics& k_src, const Intrinsics& k_tgt) {
  const int height = k_src.height, width = k_src.width;
  if (static_cast<long>(depth.size()) != static_cast<long>(height) * width)
    throw InvariantError("reproject: depth size mismatch");
  GridCoords out;
  out.coords.resize(depth.size() * 2);
  out.valid.resize(depth.size());
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j) {
      long idx = static_cast<long>(i) * width + j;
      double z = depth[idx];
      if (!(z > 0)) throw NumericError("reproject: nonpositive depth");
      Eigen::Vector3d p((j - k_src.cx) / k_src.fx * z, (i - k_src.cy) / k_src.fy * z, z);
      Eigen::Vector3d q = t_src_to_tgt.apply(p);
      if (q.z() <= 1e-6) {
        out.valid[idx] = 0.f;
        out.coords[idx * 2] = 0;
        out.coords[idx * 2 + 1] = 0;
        continue;
      }
      double u = k_tgt.fx * q.x() / q.z() + k_tgt.cx;
      double v = k_tgt.fy * q.y() / q.z() + k_tgt.cy;
      out.coords[idx * 2] = u;
      out.coords[idx * 2 + 1] = v;
      out.valid[idx] = (u >= 0 && u <= k_tgt.width - 1 && v >= 0 && v <= k_tgt.height - 1)
                           ? 1.f : 0.f;
    }
  return out;
}

}  // namespace mpnerf::geo
