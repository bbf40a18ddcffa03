#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpnerf/geometry.hpp"
#include "mpnerf/gradcheck.hpp"
#include "mpnerf/rng.hpp"

using namespace mpnerf;
using geo::Intrinsics;
using geo::Plane;
using geo::RigidTransform;

namespace {

Intrinsics test_intrinsics(double f = 60.0, int w = 64, int h = 64) {
  return Intrinsics{f, f, w / 2.0 - 0.3, h / 2.0 + 0.2, w, h};
}

RigidTransform random_pose(Rng& rng, double rot_mag, double trans_mag) {
  Eigen::Matrix<double, 6, 1> xi;
  for (int i = 0; i < 3; ++i) xi(i) = rng.uniform(-rot_mag, rot_mag);
  for (int i = 3; i < 6; ++i) xi(i) = rng.uniform(-trans_mag, trans_mag);
  return RigidTransform::exp(xi);
}

// Independent oracle: intersect the target-pixel ray with the source-frame
// plane n.X = 1/d, then project the 3D point through the source camera.
Eigen::Vector2d ray_plane_project(const Intrinsics& ks, const Intrinsics& kt,
                                  const RigidTransform& t_t2s, const Plane& plane,
                                  double ut, double vt) {
  Eigen::Vector3d dir_t = kt.inverse() * Eigen::Vector3d(ut, vt, 1.0);
  // X_s(lambda) = R * (lambda * dir_t) + t must satisfy n.X_s = 1/d.
  double a = 1.0 / plane.disparity;
  double denom = plane.normal.dot(t_t2s.rotation * dir_t);
  double lambda = (a - plane.normal.dot(t_t2s.translation)) / denom;
  Eigen::Vector3d xs = t_t2s.apply(lambda * dir_t);
  Eigen::Vector3d p = ks.matrix() * xs;
  return {p.x() / p.z(), p.y() / p.z()};
}

}  // namespace

TEST_CASE("se3 exp basics") {
  auto id = RigidTransform::exp(Eigen::Matrix<double, 6, 1>::Zero());
  CHECK(id.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK(id.translation.norm() == 0.0);

  Eigen::Matrix<double, 6, 1> xi;
  xi << M_PI / 2, 0, 0, 0, 0, 0;
  auto rx = RigidTransform::exp(xi);
  Eigen::Vector3d mapped = rx.apply(Eigen::Vector3d(0, 1, 0));
  CHECK(mapped.isApprox(Eigen::Vector3d(0, 0, 1), 1e-12));
  rx.validate();
}

TEST_CASE("se3 exp/log round-trips") {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    Eigen::Matrix<double, 6, 1> xi;
    double mag = rng.uniform(1e-8, 3.0);  // keep |rot| < pi
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    xi.head<3>() = axis * mag;
    for (int k = 3; k < 6; ++k) xi(k) = rng.uniform(-2.0, 2.0);
    auto t = RigidTransform::exp(xi);
    t.validate();
    CHECK((t.log() - xi).norm() < 1e-8);
  }
}

TEST_CASE("homography identity under zero motion") {
  auto k = test_intrinsics();
  RigidTransform id;
  for (double d : {1.0 / 20, 0.7, 5.0}) {
    Eigen::Matrix3d h = geo::plane_homography(k, k, id, Plane{d});
    h /= h(2, 2);
    CHECK((h - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  }
}

TEST_CASE("pure z-translation scales about the principal point") {
  auto k = test_intrinsics();
  RigidTransform t;
  double tau = 0.3, d = 0.5;
  t.translation = Eigen::Vector3d(0, 0, tau);
  Eigen::Matrix3d h = geo::plane_homography(k, k, t, Plane{d});
  // Check against the per-point projection oracle and the closed-form scale.
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    double ut = rng.uniform(0, 63), vt = rng.uniform(0, 63);
    Eigen::Vector3d p = h * Eigen::Vector3d(ut, vt, 1);
    Eigen::Vector2d via_h(p.x() / p.z(), p.y() / p.z());
    Eigen::Vector2d via_rays = ray_plane_project(k, k, t, Plane{d}, ut, vt);
    CHECK((via_h - via_rays).norm() < 1e-9);
    double scale = 1.0 - tau * d;
    CHECK(via_h.x() == doctest::Approx(k.cx + scale * (ut - k.cx)).epsilon(1e-10));
    CHECK(via_h.y() == doctest::Approx(k.cy + scale * (vt - k.cy)).epsilon(1e-10));
  }
}

TEST_CASE("homography matches ray-plane oracle on random configurations") {
  auto ks = test_intrinsics(55.0);
  auto kt = test_intrinsics(62.0);
  Rng rng(17);
  for (int i = 0; i < 300; ++i) {
    auto t = random_pose(rng, 0.2, 0.2);
    Plane plane{rng.uniform(0.05, 2.0)};
    Eigen::Matrix3d h = geo::plane_homography(ks, kt, t, plane);
    for (double ut : {0.0, 63.0}) {
      for (double vt : {0.0, 63.0}) {
        Eigen::Vector3d p = h * Eigen::Vector3d(ut, vt, 1);
        Eigen::Vector2d via_h(p.x() / p.z(), p.y() / p.z());
        Eigen::Vector2d via_rays = ray_plane_project(ks, kt, t, plane, ut, vt);
        CHECK((via_h - via_rays).norm() < 1e-9);
      }
    }
  }
}

TEST_CASE("depth-limit: far plane tends to the pure-rotation homography") {
  auto k = test_intrinsics();
  Rng rng(5);
  auto t = random_pose(rng, 0.3, 0.5);
  Eigen::Matrix3d h = geo::plane_homography(k, k, t, Plane{1e-9});
  Eigen::Matrix3d hrot = k.matrix() * t.rotation * k.inverse();
  h /= h(2, 2);
  hrot /= hrot(2, 2);
  CHECK((h - hrot).norm() < 1e-6);
}

TEST_CASE("warp_grid identity and translation") {
  auto grid = geo::warp_grid(Eigen::Matrix3d::Identity(), 4, 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      CHECK(grid.coords[(i * 5 + j) * 2] == doctest::Approx(j));
      CHECK(grid.coords[(i * 5 + j) * 2 + 1] == doctest::Approx(i));
    }
  Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
  shift(0, 2) = 1.5;
  shift(1, 2) = -0.25;
  auto g2 = geo::warp_grid(shift, 4, 5);
  CHECK(g2.coords[0] == doctest::Approx(1.5));
  CHECK(g2.coords[1] == doctest::Approx(-0.25));
}

TEST_CASE("warp_grid composition") {
  Rng rng(9);
  auto k = test_intrinsics();
  Eigen::Matrix3d h1 = geo::plane_homography(k, k, random_pose(rng, 0.1, 0.1), Plane{0.5});
  Eigen::Matrix3d h2 = geo::plane_homography(k, k, random_pose(rng, 0.1, 0.1), Plane{0.8});
  auto composed = geo::warp_grid(h1 * h2, 8, 8);
  auto step2 = geo::warp_grid(h2, 8, 8);
  // warp by h2 first, then push those points through h1
  for (int p = 0; p < 64; ++p) {
    Eigen::Vector3d q = h1 * Eigen::Vector3d(step2.coords[2 * p], step2.coords[2 * p + 1], 1);
    CHECK(std::abs(q.x() / q.z() - composed.coords[2 * p]) < 1e-6);
    CHECK(std::abs(q.y() / q.z() - composed.coords[2 * p + 1]) < 1e-6);
  }
}

TEST_CASE("reproject identity pose returns the pixel grid") {
  auto k = test_intrinsics();
  std::vector<double> depth(64 * 64);
  Rng rng(21);
  for (auto& d : depth) d = rng.uniform(0.5, 10.0);
  auto grid = geo::reproject(depth, RigidTransform{}, k, k);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      CHECK(grid.coords[(i * 64 + j) * 2] == doctest::Approx(j).epsilon(1e-12));
      CHECK(grid.coords[(i * 64 + j) * 2 + 1] == doctest::Approx(i).epsilon(1e-12));
    }
}

TEST_CASE("reproject stereo disparity shift") {
  auto k = test_intrinsics();
  double z = 2.0, tx = 0.1;
  std::vector<double> depth(64 * 64, z);
  RigidTransform t;
  t.translation = Eigen::Vector3d(tx, 0, 0);
  auto grid = geo::reproject(depth, t, k, k);
  double shift = k.fx * tx / z;
  for (int p = 0; p < 64 * 64; ++p) {
    int j = p % 64;
    CHECK(grid.coords[2 * p] == doctest::Approx(j + shift).epsilon(1e-12));
  }
}

TEST_CASE("reproject matches scalar oracle on random inputs") {
  auto ks = test_intrinsics(58.0);
  auto kt = test_intrinsics(63.0);
  Rng rng(33);
  for (int iter = 0; iter < 20; ++iter) {
    auto t = random_pose(rng, 0.1, 0.2);
    std::vector<double> depth(64 * 64);
    for (auto& d : depth) d = rng.uniform(0.5, 10.0);
    auto grid = geo::reproject(depth, t, ks, kt);
    for (int p = 0; p < 64 * 64; p += 97) {
      int i = p / 64, j = p % 64;
      Eigen::Vector3d pt((j - ks.cx) / ks.fx * depth[p], (i - ks.cy) / ks.fy * depth[p],
                         depth[p]);
      Eigen::Vector3d q = t.rotation * pt + t.translation;
      if (q.z() <= 1e-6) continue;
      CHECK(std::abs(grid.coords[2 * p] - (kt.fx * q.x() / q.z() + kt.cx)) < 1e-9);
      CHECK(std::abs(grid.coords[2 * p + 1] - (kt.fy * q.y() / q.z() + kt.cy)) < 1e-9);
    }
  }
  std::vector<double> bad(64 * 64, -1.0);
  CHECK_THROWS_AS(geo::reproject(bad, RigidTransform{}, ks, kt), NumericError);
}

TEST_CASE("differentiable se3_exp matches the closed form") {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Eigen::Matrix<double, 6, 1> xi;
    for (int k = 0; k < 6; ++k) xi(k) = rng.uniform(-1.0, 1.0);
    ad::Graph<double> g;
    auto xt = g.leaf({6}, {xi(0), xi(1), xi(2), xi(3), xi(4), xi(5)});
    auto pose = geo::se3_exp_ad(xt);
    auto ref = RigidTransform::exp(xi);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(pose.rotation.values()[3 * r + c] == doctest::Approx(ref.rotation(r, c)).epsilon(1e-12));
    for (int r = 0; r < 3; ++r)
      CHECK(pose.translation.values()[r] == doctest::Approx(ref.translation(r)));
  }
}

TEST_CASE("differentiable homography and warp match the closed form") {
  auto ks = test_intrinsics(55.0);
  auto kt = test_intrinsics(62.0);
  Rng rng(13);
  auto pose = random_pose(rng, 0.15, 0.15);
  Plane plane{0.6};
  Eigen::Matrix3d href = geo::plane_homography(ks, kt, pose, plane);
  auto gref = geo::warp_grid(href, 16, 16);

  ad::Graph<double> g;
  auto xi = pose.log();
  auto xt = g.leaf({6}, {xi(0), xi(1), xi(2), xi(3), xi(4), xi(5)});
  auto pt = geo::se3_exp_ad(xt);
  auto ht = geo::plane_homography_ad(ks, kt, pt, plane);
  auto wg = geo::warp_grid_ad(ht, 16, 16);
  for (int p = 0; p < 16 * 16; ++p) {
    CHECK(wg.coords.values()[2 * p] == doctest::Approx(gref.coords[2 * p]).epsilon(1e-9));
    CHECK(wg.coords.values()[2 * p + 1] == doctest::Approx(gref.coords[2 * p + 1]).epsilon(1e-9));
  }
}

TEST_CASE("differentiable reproject matches the closed form") {
  auto k = test_intrinsics();
  Rng rng(29);
  auto pose = random_pose(rng, 0.05, 0.1);
  std::vector<double> depth(16 * 16);
  for (auto& d : depth) d = rng.uniform(1.0, 8.0);

  auto gref = geo::reproject(depth, pose, Intrinsics{k.fx, k.fy, k.cx, k.cy, 16, 16},
                             Intrinsics{k.fx, k.fy, k.cx, k.cy, 16, 16});

  ad::Graph<double> g;
  auto dt = g.leaf({1, 1, 16, 16}, depth);
  auto pt = geo::pose_constant(g, pose);
  auto res = geo::reproject_ad(dt, pt, Intrinsics{k.fx, k.fy, k.cx, k.cy, 16, 16},
                               Intrinsics{k.fx, k.fy, k.cx, k.cy, 16, 16});
  for (int p = 0; p < 16 * 16; ++p) {
    CHECK(std::abs(res.coords.values()[2 * p] - gref.coords[2 * p]) < 1e-9);
    CHECK(std::abs(res.coords.values()[2 * p + 1] - gref.coords[2 * p + 1]) < 1e-9);
    CHECK(res.mask.values()[p] == doctest::Approx(gref.valid[p]));
  }
}

TEST_CASE("gradients flow through the pose 6-vector") {
  // loss = mean of warped image; compare d loss / d xi against finite
  // differences through the whole geometry + sampling chain.
  auto k = test_intrinsics(14.0, 16, 16);
  Rng rng(55);
  std::vector<double> img(16 * 16);
  for (auto& v : img) v = rng.uniform();

  auto build = [&](ad::Graph<double>& g, const std::vector<ad::Tensor<double>>& in) {
    auto pose = geo::se3_exp_ad(in[0]);
    auto h = geo::plane_homography_ad(k, k, pose, geo::Plane{0.5});
    auto wg = geo::warp_grid_ad(h, 16, 16);
    auto it = g.leaf({1, 1, 16, 16}, img);
    auto s = ad::grid_sample_bilinear(it, wg.coords);
    return ad::mean_all(s.output);
  };
  auto fill = [](Rng& r) { return r.uniform(-0.05, 0.05); };
  Rng check_rng(77);
  double err = gradcheck::max_grad_error({{ad::Shape{6}, fill}}, build, check_rng, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("gradients flow through depth in reproject") {
  auto k = test_intrinsics(14.0, 8, 8);
  Rng rng(66);
  std::vector<double> img(8 * 8);
  for (auto& v : img) v = rng.uniform();
  RigidTransform pose;
  pose.translation = Eigen::Vector3d(0.05, -0.03, 0.02);

  auto build = [&](ad::Graph<double>& g, const std::vector<ad::Tensor<double>>& in) {
    auto pt = geo::pose_constant(g, pose);
    auto res = geo::reproject_ad(in[0], pt, k, k);
    auto it = g.leaf({1, 1, 8, 8}, img);
    auto s = ad::grid_sample_bilinear(it, res.coords);
    return ad::mean_all(ad::mul(s.output, ad::reshape(res.mask, {1, 1, 8, 8})));
  };
  auto fill = [](Rng& r) { return r.uniform(1.5, 4.0); };
  Rng check_rng(88);
  double err = gradcheck::max_grad_error({{ad::Shape{1, 1, 8, 8}, fill}}, build, check_rng, 1e-6);
  CHECK(err < 1e-4);
}

TEST_CASE("intrinsics and transform validation") {
  CHECK_THROWS_AS((Intrinsics{-1, 1, 32, 32, 64, 64}).validate(), InvariantError);
  CHECK_THROWS_AS((Intrinsics{60, 60, 100, 32, 64, 64}).validate(), InvariantError);
  RigidTransform bad;
  bad.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvariantError);
}
