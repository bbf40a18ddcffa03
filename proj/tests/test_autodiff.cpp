#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpnerf/gradcheck.hpp"
#include "mpnerf/linops.hpp"
#include "mpnerf/sampling.hpp"
#include "mpnerf/tensor.hpp"

using namespace mpnerf;
using ad::Graph;
using ad::Shape;
using ad::Tensor;

TEST_CASE("elementwise basics") {
  Graph<double> g;
  auto a = g.leaf({2}, {1, 2});
  auto b = g.leaf({2}, {3, 4});
  auto s = ad::add(a, b);
  CHECK(s.values() == std::vector<double>{4, 6});

  auto sig = ad::sigmoid(g.leaf({1}, {0.0}));
  CHECK(sig.item() == doctest::Approx(0.5));
}

TEST_CASE("softplus derivative at 0 matches finite difference") {
  Rng rng(1);
  auto err = gradcheck::max_grad_error(
      {{Shape{1}, [](Rng&) { return 0.0; }}},
      [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        return ad::sum_all(ad::softplus(in[0]));
      },
      rng);
  CHECK(err < 1e-6);
  // and the value itself: d softplus / dx (0) = 0.5
  Graph<double> g;
  auto x = g.leaf({1}, {0.0}, true);
  auto y = ad::softplus(x);
  g.backward(y);
  CHECK(g.grad(x)[0] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("broadcasting shapes and backward reduction") {
  Graph<double> g;
  auto a = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto b = g.leaf({3}, {10, 20, 30}, true);
  auto y = ad::add(a, b);
  CHECK(y.shape == Shape{2, 3});
  CHECK(y.values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  g.backward(ad::sum_all(y));
  CHECK(g.grad(a) == std::vector<double>(6, 1.0));
  CHECK(g.grad(b) == std::vector<double>(3, 2.0));  // summed over broadcast dim

  Graph<double> g2;
  auto p = g2.leaf({2}, {1, 2});
  auto q = g2.leaf({3}, {1, 2, 3});
  CHECK_THROWS_AS(ad::add(p, q), InvariantError);
}

TEST_CASE("div and log operand validation") {
  Graph<double> g;
  auto a = g.leaf({2}, {1, 2});
  auto z = g.leaf({2}, {1, 0});
  CHECK_THROWS_AS(ad::div(a, z), NumericError);
  auto neg = g.leaf({1}, {-1.0});
  CHECK_THROWS_AS(ad::log(neg), NumericError);
}

TEST_CASE("reduce examples") {
  Graph<double> g;
  CHECK(ad::mean_all(g.leaf({3}, {2, 4, 6})).item() == doctest::Approx(4));
  auto eye = g.leaf({2, 2}, {1, 0, 0, 1});
  auto rows = ad::sum(eye, {0});
  CHECK(rows.values() == std::vector<double>{1, 1});

  auto x = g.leaf({4}, {3, 1, 4, 1}, true);
  auto mn = ad::reduce(ad::ReduceOp::min, x, {0});
  CHECK(mn.item() == 1);
  g.backward(mn);
  // first-index tie break
  CHECK(g.grad(x) == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("mean gradient is 1/n") {
  Graph<double> g;
  auto x = g.leaf({5}, {1, 2, 3, 4, 5}, true);
  g.backward(ad::mean_all(x));
  for (double v : g.grad(x)) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("matmul examples") {
  Graph<double> g;
  auto I = g.leaf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto v = g.leaf({3, 1}, {2, -1, 5});
  CHECK(ad::matmul(I, v).values() == std::vector<double>{2, -1, 5});

  auto a = g.leaf({2, 2}, {1, 2, 3, 4});
  auto ones = g.leaf({2, 1}, {1, 1});
  CHECK(ad::matmul(a, ones).values() == std::vector<double>{3, 7});

  auto bad = g.leaf({3, 2}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(ad::matmul(a, bad), InvariantError);
}

TEST_CASE("conv2d identity and averaging kernels") {
  Graph<double> g;
  std::vector<double> img(25);
  Rng rng(7);
  for (auto& v : img) v = rng.uniform();
  auto x = g.leaf({1, 1, 5, 5}, img);
  auto k1 = g.leaf({1, 1, 1, 1}, {1.0});
  CHECK(ad::conv2d(x, k1, 1, 0).values() == img);

  auto kavg = g.leaf({1, 1, 3, 3}, std::vector<double>(9, 1.0 / 9));
  auto c = g.leaf({1, 1, 5, 5}, std::vector<double>(25, 0.7));
  auto y = ad::conv2d(c, kavg, 1, 0);  // interior only
  CHECK(y.shape == Shape{1, 1, 3, 3});
  for (double v : y.values()) CHECK(v == doctest::Approx(0.7));

  CHECK_THROWS_AS(ad::conv2d(x, g.leaf({1, 2, 3, 3}, std::vector<double>(18, 0.0)), 1, 0),
                  InvariantError);
}

TEST_CASE("grid_sample exact on the pixel grid and at midpoints") {
  Graph<double> g;
  std::vector<double> img(16);
  for (int i = 0; i < 16; ++i) img[i] = i * 0.05;
  auto x = g.leaf({1, 1, 4, 4}, img);

  std::vector<double> coords;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      coords.push_back(j);
      coords.push_back(i);
    }
  auto res = ad::grid_sample_bilinear(x, g.leaf({1, 4, 4, 2}, coords));
  for (int i = 0; i < 16; ++i) CHECK(res.output.values()[i] == doctest::Approx(img[i]));
  for (double m : res.mask.values()) CHECK(m == 1.0);

  auto two = g.leaf({1, 1, 1, 2}, {0.0, 1.0});
  auto mid = ad::grid_sample_bilinear(two, g.leaf({1, 1, 1, 2}, {0.5, 0.0}));
  CHECK(mid.output.values()[0] == doctest::Approx(0.5));

  // out-of-bounds: border clamp + invalid mask
  auto oob = ad::grid_sample_bilinear(two, g.leaf({1, 1, 1, 2}, {5.0, 0.0}));
  CHECK(oob.output.values()[0] == doctest::Approx(1.0));
  CHECK(oob.mask.values()[0] == 0.0);

  auto nanv = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ad::grid_sample_bilinear(two, g.leaf({1, 1, 1, 2}, {nanv, 0.0})),
                  NumericError);
}

TEST_CASE("grid_sample is piecewise linear between knots") {
  Graph<double> g;
  Rng rng(11);
  std::vector<double> img(25);
  for (auto& v : img) v = rng.uniform();
  auto x = g.leaf({1, 1, 5, 5}, img);
  // value at t along a segment inside one cell is a linear blend of endpoints
  double u0 = 1.2, u1 = 1.8, v = 2.3;
  auto at = [&](double u) {
    Graph<double> gl;
    auto xl = gl.leaf({1, 1, 5, 5}, img);
    auto r = ad::grid_sample_bilinear(xl, gl.leaf({1, 1, 1, 2}, {u, v}));
    return r.output.values()[0];
  };
  double mid = at(0.5 * (u0 + u1));
  CHECK(mid == doctest::Approx(0.5 * (at(u0) + at(u1))).epsilon(1e-12));
}

TEST_CASE("backward examples") {
  Graph<double> g;
  auto w = g.leaf({3}, {1, 2, 3}, true);
  g.backward(ad::sum_all(w));
  CHECK(g.grad(w) == std::vector<double>{1, 1, 1});

  Graph<double> g2;
  auto w2 = g2.leaf({2}, {1, 2}, true);
  g2.backward(ad::sum_all(ad::mul(w2, w2)));
  CHECK(g2.grad(w2) == std::vector<double>{2, 4});
}

TEST_CASE("backward contract violations") {
  Graph<double> g;
  auto w = g.leaf({2}, {1, 2}, true);
  auto y = ad::mul(w, w);
  CHECK_THROWS_AS(g.backward(y), InvariantError);  // non-scalar
  auto l = ad::sum_all(y);
  g.backward(l);
  CHECK_THROWS_AS(g.backward(l), InvariantError);  // consumed
}

TEST_CASE("unreachable leaves keep empty grads") {
  Graph<double> g;
  auto w = g.leaf({2}, {1, 2}, true);
  auto unused = g.leaf({2}, {5, 6}, true);
  g.backward(ad::sum_all(w));
  CHECK(g.grad(unused).empty());
  CHECK(g.grad(w).size() == 2);
}

TEST_CASE("determinism: identical graphs give bit-identical grads") {
  auto run = [] {
    Graph<float> g;
    Rng rng(99);
    std::vector<float> img(2 * 25), ker(2 * 2 * 9);
    for (auto& v : img) v = static_cast<float>(rng.uniform());
    for (auto& v : ker) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    auto x = g.leaf({1, 2, 5, 5}, img, true);
    auto k = g.leaf({2, 2, 3, 3}, ker, true);
    auto y = ad::sigmoid(ad::conv2d(x, k, 1, 1));
    g.backward(ad::mean_all(y));
    return std::pair{g.grad(x), g.grad(k)};
  };
  auto r1 = run(), r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("finite-difference suite over all primitives") {
  auto checks = gradcheck::standard_checks();
  auto reports = gradcheck::run_checks(checks, 1e-4, 3, 20240817);
  for (const auto& r : reports) {
    INFO(r.name << " max_err=" << r.max_err);
    CHECK(r.pass);
  }
}

TEST_CASE("gradcheck harness catches a corrupted backward") {
  // Fixture op with a deliberately wrong gradient.
  auto bad_square = [](const Tensor<double>& x) {
    return ad::detail::unary<double>("bad_square", x,
                                     [](double v) { return v * v; },
                                     [](double v, double) { return v; });  // missing factor 2
  };
  Rng rng(5);
  double err = gradcheck::max_grad_error(
      {{Shape{2, 2}, gradcheck::uniform_fill(0.5, 2.0)}},
      [&](Graph<double>& g, const std::vector<Tensor<double>>& in) {
        return ad::sum_all(bad_square(in[0]));
      },
      rng);
  CHECK(err > 1e-2);
}
