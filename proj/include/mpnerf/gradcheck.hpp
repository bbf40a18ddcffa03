#pragma once

// Central finite-difference verification of every autodiff primitive,
// always in 64-bit. Shared by the unit tests, the acceptance suite and the
// `gradcheck` CLI subcommand.

#include <functional>
#include <string>
#include <vector>

#include "mpnerf/linops.hpp"
#include "mpnerf/rng.hpp"
#include "mpnerf/sampling.hpp"
#include "mpnerf/tensor.hpp"

namespace mpnerf::gradcheck {

using ad::Graph;
using ad::Shape;
using ad::Tensor;

// Builds a scalar loss from freshly created leaves.
using BuildFn = std::function<Tensor<double>(Graph<double>&, const std::vector<Tensor<double>>&)>;
using FillFn = std::function<double(Rng&)>;

struct InputSpec {
  Shape shape;
  FillFn fill;  // value generator; keeps inputs away from kinks/poles
};

inline FillFn uniform_fill(double lo, double hi) {
  return [lo, hi](Rng& r) { return r.uniform(lo, hi); };
}

// Max mismatch between analytic and central-difference gradients over all
// input elements. Error is relative, floored at magnitude 1.
inline double max_grad_error(const std::vector<InputSpec>& specs, const BuildFn& build,
                             Rng& rng, double eps = 1e-5) {
  std::vector<std::vector<double>> base(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    base[i].resize(ad::numel(specs[i].shape));
    for (auto& v : base[i]) v = specs[i].fill(rng);
  }
  auto eval = [&](const std::vector<std::vector<double>>& vals,
                  std::vector<std::vector<double>>* grads) {
    Graph<double> g;
    std::vector<Tensor<double>> leaves;
    for (size_t i = 0; i < specs.size(); ++i)
      leaves.push_back(g.leaf(specs[i].shape, vals[i], true));
    Tensor<double> loss = build(g, leaves);
    double out = loss.item();
    if (grads) {
      g.backward(loss);
      grads->resize(leaves.size());
      for (size_t i = 0; i < leaves.size(); ++i) {
        const auto& gv = g.grad(leaves[i]);
        (*grads)[i] = gv.empty() ? std::vector<double>(vals[i].size(), 0.0) : gv;
      }
    }
    return out;
  };

  std::vector<std::vector<double>> analytic;
  eval(base, &analytic);

  double worst = 0;
  for (size_t i = 0; i < specs.size(); ++i) {
    for (size_t j = 0; j < base[i].size(); ++j) {
      auto vals = base;
      vals[i][j] = base[i][j] + eps;
      double fp = eval(vals, nullptr);
      vals[i][j] = base[i][j] - eps;
      double fm = eval(vals, nullptr);
      double fd = (fp - fm) / (2 * eps);
      double a = analytic[i][j];
      double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

struct OpCheck {
  std::string name;
  // Returns the max gradient error for one random instance.
  std::function<double(Rng&)> run_once;
};

struct Report {
  std::string name;
  int instances = 0;
  double max_err = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> spread(Graph<double>& g, const Tensor<double>& x) {
  // Scalar loss with non-uniform weights so gradients are not all-ones.
  std::vector<double> w(x.numel());
  for (size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return ad::sum_all(ad::mul(x, g.leaf(x.shape, w)));
}

inline OpCheck unary_check(const std::string& name,
                           std::function<Tensor<double>(const Tensor<double>&)> op,
                           FillFn fill) {
  return OpCheck{name, [=](Rng& rng) {
    return max_grad_error({{Shape{2, 5}, fill}},
                          [op](Graph<double>& g, const std::vector<Tensor<double>>& in) {
                            return spread(g, op(in[0]));
                          },
                          rng);
  }};
}

}  // namespace detail

// The registered primitive suite; every op the engine exposes appears here.
inline std::vector<OpCheck> standard_checks() {
  using ad::Tensor;
  std::vector<OpCheck> checks;
  auto any = gradcheck::uniform_fill(-2.0, 2.0);
  auto pos = gradcheck::uniform_fill(0.2, 3.0);
  auto away_zero = [](Rng& r) {
    double v = r.uniform(0.5, 2.0);
    return r.uniform() < 0.5 ? -v : v;
  };

  auto binary = [&](const std::string& name,
                    std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> op,
                    FillFn fa, FillFn fb) {
    // Includes a broadcast variant: [2,3,4] against [3,1].
    checks.push_back(OpCheck{name, [=](Rng& rng) {
      double e1 = max_grad_error(
          {{Shape{2, 3, 4}, fa}, {Shape{2, 3, 4}, fb}},
          [op](Graph<double>& g, const std::vector<Tensor<double>>& in) {
            return detail::spread(g, op(in[0], in[1]));
          },
          rng);
      double e2 = max_grad_error(
          {{Shape{2, 3, 4}, fa}, {Shape{3, 1}, fb}},
          [op](Graph<double>& g, const std::vector<Tensor<double>>& in) {
            return detail::spread(g, op(in[0], in[1]));
          },
          rng);
      return std::max(e1, e2);
    }});
  };

  binary("add", [](auto& a, auto& b) { return ad::add(a, b); }, any, any);
  binary("sub", [](auto& a, auto& b) { return ad::sub(a, b); }, any, any);
  binary("mul", [](auto& a, auto& b) { return ad::mul(a, b); }, any, any);
  binary("div", [](auto& a, auto& b) { return ad::div(a, b); }, any, away_zero);

  checks.push_back(detail::unary_check("neg", [](auto& x) { return ad::neg(x); }, any));
  checks.push_back(detail::unary_check("exp", [](auto& x) { return ad::exp(x); }, any));
  checks.push_back(detail::unary_check("log", [](auto& x) { return ad::log(x); }, pos));
  checks.push_back(detail::unary_check("abs", [](auto& x) { return ad::abs(x); }, away_zero));
  checks.push_back(detail::unary_check("sigmoid", [](auto& x) { return ad::sigmoid(x); }, any));
  checks.push_back(detail::unary_check("softplus", [](auto& x) { return ad::softplus(x); }, any));
  checks.push_back(detail::unary_check(
      "clamp_min", [](auto& x) { return ad::clamp_min(x, 0.25); },
      [](Rng& r) {
        double v = r.uniform(-2.0, 2.0);
        while (std::abs(v - 0.25) < 0.05) v = r.uniform(-2.0, 2.0);
        return v;
      }));
  checks.push_back(detail::unary_check("sin", [](auto& x) { return ad::sin(x); }, any));
  checks.push_back(detail::unary_check("cos", [](auto& x) { return ad::cos(x); }, any));
  checks.push_back(detail::unary_check("sqrt", [](auto& x) { return ad::sqrt(x); }, pos));
  checks.push_back(detail::unary_check("sinc_sqrt", [](auto& x) { return ad::sinc_sqrt(x); }, pos));
  checks.push_back(detail::unary_check("cosc_sqrt", [](auto& x) { return ad::cosc_sqrt(x); }, pos));

  auto reduce_check = [&](const std::string& name, ad::ReduceOp op) {
    checks.push_back(OpCheck{name, [=](Rng& rng) {
      double e1 = max_grad_error(
          {{Shape{3, 4, 2}, any}},
          [op](Graph<double>& g, const std::vector<Tensor<double>>& in) {
            return detail::spread(g, ad::reduce(op, in[0], {1}));
          },
          rng);
      double e2 = max_grad_error(
          {{Shape{3, 4, 2}, any}},
          [op](Graph<double>& g, const std::vector<Tensor<double>>& in) {
            return ad::reduce(op, in[0], {0, 1, 2});
          },
          rng);
      return std::max(e1, e2);
    }});
  };
  reduce_check("reduce_sum", ad::ReduceOp::sum);
  reduce_check("reduce_mean", ad::ReduceOp::mean);
  reduce_check("reduce_min", ad::ReduceOp::min);
  reduce_check("reduce_max", ad::ReduceOp::max);

  checks.push_back(OpCheck{"matmul", [any](Rng& rng) {
    return max_grad_error(
        {{Shape{4, 5}, any}, {Shape{5, 3}, any}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return detail::spread(g, ad::matmul(in[0], in[1]));
        },
        rng);
  }});

  checks.push_back(OpCheck{"conv2d", [any](Rng& rng) {
    double worst = 0;
    for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 0}}) {
      int s = stride, p = pad;
      worst = std::max(worst, max_grad_error(
          {{Shape{1, 2, 5, 5}, any}, {Shape{3, 2, 3, 3}, any}},
          [s, p](Graph<double>& g, const std::vector<Tensor<double>>& in) {
            return detail::spread(g, ad::conv2d(in[0], in[1], s, p));
          },
          rng));
    }
    return worst;
  }});

  checks.push_back(OpCheck{"grid_sample_bilinear", [](Rng& rng) {
    auto img_fill = gradcheck::uniform_fill(0.0, 1.0);
    // Generic interior points, well away from the integer-lattice kinks.
    auto coord_fill = [](Rng& r) {
      double v = r.uniform(0.55, 3.45);
      while (std::abs(v - std::round(v)) < 0.08) v = r.uniform(0.55, 3.45);
      return v;
    };
    return max_grad_error(
        {{Shape{1, 2, 5, 5}, img_fill}, {Shape{1, 3, 3, 2}, coord_fill}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          auto res = ad::grid_sample_bilinear(in[0], in[1]);
          return detail::spread(g, res.output);
        },
        rng, 1e-6);
  }});

  checks.push_back(OpCheck{"slice_concat", [any](Rng& rng) {
    return max_grad_error(
        {{Shape{2, 6}, any}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          auto a = ad::slice(in[0], 1, 0, 2);
          auto b = ad::slice(in[0], 1, 2, 4);
          return detail::spread(g, ad::concat<double>({b, a, a}, 1));
        },
        rng);
  }});

  checks.push_back(OpCheck{"reshape_transpose", [any](Rng& rng) {
    return max_grad_error(
        {{Shape{3, 4}, any}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return detail::spread(g, ad::transpose(ad::reshape(in[0], {4, 3})));
        },
        rng);
  }});

  checks.push_back(OpCheck{"upsample_nearest2", [any](Rng& rng) {
    return max_grad_error(
        {{Shape{1, 2, 3, 3}, any}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          return detail::spread(g, ad::upsample_nearest2(in[0]));
        },
        rng);
  }});

  // Composite graph: conv -> bilinear sample -> mean.
  checks.push_back(OpCheck{"composite_conv_sample_mean", [](Rng& rng) {
    auto coord_fill = [](Rng& r) {
      double v = r.uniform(0.55, 2.45);
      while (std::abs(v - std::round(v)) < 0.08) v = r.uniform(0.55, 2.45);
      return v;
    };
    return max_grad_error(
        {{Shape{1, 2, 5, 5}, gradcheck::uniform_fill(0.0, 1.0)},
         {Shape{2, 2, 3, 3}, gradcheck::uniform_fill(-0.5, 0.5)},
         {Shape{1, 3, 3, 2}, coord_fill}},
        [](Graph<double>& g, const std::vector<Tensor<double>>& in) {
          auto feat = ad::sigmoid(ad::conv2d(in[0], in[1], 1, 1));
          auto res = ad::grid_sample_bilinear(feat, in[2]);
          return ad::mean_all(res.output);
        },
        rng, 1e-6);
  }});

  return checks;
}

inline std::vector<Report> run_checks(const std::vector<OpCheck>& checks, double tol,
                                      int instances, uint64_t seed) {
  std::vector<Report> reports;
  for (const auto& c : checks) {
    Rng rng(seed ^ std::hash<std::string>{}(c.name));
    Report r{c.name, instances, 0.0, true};
    for (int i = 0; i < instances; ++i)
      r.max_err = std::max(r.max_err, c.run_once(rng));
    r.pass = r.max_err < tol;
    reports.push_back(r);
  }
  return reports;
}

}  // namespace mpnerf::gradcheck
