#pragma once

// The five training objectives and their weighted combination. All take graph
// tensors in [1,C,H,W] layout and return scalar tensors, so gradients reach
// images, disparities, densities and poses alike.

#include <vector>

#include "mpnerf/geometry.hpp"
#include "mpnerf/linops.hpp"
#include "mpnerf/sampling.hpp"
#include "mpnerf/tensor.hpp"

namespace mpnerf::loss {

struct LossWeights {
  double l1 = 1.0;
  double ssim = 1.0;
  double smooth = 1.0;
  double consist = 0.01;
  double reproj = 1.0;

  void validate() const {
    for (double w : {l1, ssim, smooth, consist, reproj})
      if (!(w >= 0)) throw InvariantError("loss weights must be nonnegative");
  }
};

// Scalar values of one training step, for logging.
struct LossReport {
  double l1 = 0, ssim = 0, smooth = 0, consist = 0, reproj = 0;
  double total = 0;
};

// Mean absolute error over all pixels and channels.
template <class T>
ad::Tensor<T> l1_rgb(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt) {
  if (pred.shape != gt.shape) throw InvariantError("l1_rgb: shape mismatch");
  return ad::mean_all(ad::abs(ad::sub(pred, gt)));
}

namespace detail {

// 3x3 uniform box filter applied per channel by folding channels into the
// batch dimension; valid windows only (no padding).
template <class T>
ad::Tensor<T> box3(const ad::Tensor<T>& x) {
  ad::Graph<T>& g = *x.g;
  const int c = x.shape[1], h = x.shape[2], w = x.shape[3];
  auto as_batch = ad::reshape(x, {c, 1, h, w});
  auto kernel = g.constant({1, 1, 3, 3}, T(1) / T(9));
  auto filtered = ad::conv2d(as_batch, kernel, 1, 0);  // [c,1,h-2,w-2]
  return ad::reshape(filtered, {1, c, h - 2, w - 2});
}

template <class T>
ad::Tensor<T> clamp01_to_2(const ad::Tensor<T>& x) {
  // clip to [0, 2] while staying differentiable inside the range
  ad::Graph<T>& g = *x.g;
  auto low = ad::clamp_min(x, T(0));
  return ad::sub(g.scalar(T(2)), ad::clamp_min(ad::sub(g.scalar(T(2)), low), T(0)));
}

// Forward difference along the last (true) or second-to-last (false) axis.
template <class T>
ad::Tensor<T> fdiff(const ad::Tensor<T>& x, bool along_x) {
  const int h = x.shape[2], w = x.shape[3];
  if (along_x)
    return ad::sub(ad::slice(x, 3, 1, w - 1), ad::slice(x, 3, 0, w - 1));
  return ad::sub(ad::slice(x, 2, 1, h - 1), ad::slice(x, 2, 0, h - 1));
}

}  // namespace detail

// 1 - mean SSIM with 3x3 uniform windows, C1 = 0.01^2, C2 = 0.03^2, computed
// per channel and averaged.
template <class T>
ad::Tensor<T> ssim_loss(const ad::Tensor<T>& pred, const ad::Tensor<T>& gt) {
  if (pred.shape != gt.shape) throw InvariantError("ssim_loss: shape mismatch");
  if (pred.shape[2] < 3 || pred.shape[3] < 3)
    throw InvariantError("ssim_loss: images smaller than the 3x3 window");
  ad::Graph<T>& g = *pred.g;
  const T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  auto mu_x = detail::box3(pred);
  auto mu_y = detail::box3(gt);
  auto mu_xx = detail::box3(ad::mul(pred, pred));
  auto mu_yy = detail::box3(ad::mul(gt, gt));
  auto mu_xy = detail::box3(ad::mul(pred, gt));
  auto var_x = ad::sub(mu_xx, ad::mul(mu_x, mu_x));
  auto var_y = ad::sub(mu_yy, ad::mul(mu_y, mu_y));
  auto cov = ad::sub(mu_xy, ad::mul(mu_x, mu_y));
  auto num = ad::mul(ad::add(ad::mul(g.scalar(T(2)), ad::mul(mu_x, mu_y)), g.scalar(c1)),
                     ad::add(ad::mul(g.scalar(T(2)), cov), g.scalar(c2)));
  auto den = ad::mul(ad::add(ad::add(ad::mul(mu_x, mu_x), ad::mul(mu_y, mu_y)), g.scalar(c1)),
                     ad::add(ad::add(var_x, var_y), g.scalar(c2)));
  auto ssim = ad::div(num, den);
  return detail::clamp01_to_2(ad::sub(g.scalar(T(1)), ad::mean_all(ssim)));
}

// Edge-aware smoothness of the rendered disparity, self-normalized by its
// mean; forward differences, image gradient magnitude averaged over channels.
template <class T>
ad::Tensor<T> smoothness(const ad::Tensor<T>& disp, const ad::Tensor<T>& image) {
  if (disp.shape.size() != 4 || disp.shape[1] != 1)
    throw InvariantError("smoothness: disparity must be [1,1,H,W]");
  if (image.shape[2] != disp.shape[2] || image.shape[3] != disp.shape[3])
    throw InvariantError("smoothness: image/disparity size mismatch");
  auto m = ad::mean_all(disp);
  if (m.item() == T(0)) throw NumericError("smoothness: zero-mean disparity");
  auto dn = ad::div(disp, m);  // broadcast over the scalar mean
  auto wx = ad::exp(ad::neg(ad::mean(ad::abs(detail::fdiff(image, true)), {1})));
  auto wy = ad::exp(ad::neg(ad::mean(ad::abs(detail::fdiff(image, false)), {1})));
  auto tx = ad::mul(ad::reshape(ad::abs(detail::fdiff(dn, true)),
                                {disp.shape[2], disp.shape[3] - 1}),
                    ad::reshape(wx, {disp.shape[2], disp.shape[3] - 1}));
  auto ty = ad::mul(ad::reshape(ad::abs(detail::fdiff(dn, false)),
                                {disp.shape[2] - 1, disp.shape[3]}),
                    ad::reshape(wy, {disp.shape[2] - 1, disp.shape[3]}));
  return ad::add(ad::mean_all(tx), ad::mean_all(ty));
}

// Mean absolute depth (reciprocal-disparity) difference; couples the
// monocular depth scale to the field's scale.
template <class T>
ad::Tensor<T> depth_consistency(const ad::Tensor<T>& disp_a, const ad::Tensor<T>& disp_b) {
  if (disp_a.shape != disp_b.shape) throw InvariantError("depth_consistency: shape mismatch");
  for (const auto* d : {&disp_a, &disp_b})
    for (T v : d->values())
      if (!(v > T(0))) throw NumericError("depth_consistency: nonpositive disparity");
  ad::Graph<T>& g = *disp_a.g;
  auto one = g.scalar(T(1));
  return ad::mean_all(ad::abs(ad::sub(ad::div(one, disp_a), ad::div(one, disp_b))));
}

// Photometric reprojection: warp I_t into the source view through the
// predicted depth and pose, mean |I_s - I_{t->s}| over valid pixels.
template <class T>
ad::Tensor<T> reprojection(const ad::Tensor<T>& frame_s, const ad::Tensor<T>& frame_t,
                           const ad::Tensor<T>& disp_s, const geo::PoseT<T>& t_src_to_tgt,
                           const geo::Intrinsics& k) {
  if (frame_s.shape != frame_t.shape) throw InvariantError("reprojection: frame shape mismatch");
  for (T v : disp_s.values())
    if (!(v > T(0))) throw NumericError("reprojection: nonpositive disparity");
  ad::Graph<T>& g = *frame_s.g;
  auto depth = ad::div(g.scalar(T(1)), disp_s);
  auto grid = geo::reproject_ad(depth, t_src_to_tgt, k, k);
  auto sampled = ad::grid_sample_bilinear(frame_t, grid.coords);
  auto mask = ad::mul(grid.mask, sampled.mask);  // constant [1,1,H,W]
  T count = 0;
  for (T v : mask.values()) count += v;
  if (count == T(0)) throw NumericError("reprojection: empty valid mask");
  auto abs_err = ad::abs(ad::sub(frame_s, sampled.output));
  auto masked = ad::mul(abs_err, mask);
  return ad::div(ad::sum_all(masked), g.scalar(T(3) * count));
}

// One target frame's view-dependent terms.
template <class T>
struct TargetTerms {
  ad::Tensor<T> l1, ssim, reproj;
};

// Eq. 13: per-target terms averaged over targets, source-view terms added
// once, all weighted.
template <class T>
ad::Tensor<T> total(const std::vector<TargetTerms<T>>& targets, const ad::Tensor<T>& smooth,
                    const ad::Tensor<T>& consist, const LossWeights& w, LossReport* report) {
  if (targets.empty()) throw InvariantError("total: no target frames");
  w.validate();
  ad::Graph<T>& g = *smooth.g;
  auto l1 = g.scalar(T(0)), ss = g.scalar(T(0)), rp = g.scalar(T(0));
  for (const auto& t : targets) {
    l1 = ad::add(l1, t.l1);
    ss = ad::add(ss, t.ssim);
    rp = ad::add(rp, t.reproj);
  }
  auto inv_n = g.scalar(T(1) / T(targets.size()));
  l1 = ad::mul(l1, inv_n);
  ss = ad::mul(ss, inv_n);
  rp = ad::mul(rp, inv_n);
  auto out = ad::add(
      ad::add(ad::mul(l1, g.scalar(static_cast<T>(w.l1))),
              ad::mul(ss, g.scalar(static_cast<T>(w.ssim)))),
      ad::add(ad::add(ad::mul(smooth, g.scalar(static_cast<T>(w.smooth))),
                      ad::mul(consist, g.scalar(static_cast<T>(w.consist)))),
              ad::mul(rp, g.scalar(static_cast<T>(w.reproj)))));
  if (report) {
    report->l1 = static_cast<double>(l1.item());
    report->ssim = static_cast<double>(ss.item());
    report->smooth = static_cast<double>(smooth.item());
    report->consist = static_cast<double>(consist.item());
    report->reproj = static_cast<double>(rp.item());
    report->total = static_cast<double>(out.item());
  }
  return out;
}

}  // namespace mpnerf::loss
