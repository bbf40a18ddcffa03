#pragma once

// Differentiable bilinear sampling. Coordinates are continuous pixel units
// (u along width, v along height); out-of-bounds lookups clamp to the border
// and are reported through a validity mask. Gradients flow to both the image
// and the coordinates.

#include <cmath>

#include "mpnerf/tensor.hpp"

namespace mpnerf::ad {

template <class T>
struct SampleResult {
  Tensor<T> output;  // [B,C,H',W']
  Tensor<T> mask;    // [B,1,H',W'], constant 0/1
};

template <class T>
SampleResult<T> grid_sample_bilinear(const Tensor<T>& image, const Tensor<T>& coords) {
  if (image.shape.size() != 4 || coords.shape.size() != 4 || coords.shape[3] != 2)
    throw InvariantError("grid_sample: expects image [B,C,H,W], coords [B,H',W',2]");
  const int B = image.shape[0], C = image.shape[1], H = image.shape[2], W = image.shape[3];
  if (coords.shape[0] != B) throw InvariantError("grid_sample: batch mismatch");
  const int Ho = coords.shape[1], Wo = coords.shape[2];
  const long P = static_cast<long>(Ho) * Wo;

  const auto& cv = coords.values();
  for (T v : cv)
    if (!std::isfinite(v)) throw NumericError("grid_sample: non-finite coordinate");

  Graph<T>& g = *image.g;
  std::vector<T> y(static_cast<long>(B) * C * P);
  std::vector<T> maskv(static_cast<long>(B) * P);
  const auto& iv = image.values();
  for (int b = 0; b < B; ++b) {
    for (long p = 0; p < P; ++p) {
      T u = cv[(b * P + p) * 2 + 0];
      T v = cv[(b * P + p) * 2 + 1];
      maskv[b * P + p] =
          (u >= T(0) && u <= T(W - 1) && v >= T(0) && v <= T(H - 1)) ? T(1) : T(0);
      T uc = std::min(std::max(u, T(0)), T(W - 1));
      T vc = std::min(std::max(v, T(0)), T(H - 1));
      int j0 = std::min(static_cast<int>(uc), W - 2 >= 0 ? W - 2 : 0);
      int i0 = std::min(static_cast<int>(vc), H - 2 >= 0 ? H - 2 : 0);
      T fu = uc - T(j0), fv = vc - T(i0);
      for (int c = 0; c < C; ++c) {
        const T* img = &iv[(static_cast<long>(b) * C + c) * H * W];
        T v00 = img[static_cast<long>(i0) * W + j0];
        T v01 = img[static_cast<long>(i0) * W + std::min(j0 + 1, W - 1)];
        T v10 = img[static_cast<long>(std::min(i0 + 1, H - 1)) * W + j0];
        T v11 = img[static_cast<long>(std::min(i0 + 1, H - 1)) * W + std::min(j0 + 1, W - 1)];
        y[(static_cast<long>(b) * C + c) * P + p] =
            (T(1) - fv) * ((T(1) - fu) * v00 + fu * v01) +
            fv * ((T(1) - fu) * v10 + fu * v11);
      }
    }
  }

  int iid = image.id, cid = coords.id;
  Tensor<T> out = g.make_node(
      {B, C, Ho, Wo}, std::move(y), {image.id, coords.id},
      [=](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& cvv = gr.values(cid);
        const auto& ivv = gr.values(iid);
        bool need_img = gr.requires_grad(iid), need_crd = gr.requires_grad(cid);
        std::vector<T>* gi = need_img ? &gr.grad_buf(iid) : nullptr;
        std::vector<T>* gc = need_crd ? &gr.grad_buf(cid) : nullptr;
        for (int b = 0; b < B; ++b) {
          for (long p = 0; p < P; ++p) {
            T u = cvv[(b * P + p) * 2 + 0];
            T v = cvv[(b * P + p) * 2 + 1];
            T uc = std::min(std::max(u, T(0)), T(W - 1));
            T vc = std::min(std::max(v, T(0)), T(H - 1));
            int j0 = std::min(static_cast<int>(uc), W - 2 >= 0 ? W - 2 : 0);
            int i0 = std::min(static_cast<int>(vc), H - 2 >= 0 ? H - 2 : 0);
            int j1 = std::min(j0 + 1, W - 1), i1 = std::min(i0 + 1, H - 1);
            T fu = uc - T(j0), fv = vc - T(i0);
            // Border clamp saturates: coordinate gradient vanishes outside.
            bool du_live = u > T(0) && u < T(W - 1);
            bool dv_live = v > T(0) && v < T(H - 1);
            T du = 0, dv = 0;
            for (int c = 0; c < C; ++c) {
              T gout = go[(static_cast<long>(b) * C + c) * P + p];
              if (gout == T(0)) continue;
              const T* img = &ivv[(static_cast<long>(b) * C + c) * H * W];
              T v00 = img[static_cast<long>(i0) * W + j0];
              T v01 = img[static_cast<long>(i0) * W + j1];
              T v10 = img[static_cast<long>(i1) * W + j0];
              T v11 = img[static_cast<long>(i1) * W + j1];
              if (gi) {
                T* gimg = &(*gi)[(static_cast<long>(b) * C + c) * H * W];
                gimg[static_cast<long>(i0) * W + j0] += gout * (T(1) - fv) * (T(1) - fu);
                gimg[static_cast<long>(i0) * W + j1] += gout * (T(1) - fv) * fu;
                gimg[static_cast<long>(i1) * W + j0] += gout * fv * (T(1) - fu);
                gimg[static_cast<long>(i1) * W + j1] += gout * fv * fu;
              }
              if (gc) {
                du += gout * ((T(1) - fv) * (v01 - v00) + fv * (v11 - v10));
                dv += gout * ((T(1) - fu) * (v10 - v00) + fu * (v11 - v01));
              }
            }
            if (gc) {
              (*gc)[(b * P + p) * 2 + 0] += du_live ? du : T(0);
              (*gc)[(b * P + p) * 2 + 1] += dv_live ? dv : T(0);
            }
          }
        }
      });
  Tensor<T> mask = g.leaf({B, 1, Ho, Wo}, std::move(maskv), false);
  return {out, mask};
}

}  // namespace mpnerf::ad
