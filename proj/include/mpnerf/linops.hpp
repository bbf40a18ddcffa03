#pragma once

// Dense linear-algebra ops on graph tensors: matmul and conv2d.
// Eigen does the heavy lifting; conv2d goes through im2col.

#include <Eigen/Dense>

#include "mpnerf/tensor.hpp"

namespace mpnerf::ad {

namespace detail {
template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;
}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw InvariantError("matmul: expects 2-D operands");
  if (a.shape[1] != b.shape[0])
    throw InvariantError("matmul: inner dims differ " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<T> y(static_cast<size_t>(m) * n);
  {
    detail::CMapM<T> A(a.values().data(), m, k), B(b.values().data(), k, n);
    detail::MapM<T> Y(y.data(), m, n);
    Y.noalias() = A * B;
  }
  int aid = a.id, bid = b.id;
  return a.g->make_node({m, n}, std::move(y), {a.id, b.id},
                        [=](Graph<T>& gr, int self) {
    detail::CMapM<T> G(gr.grad_buf(self).data(), m, n);
    detail::CMapM<T> A(gr.values(aid).data(), m, k);
    detail::CMapM<T> B(gr.values(bid).data(), k, n);
    if (gr.requires_grad(aid)) {
      detail::MapM<T> GA(gr.grad_buf(aid).data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (gr.requires_grad(bid)) {
      detail::MapM<T> GB(gr.grad_buf(bid).data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

namespace detail {

// col is [C*kh*kw, Ho*Wo] for one batch item.
template <class T>
void im2col(const T* img, int C, int H, int W, int kh, int kw, int stride,
            int pad, int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = col + ((static_cast<long>(c) * kh + ki) * kw + kj) *
                           (static_cast<long>(Ho) * Wo);
        for (int oi = 0; oi < Ho; ++oi) {
          int ii = oi * stride + ki - pad;
          for (int oj = 0; oj < Wo; ++oj) {
            int jj = oj * stride + kj - pad;
            dst[static_cast<long>(oi) * Wo + oj] =
                (ii >= 0 && ii < H && jj >= 0 && jj < W)
                    ? img[(static_cast<long>(c) * H + ii) * W + jj]
                    : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int Ho, int Wo, T* img) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = col + ((static_cast<long>(c) * kh + ki) * kw + kj) *
                                 (static_cast<long>(Ho) * Wo);
        for (int oi = 0; oi < Ho; ++oi) {
          int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= H) continue;
          for (int oj = 0; oj < Wo; ++oj) {
            int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= W) continue;
            img[(static_cast<long>(c) * H + ii) * W + jj] +=
                src[static_cast<long>(oi) * Wo + oj];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation: input [B,C,H,W], kernel [O,C,kh,kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride,
                 int pad) {
  if (input.shape.size() != 4 || kernel.shape.size() != 4)
    throw InvariantError("conv2d: expects 4-D input and kernel");
  const int B = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
  const int O = kernel.shape[0], KC = kernel.shape[1], kh = kernel.shape[2], kw = kernel.shape[3];
  if (KC != C) throw InvariantError("conv2d: channel mismatch");
  if (stride < 1 || pad < 0 || kh > H + 2 * pad || kw > W + 2 * pad)
    throw InvariantError("conv2d: invalid geometry");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const long K = static_cast<long>(C) * kh * kw;
  const long P = static_cast<long>(Ho) * Wo;

  std::vector<T> y(static_cast<long>(B) * O * P);
  {
    std::vector<T> col(K * P);
    detail::CMapM<T> Kmat(kernel.values().data(), O, K);
    for (int b = 0; b < B; ++b) {
      detail::im2col(input.values().data() + static_cast<long>(b) * C * H * W,
                     C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
      detail::CMapM<T> Col(col.data(), K, P);
      detail::MapM<T> Y(y.data() + static_cast<long>(b) * O * P, O, P);
      Y.noalias() = Kmat * Col;
    }
  }
  int iid = input.id, kid = kernel.id;
  return input.g->make_node({B, O, Ho, Wo}, std::move(y), {input.id, kernel.id},
                            [=](Graph<T>& gr, int self) {
    const auto& go = gr.grad_buf(self);
    bool need_in = gr.requires_grad(iid), need_k = gr.requires_grad(kid);
    std::vector<T> col(K * P), gcol(K * P);
    detail::CMapM<T> Kmat(gr.values(kid).data(), O, K);
    for (int b = 0; b < B; ++b) {
      detail::CMapM<T> G(go.data() + static_cast<long>(b) * O * P, O, P);
      if (need_k) {
        detail::im2col(gr.values(iid).data() + static_cast<long>(b) * C * H * W,
                       C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        detail::CMapM<T> Col(col.data(), K, P);
        detail::MapM<T> GK(gr.grad_buf(kid).data(), O, K);
        GK.noalias() += G * Col.transpose();
      }
      if (need_in) {
        detail::MapM<T> GCol(gcol.data(), K, P);
        GCol.noalias() = Kmat.transpose() * G;
        detail::col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                           gr.grad_buf(iid).data() + static_cast<long>(b) * C * H * W);
      }
    }
  });
}

}  // namespace mpnerf::ad
