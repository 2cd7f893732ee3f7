#include "orchard/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <cblas.h>

#include "orchard/errors.hpp"

namespace orchard::nn {

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

// im2col for one image: x [C,H,W] -> col [C*k*k, OH*OW]
void im2col(const float* x, int ch, int h, int w, int k, int stride, int pad, int oh, int ow,
            float* col) {
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                               (static_cast<std::size_t>(oh) * ow);
        const float* src_plane = x + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::memset(dst + static_cast<std::size_t>(y) * ow, 0, sizeof(float) * ow);
            continue;
          }
          const float* src_row = src_plane + static_cast<std::size_t>(iy) * w;
          float* drow = dst + static_cast<std::size_t>(y) * ow;
          int x0 = 0;
          // leading columns that fall in padding
          for (; x0 < ow; ++x0) {
            int ix = x0 * stride + kx - pad;
            if (ix >= 0) break;
            drow[x0] = 0.f;
          }
          if (stride == 1) {
            int ix = x0 + kx - pad;
            int run = std::min(ow - x0, w - ix);
            if (run > 0) std::memcpy(drow + x0, src_row + ix, sizeof(float) * run);
            for (int xx = x0 + std::max(0, run); xx < ow; ++xx) drow[xx] = 0.f;
          } else {
            for (int xx = x0; xx < ow; ++xx) {
              int ix = xx * stride + kx - pad;
              drow[xx] = (ix < w) ? src_row[ix] : 0.f;
            }
          }
        }
      }
    }
  }
}

// col [C*k*k, OH*OW] scattered back into dx [C,H,W] (+=)
void col2im(const float* col, int ch, int h, int w, int k, int stride, int pad, int oh, int ow,
            float* dx) {
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                                     (static_cast<std::size_t>(oh) * ow);
        float* dst_plane = dx + static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < oh; ++y) {
          int iy = y * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          float* drow = dst_plane + static_cast<std::size_t>(iy) * w;
          const float* srow = src + static_cast<std::size_t>(y) * ow;
          for (int x = 0; x < ow; ++x) {
            int ix = x * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[x];
          }
        }
      }
    }
  }
}

}  // namespace

void Conv2d::init(int in_c, int out_c, int k, int s, int p, const std::string& name) {
  in_ch = in_c;
  out_ch = out_c;
  ksize = k;
  stride = s;
  pad = p;
  weight.init_shape({out_c, in_c * k * k}, name + ".weight", true);
  bias.init_shape({out_c}, name + ".bias", true);
}

void Conv2d::out_size(int h, int w, int& oh, int& ow) const {
  oh = (h + 2 * pad - ksize) / stride + 1;
  ow = (w + 2 * pad - ksize) / stride + 1;
}

void Conv2d::forward(const Tensor& x, Tensor& y, std::vector<float>& col_ws) const {
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  int oh, ow;
  out_size(h, w, oh, ow);
  y.shape = {n, out_ch, oh, ow};
  y.data.resize(y.numel());
  const std::size_t kk = static_cast<std::size_t>(in_ch) * ksize * ksize;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  col_ws.resize(kk * ohw);
  const std::size_t in_stride = static_cast<std::size_t>(in_ch) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch) * ohw;
  for (int i = 0; i < n; ++i) {
    im2col(x.ptr() + i * in_stride, in_ch, h, w, ksize, stride, pad, oh, ow, col_ws.data());
    float* yi = y.ptr() + i * out_stride;
    sgemm(false, false, out_ch, static_cast<int>(ohw), static_cast<int>(kk), 1.f,
          weight.value.ptr(), static_cast<int>(kk), col_ws.data(), static_cast<int>(ohw), 0.f, yi,
          static_cast<int>(ohw));
    for (int c = 0; c < out_ch; ++c) {
      const float b = bias.value.data[c];
      float* row = yi + c * ohw;
      for (std::size_t j = 0; j < ohw; ++j) row[j] += b;
    }
  }
}

void Conv2d::backward(const Tensor& x, const Tensor& dy, Tensor* dx, std::vector<float>& col_ws) {
  const int n = x.shape[0], h = x.shape[2], w = x.shape[3];
  int oh, ow;
  out_size(h, w, oh, ow);
  const std::size_t kk = static_cast<std::size_t>(in_ch) * ksize * ksize;
  const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
  col_ws.resize(kk * ohw);
  std::vector<float> dcol(dx ? kk * ohw : 0);
  if (dx) {
    dx->shape = x.shape;
    dx->data.assign(x.numel(), 0.f);
  }
  const std::size_t in_stride = static_cast<std::size_t>(in_ch) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch) * ohw;
  for (int i = 0; i < n; ++i) {
    const float* dyi = dy.ptr() + i * out_stride;
    im2col(x.ptr() + i * in_stride, in_ch, h, w, ksize, stride, pad, oh, ow, col_ws.data());
    // dW += dY_i * col_i^T
    sgemm(false, true, out_ch, static_cast<int>(kk), static_cast<int>(ohw), 1.f, dyi,
          static_cast<int>(ohw), col_ws.data(), static_cast<int>(ohw), 1.f, weight.grad.ptr(),
          static_cast<int>(kk));
    for (int c = 0; c < out_ch; ++c) {
      const float* row = dyi + c * ohw;
      double s = 0;
      for (std::size_t j = 0; j < ohw; ++j) s += row[j];
      bias.grad.data[c] += static_cast<float>(s);
    }
    if (dx) {
      // dcol = W^T * dY_i
      sgemm(true, false, static_cast<int>(kk), static_cast<int>(ohw), out_ch, 1.f,
            weight.value.ptr(), static_cast<int>(kk), dyi, static_cast<int>(ohw), 0.f, dcol.data(),
            static_cast<int>(ohw));
      col2im(dcol.data(), in_ch, h, w, ksize, stride, pad, oh, ow, dx->ptr() + i * in_stride);
    }
  }
}

void MaxPool::out_size(int h, int w, int& oh, int& ow) const {
  oh = (h - ksize) / stride + 1;
  ow = (w - ksize) / stride + 1;
}

void MaxPool::forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) const {
  const int n = x.shape[0], ch = x.shape[1], h = x.shape[2], w = x.shape[3];
  int oh, ow;
  out_size(h, w, oh, ow);
  y.shape = {n, ch, oh, ow};
  y.data.resize(y.numel());
  argmax.resize(y.numel());
  std::size_t o = 0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) {
      const float* plane = x.ptr() + (static_cast<std::size_t>(i) * ch + c) * h * w;
      for (int py = 0; py < oh; ++py)
        for (int px = 0; px < ow; ++px, ++o) {
          int y0 = py * stride, x0 = px * stride;
          float best = plane[y0 * w + x0];
          int besti = y0 * w + x0;
          for (int ky = 0; ky < ksize; ++ky)
            for (int kx = 0; kx < ksize; ++kx) {
              int idx = (y0 + ky) * w + (x0 + kx);
              if (plane[idx] > best) {
                best = plane[idx];
                besti = idx;
              }
            }
          y.data[o] = best;
          argmax[o] = besti;
        }
    }
}

void MaxPool::backward(const Tensor& dy, const std::vector<std::int32_t>& argmax,
                       Tensor& dx) const {
  const int n = dy.shape[0], ch = dy.shape[1];
  const std::size_t ohw = static_cast<std::size_t>(dy.shape[2]) * dy.shape[3];
  const std::size_t hw = static_cast<std::size_t>(dx.shape[2]) * dx.shape[3];
  dx.data.assign(dx.numel(), 0.f);
  std::size_t o = 0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) {
      float* plane = dx.ptr() + (static_cast<std::size_t>(i) * ch + c) * hw;
      for (std::size_t j = 0; j < ohw; ++j, ++o) plane[argmax[o]] += dy.data[o];
    }
}

void Linear::init(int in_f, int out_f, const std::string& name) {
  in_features = in_f;
  out_features = out_f;
  weight.init_shape({out_f, in_f}, name + ".weight", false);
  bias.init_shape({out_f}, name + ".bias", false);
}

void Linear::forward(const Tensor& x, Tensor& y) const {
  const int n = x.shape[0];
  y.shape = {n, out_features};
  y.data.resize(y.numel());
  // Y = X * W^T
  sgemm(false, true, n, out_features, in_features, 1.f, x.ptr(), in_features, weight.value.ptr(),
        in_features, 0.f, y.ptr(), out_features);
  for (int i = 0; i < n; ++i) {
    float* row = y.ptr() + static_cast<std::size_t>(i) * out_features;
    for (int j = 0; j < out_features; ++j) row[j] += bias.value.data[j];
  }
}

void Linear::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
  const int n = x.shape[0];
  // dW += dY^T * X
  sgemm(true, false, out_features, in_features, n, 1.f, dy.ptr(), out_features, x.ptr(),
        in_features, 1.f, weight.grad.ptr(), in_features);
  for (int i = 0; i < n; ++i) {
    const float* row = dy.ptr() + static_cast<std::size_t>(i) * out_features;
    for (int j = 0; j < out_features; ++j) bias.grad.data[j] += row[j];
  }
  if (dx) {
    dx->shape = x.shape;
    dx->data.resize(x.numel());
    // dX = dY * W
    sgemm(false, false, n, in_features, out_features, 1.f, dy.ptr(), out_features,
          weight.value.ptr(), in_features, 0.f, dx->ptr(), in_features);
  }
}

void relu_forward(Tensor& x) {
  for (auto& v : x.data) v = v > 0.f ? v : 0.f;
}

void relu_backward(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < y.data.size(); ++i)
    if (y.data[i] <= 0.f) dy.data[i] = 0.f;
}

void dropout_forward(Tensor& x, float p, Rng& rng, std::vector<float>& mask) {
  mask.resize(x.data.size());
  const float keep_scale = 1.f / (1.f - p);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.f : keep_scale;
    x.data[i] *= mask[i];
  }
}

void dropout_backward(Tensor& dy, const std::vector<float>& mask) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= mask[i];
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
  const int n = logits.shape[0], c = logits.shape[1];
  probs.shape = logits.shape;
  probs.data.resize(logits.data.size());
  for (int i = 0; i < n; ++i) {
    const float* in = logits.ptr() + static_cast<std::size_t>(i) * c;
    float* out = probs.ptr() + static_cast<std::size_t>(i) * c;
    float mx = in[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(in[j] - mx));
    for (int j = 0; j < c; ++j)
      out[j] = static_cast<float>(std::exp(static_cast<double>(in[j] - mx)) / sum);
  }
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs,
                             Tensor* dlogits) {
  const int n = logits.shape[0], c = logits.shape[1];
  Tensor local;
  Tensor& p = probs ? *probs : local;
  softmax_rows(logits, p);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    float pv = p.data[static_cast<std::size_t>(i) * c + labels[i]];
    loss -= std::log(std::max(static_cast<double>(pv), 1e-30));
  }
  loss /= n;
  if (dlogits) {
    dlogits->shape = logits.shape;
    dlogits->data = p.data;
    const float inv_n = 1.f / n;
    for (int i = 0; i < n; ++i) {
      float* row = dlogits->ptr() + static_cast<std::size_t>(i) * c;
      row[labels[i]] -= 1.f;
      for (int j = 0; j < c; ++j) row[j] *= inv_n;
    }
  }
  return loss;
}

}  // namespace orchard::nn
