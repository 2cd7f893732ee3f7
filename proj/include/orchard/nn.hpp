#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orchard/rng.hpp"

namespace orchard::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) { data.assign(numel(), 0.f); }

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return shape.empty() ? 0 : n;
  }
  void zero() { std::fill(data.begin(), data.end(), 0.f); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
};

// Row-major sgemm: C = alpha * op(A) * op(B) + beta * C.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
           const float* b, int ldb, float beta, float* c, int ldc);

struct Param {
  Tensor value;
  Tensor grad;
  Tensor momentum;
  std::string name;
  bool is_conv = false;

  void init_shape(std::vector<int> s, std::string n, bool conv) {
    value = Tensor(s);
    grad = Tensor(s);
    momentum = Tensor(std::move(s));
    name = std::move(n);
    is_conv = conv;
  }
};

struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
  Param weight;  // [out_ch, in_ch*k*k]
  Param bias;    // [out_ch]

  void init(int in_c, int out_c, int k, int s, int p, const std::string& name);
  void out_size(int h, int w, int& oh, int& ow) const;
  // x: [N,in_ch,H,W] -> y: [N,out_ch,OH,OW]; col_ws is scratch for one image.
  void forward(const Tensor& x, Tensor& y, std::vector<float>& col_ws) const;
  // Accumulates weight/bias grads; writes dx unless dx == nullptr (first layer).
  void backward(const Tensor& x, const Tensor& dy, Tensor* dx, std::vector<float>& col_ws);
};

struct MaxPool {
  int ksize = 3, stride = 2;
  void out_size(int h, int w, int& oh, int& ow) const;
  void forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) const;
  void backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx) const;
};

struct Linear {
  int in_features = 0, out_features = 0;
  Param weight;  // [out, in]
  Param bias;    // [out]

  void init(int in_f, int out_f, const std::string& name);
  // x: [N, in] -> y: [N, out]
  void forward(const Tensor& x, Tensor& y) const;
  void backward(const Tensor& x, const Tensor& dy, Tensor* dx);
};

void relu_forward(Tensor& x);
void relu_backward(const Tensor& y, Tensor& dy);  // y is post-activation

// Inverted dropout; mask entries are 0 or 1/(1-p).
void dropout_forward(Tensor& x, float p, Rng& rng, std::vector<float>& mask);
void dropout_backward(Tensor& dy, const std::vector<float>& mask);

// Softmax over the last dim of logits [N, C]; probs output optional.
// Returns mean cross-entropy; fills dlogits = (softmax - onehot)/N when given.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs,
                             Tensor* dlogits);

void softmax_rows(const Tensor& logits, Tensor& probs);

}  // namespace orchard::nn
