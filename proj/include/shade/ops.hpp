#pragma once

#include <vector>

#include "shade/tensor.hpp"

namespace shade {

// Differentiable forward ops. Each records a graph node when grad mode is on
// and any input requires a gradient. Shape conventions: feature maps are
// (N, C, h, w) row-major, class scores (N, K) or (N, K, h, w).

Tensor add(const Tensor& a, const Tensor& b);                  // same shape
Tensor mul(const Tensor& a, const Tensor& b);                  // same shape
Tensor scalar_affine(const Tensor& x, double mul, double add); // mul*x + add
Tensor sub(const Tensor& a, const Tensor& b);                  // add(a, -1*b)
Tensor matmul(const Tensor& a, const Tensor& b);               // (m,k)x(k,n)
Tensor add_bias(const Tensor& x, const Tensor& b);             // b along axis 1

// 2-D convolution with zero padding. x (N,Cin,H,W), w (Cout,Cin,kh,kw),
// bias (Cout). Output height = (H + 2*pad - kh)/stride + 1 (floored).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor relu(const Tensor& x);
Tensor channel_mean(const Tensor& x);               // (N,C,h,w) -> (N,C)
Tensor channel_std(const Tensor& x, double eps);    // sqrt(population var + eps)
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);  // scale/shift (N,C)
Tensor global_avg_pool(const Tensor& x);            // (N,C,h,w) -> (N,C)
Tensor softmax_classes(const Tensor& x);            // softmax over axis 1
Tensor log_floor(const Tensor& x, double floor = 0.0);  // ln(max(x, floor))
Tensor square(const Tensor& x);
Tensor mean_all(const Tensor& x);                   // -> scalar
Tensor sum_all(const Tensor& x);                    // -> scalar

// Weighted mean sum(x*mask)/sum(mask); an all-zero mask yields 0. The mask
// never carries gradient.
Tensor masked_mean(const Tensor& x, const Tensor& mask);

// Label-plane downsampling by integer factor (top-left sample); has no
// gradient and rejects inputs that require one.
Tensor nearest_downsample(const Tensor& x, int factor);
std::vector<int> downsample_labels(const std::vector<int>& labels, int n, int h, int w, int factor);

}  // namespace shade
