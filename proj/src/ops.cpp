#include "shade/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>

#include "gemm.hpp"

namespace shade {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw shape_error(std::string(op) + ": " + msg);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_inputs(const char* op, std::initializer_list<const Tensor*> xs) {
  if (!debug_checks()) return;
  for (const Tensor* x : xs) check_finite(*x, op);
}

Tensor make_result(std::vector<int> shape, std::vector<double> data, const char* op,
                   std::initializer_list<Tensor> parents,
                   std::function<void(const TensorImpl&)> bw) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  if (debug_checks()) check_finite(out, op);
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  if (rg && grad_enabled()) {
    auto node = std::make_shared<Node>();
    node->op = op;
    for (const Tensor& p : parents) node->inputs.push_back(p.impl());
    node->backward = std::move(bw);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}

// im2col for one image: x (C,H,W) -> col (C*kh*kw, OH*OW).
void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int OH, int OW, double* col) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < kh; ++r) {
      for (int q = 0; q < kw; ++q, ++row) {
        double* dst = col + static_cast<int64_t>(row) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + r;
          double* d = dst + static_cast<int64_t>(oh) * OW;
          if (ih < 0 || ih >= H) {
            std::fill(d, d + OW, 0.0);
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + q;
            d[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a col matrix back onto one image's gradient.
void col2im_acc(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW, double* gx) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < kh; ++r) {
      for (int q = 0; q < kw; ++q, ++row) {
        const double* src = col + static_cast<int64_t>(row) * OH * OW;
        for (int oh = 0; oh < OH; ++oh) {
          int ih = oh * stride - pad + r;
          if (ih < 0 || ih >= H) continue;
          double* dst = gx + (static_cast<int64_t>(c) * H + ih) * W;
          const double* s = src + static_cast<int64_t>(oh) * OW;
          for (int ow = 0; ow < OW; ++ow) {
            int iw = ow * stride - pad + q;
            if (iw >= 0 && iw < W) dst[iw] += s[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  check_inputs("add", {&a, &b});
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "add", {a, b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
    if (bi->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("multiply", a, b);
  check_inputs("multiply", {&a, &b});
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), "multiply", {a, b}, [ai, bi](const TensorImpl& o) {
    if (ai->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i] * bi->data[i];
    if (bi->requires_grad)
      for (size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i] * ai->data[i];
  });
}

Tensor scalar_affine(const Tensor& x, double m, double c) {
  check_inputs("scalar_affine", {&x});
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = m * xv[i] + c;
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), "scalar_affine", {x},
                     [xi, m](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += m * o.grad[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scalar_affine(b, -1.0, 0.0)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul", "expects rank-2 operands");
  require(a.dim(1) == b.dim(0), "matmul",
          "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  check_inputs("matmul", {&a, &b});
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  detail::gemm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({m, n}, std::move(out), "matmul", {a, b},
                     [ai, bi, m, k, n](const TensorImpl& o) {
                       if (ai->requires_grad)
                         detail::gemm_nt_acc(o.grad.data(), bi->data.data(), ai->grad.data(), m, n, k);
                       if (bi->requires_grad)
                         detail::gemm_tn_acc(ai->data.data(), o.grad.data(), bi->grad.data(), m, k, n);
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 2 || x.rank() == 4, "add_bias", "expects rank-2 or rank-4 input");
  require(b.rank() == 1 && b.dim(0) == x.dim(1), "add_bias",
          "bias length must match axis 1 of " + shape_str(x.shape()));
  check_inputs("add_bias", {&x, &b});
  int n = x.dim(0), c = x.dim(1);
  int64_t inner = x.numel() / (static_cast<int64_t>(n) * c);
  const auto& xv = x.data();
  const auto& bv = b.data();
  std::vector<double> out(xv.size());
  size_t idx = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double bj = bv[static_cast<size_t>(j)];
      for (int64_t t = 0; t < inner; ++t, ++idx) out[idx] = xv[idx] + bj;
    }
  ImplPtr xi = x.impl(), bi = b.impl();
  return make_result(x.shape(), std::move(out), "add_bias", {x, b},
                     [xi, bi, n, c, inner](const TensorImpl& o) {
                       if (xi->requires_grad)
                         for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i];
                       if (bi->requires_grad) {
                         size_t idx = 0;
                         for (int i = 0; i < n; ++i)
                           for (int j = 0; j < c; ++j) {
                             double acc = 0.0;
                             for (int64_t t = 0; t < inner; ++t, ++idx) acc += o.grad[idx];
                             bi->grad[static_cast<size_t>(j)] += acc;
                           }
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  require(x.rank() == 4, "conv2d", "input must be (N,C,H,W)");
  require(w.rank() == 4, "conv2d", "kernel must be (Cout,Cin,kh,kw)");
  require(bias.rank() == 1 && bias.dim(0) == w.dim(0), "conv2d", "bias must be (Cout)");
  require(x.dim(1) == w.dim(1), "conv2d",
          "channel mismatch: input " + shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
  require(stride >= 1 && pad >= 0, "conv2d", "stride must be >= 1 and pad >= 0");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d", "kernel larger than padded input");
  int OH = (H + 2 * pad - kh) / stride + 1;
  int OW = (W + 2 * pad - kw) / stride + 1;
  check_inputs("conv2d", {&x, &w, &bias});

  int ckk = C * kh * kw;
  int64_t ohw = static_cast<int64_t>(OH) * OW;
  std::vector<double> col(static_cast<size_t>(ckk) * ohw);
  std::vector<double> out(static_cast<size_t>(N) * Cout * ohw);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  const double* bd = bias.data().data();
  for (int n = 0; n < N; ++n) {
    im2col(xd + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
           col.data());
    double* on = out.data() + static_cast<int64_t>(n) * Cout * ohw;
    for (int co = 0; co < Cout; ++co)
      std::fill(on + co * ohw, on + (co + 1) * ohw, bd[static_cast<size_t>(co)]);
    detail::gemm_nn_acc(wd, col.data(), on, Cout, ckk, static_cast<int>(ohw));
  }

  ImplPtr xi = x.impl(), wi = w.impl(), bi = bias.impl();
  auto bw = [xi, wi, bi, N, C, H, W, Cout, kh, kw, stride, pad, OH, OW,
             ckk, ohw](const TensorImpl& o) {
    std::vector<double> col(static_cast<size_t>(ckk) * ohw);
    std::vector<double> gcol;
    if (xi->requires_grad) gcol.resize(static_cast<size_t>(ckk) * ohw);
    for (int n = 0; n < N; ++n) {
      const double* gn = o.grad.data() + static_cast<int64_t>(n) * Cout * ohw;
      if (bi->requires_grad) {
        for (int co = 0; co < Cout; ++co) {
          double acc = 0.0;
          const double* g = gn + co * ohw;
          for (int64_t t = 0; t < ohw; ++t) acc += g[t];
          bi->grad[static_cast<size_t>(co)] += acc;
        }
      }
      if (wi->requires_grad || xi->requires_grad) {
        if (wi->requires_grad) {
          im2col(xi->data.data() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw, stride,
                 pad, OH, OW, col.data());
          detail::gemm_nt_acc(gn, col.data(), wi->grad.data(), Cout, static_cast<int>(ohw), ckk);
        }
        if (xi->requires_grad) {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          detail::gemm_tn_acc(wi->data.data(), gn, gcol.data(), Cout, ckk, static_cast<int>(ohw));
          col2im_acc(gcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                     xi->grad.data() + static_cast<int64_t>(n) * C * H * W);
        }
      }
    }
  };
  return make_result({N, Cout, OH, OW}, std::move(out), "conv2d", {x, w, bias}, std::move(bw));
}

Tensor relu(const Tensor& x) {
  check_inputs("relu", {&x});
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), "relu", {x}, [xi](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    for (size_t i = 0; i < o.grad.size(); ++i)
      if (xi->data[i] > 0.0) xi->grad[i] += o.grad[i];
  });
}

namespace {
Tensor spatial_mean_impl(const Tensor& x, const char* op) {
  require(x.rank() == 4, op, "expects (N,C,h,w)");
  check_inputs(op, {&x});
  int N = x.dim(0), C = x.dim(1);
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const auto& xv = x.data();
  std::vector<double> out(static_cast<size_t>(N) * C);
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const double* p = xv.data() + nc * hw;
    double acc = 0.0;
    for (int64_t t = 0; t < hw; ++t) acc += p[t];
    out[static_cast<size_t>(nc)] = acc / static_cast<double>(hw);
  }
  ImplPtr xi = x.impl();
  return make_result({N, C}, std::move(out), op, {x}, [xi, N, C, hw](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    double inv = 1.0 / static_cast<double>(hw);
    for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
      double g = o.grad[static_cast<size_t>(nc)] * inv;
      double* gp = xi->grad.data() + nc * hw;
      for (int64_t t = 0; t < hw; ++t) gp[t] += g;
    }
  });
}
}  // namespace

Tensor channel_mean(const Tensor& x) { return spatial_mean_impl(x, "channel_mean"); }
Tensor global_avg_pool(const Tensor& x) { return spatial_mean_impl(x, "global_avg_pool"); }

Tensor channel_std(const Tensor& x, double eps) {
  require(x.rank() == 4, "channel_std", "expects (N,C,h,w)");
  if (!(eps > 0.0)) throw contract_error("channel_std: eps must be positive");
  check_inputs("channel_std", {&x});
  int N = x.dim(0), C = x.dim(1);
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const auto& xv = x.data();
  std::vector<double> out(static_cast<size_t>(N) * C);
  std::vector<double> means(out.size());
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const double* p = xv.data() + nc * hw;
    double mean = 0.0;
    for (int64_t t = 0; t < hw; ++t) mean += p[t];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (int64_t t = 0; t < hw; ++t) {
      double d = p[t] - mean;
      var += d * d;
    }
    var /= static_cast<double>(hw);
    means[static_cast<size_t>(nc)] = mean;
    out[static_cast<size_t>(nc)] = std::sqrt(var + eps);
  }
  ImplPtr xi = x.impl();
  // Saved context: per-(n,c) means; sigma itself is the op output.
  return make_result({N, C}, std::move(out), "channel_std", {x},
                     [xi, N, C, hw, means = std::move(means)](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                         double sigma = o.data[static_cast<size_t>(nc)];
                         double g = o.grad[static_cast<size_t>(nc)] /
                                    (static_cast<double>(hw) * sigma);
                         double mean = means[static_cast<size_t>(nc)];
                         const double* p = xi->data.data() + nc * hw;
                         double* gp = xi->grad.data() + nc * hw;
                         for (int64_t t = 0; t < hw; ++t) gp[t] += g * (p[t] - mean);
                       }
                     });
}

Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
  require(x.rank() == 4, "channel_affine", "expects (N,C,h,w)");
  int N = x.dim(0), C = x.dim(1);
  std::vector<int> nc_shape{N, C};
  require(scale.shape() == nc_shape && shift.shape() == nc_shape, "channel_affine",
          "scale/shift must be (N,C) matching " + shape_str(x.shape()));
  check_inputs("channel_affine", {&x, &scale, &shift});
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const auto& xv = x.data();
  const auto& sv = scale.data();
  const auto& bv = shift.data();
  std::vector<double> out(xv.size());
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    double s = sv[static_cast<size_t>(nc)], b = bv[static_cast<size_t>(nc)];
    const double* p = xv.data() + nc * hw;
    double* q = out.data() + nc * hw;
    for (int64_t t = 0; t < hw; ++t) q[t] = s * p[t] + b;
  }
  ImplPtr xi = x.impl(), si = scale.impl(), bi = shift.impl();
  return make_result(x.shape(), std::move(out), "channel_affine", {x, scale, shift},
                     [xi, si, bi, N, C, hw](const TensorImpl& o) {
                       for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
                         const double* g = o.grad.data() + nc * hw;
                         if (xi->requires_grad) {
                           double s = si->data[static_cast<size_t>(nc)];
                           double* gx = xi->grad.data() + nc * hw;
                           for (int64_t t = 0; t < hw; ++t) gx[t] += s * g[t];
                         }
                         if (si->requires_grad) {
                           const double* p = xi->data.data() + nc * hw;
                           double acc = 0.0;
                           for (int64_t t = 0; t < hw; ++t) acc += g[t] * p[t];
                           si->grad[static_cast<size_t>(nc)] += acc;
                         }
                         if (bi->requires_grad) {
                           double acc = 0.0;
                           for (int64_t t = 0; t < hw; ++t) acc += g[t];
                           bi->grad[static_cast<size_t>(nc)] += acc;
                         }
                       }
                     });
}

Tensor softmax_classes(const Tensor& x) {
  require(x.rank() == 2 || x.rank() == 4, "softmax", "expects (N,K) or (N,K,h,w)");
  check_inputs("softmax", {&x});
  int N = x.dim(0), K = x.dim(1);
  int64_t S = x.rank() == 4 ? static_cast<int64_t>(x.dim(2)) * x.dim(3) : 1;
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (int n = 0; n < N; ++n) {
    for (int64_t s = 0; s < S; ++s) {
      int64_t base = static_cast<int64_t>(n) * K * S + s;
      double m = xv[static_cast<size_t>(base)];
      for (int k = 1; k < K; ++k) m = std::max(m, xv[static_cast<size_t>(base + k * S)]);
      double sum = 0.0;
      for (int k = 0; k < K; ++k) {
        double e = std::exp(xv[static_cast<size_t>(base + k * S)] - m);
        out[static_cast<size_t>(base + k * S)] = e;
        sum += e;
      }
      for (int k = 0; k < K; ++k) out[static_cast<size_t>(base + k * S)] /= sum;
    }
  }
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), "softmax", {x},
                     [xi, N, K, S](const TensorImpl& o) {
                       if (!xi->requires_grad) return;
                       for (int n = 0; n < N; ++n) {
                         for (int64_t s = 0; s < S; ++s) {
                           int64_t base = static_cast<int64_t>(n) * K * S + s;
                           double dot = 0.0;
                           for (int k = 0; k < K; ++k) {
                             size_t i = static_cast<size_t>(base + k * S);
                             dot += o.grad[i] * o.data[i];
                           }
                           for (int k = 0; k < K; ++k) {
                             size_t i = static_cast<size_t>(base + k * S);
                             xi->grad[i] += o.data[i] * (o.grad[i] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_floor(const Tensor& x, double floor) {
  require(floor >= 0.0, "log", "floor must be non-negative");
  check_inputs("log", {&x});
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = std::log(std::max(xv[i], floor));
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), "log", {x}, [xi, floor](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    for (size_t i = 0; i < o.grad.size(); ++i)
      if (xi->data[i] > floor) xi->grad[i] += o.grad[i] / xi->data[i];
  });
}

Tensor square(const Tensor& x) {
  check_inputs("square", {&x});
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * xv[i];
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), "square", {x}, [xi](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    for (size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += 2.0 * xi->data[i] * o.grad[i];
  });
}

Tensor mean_all(const Tensor& x) {
  check_inputs("mean_all", {&x});
  const auto& xv = x.data();
  double acc = 0.0;
  for (double v : xv) acc += v;
  double inv = 1.0 / static_cast<double>(xv.size());
  ImplPtr xi = x.impl();
  return make_result({1}, {acc * inv}, "mean_all", {x}, [xi, inv](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    double g = o.grad[0] * inv;
    for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
  });
}

Tensor sum_all(const Tensor& x) {
  check_inputs("sum_all", {&x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  ImplPtr xi = x.impl();
  return make_result({1}, {acc}, "sum_all", {x}, [xi](const TensorImpl& o) {
    if (!xi->requires_grad) return;
    double g = o.grad[0];
    for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g;
  });
}

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  require_same_shape("masked_mean", x, mask);
  if (mask.requires_grad())
    throw contract_error("masked_mean: mask must not carry gradient");
  check_inputs("masked_mean", {&x, &mask});
  const auto& xv = x.data();
  const auto& mv = mask.data();
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) {
    if (mv[i] < 0.0) throw contract_error("masked_mean: mask entries must be non-negative");
    num += xv[i] * mv[i];
    den += mv[i];
  }
  double value = den > 0.0 ? num / den : 0.0;  // empty mask reduces to 0
  ImplPtr xi = x.impl(), mi = mask.impl();
  return make_result({1}, {value}, "masked_mean", {x, mask},
                     [xi, mi, den](const TensorImpl& o) {
                       if (!xi->requires_grad || den <= 0.0) return;
                       double g = o.grad[0] / den;
                       for (size_t i = 0; i < xi->grad.size(); ++i)
                         xi->grad[i] += g * mi->data[i];
                     });
}

Tensor nearest_downsample(const Tensor& x, int factor) {
  if (x.requires_grad())
    throw contract_error("nearest_downsample: unsupported op for gradient-carrying input");
  require(x.rank() == 3, "nearest_downsample", "expects (N,h,w) label planes");
  require(factor >= 1, "nearest_downsample", "factor must be >= 1");
  int N = x.dim(0), h = x.dim(1), w = x.dim(2);
  int oh = (h + factor - 1) / factor;
  int ow = (w + factor - 1) / factor;
  const auto& xv = x.data();
  std::vector<double> out(static_cast<size_t>(N) * oh * ow);
  size_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++idx)
        out[idx] = xv[(static_cast<size_t>(n) * h + static_cast<size_t>(i) * factor) * w +
                      static_cast<size_t>(j) * factor];
  return Tensor::from({N, oh, ow}, std::move(out));
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int n, int h, int w,
                                   int factor) {
  if (static_cast<int64_t>(labels.size()) != static_cast<int64_t>(n) * h * w)
    throw shape_error("downsample_labels: length mismatch");
  if (factor < 1) throw contract_error("downsample_labels: factor must be >= 1");
  int oh = (h + factor - 1) / factor;
  int ow = (w + factor - 1) / factor;
  std::vector<int> out(static_cast<size_t>(n) * oh * ow);
  size_t idx = 0;
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j, ++idx)
        out[idx] = labels[(static_cast<size_t>(b) * h + static_cast<size_t>(i) * factor) * w +
                          static_cast<size_t>(j) * factor];
  return out;
}

}  // namespace shade
