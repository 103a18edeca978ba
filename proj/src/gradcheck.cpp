#include "shade/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "shade/ops.hpp"

namespace shade {

GradCheckReport grad_check(const Subgraph& g, uint64_t seed, double eps, double tol) {
  if (!(eps > 0.0) || !(tol > 0.0)) throw contract_error("grad_check: eps and tol must be positive");
  GradCheckReport rep;
  rep.subgraph = g.name;

  Rng rng(seed);
  std::vector<Tensor> inputs = g.make_inputs(rng);
  if (g.near_singular && g.near_singular(inputs)) {
    rep.excluded_trials = 1;
    rep.pass = true;  // nothing comparable at this point
    return rep;
  }

  Tensor loss = g.build(inputs);
  if (loss.numel() != 1) throw contract_error("grad_check: subgraph must produce a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (const Tensor& in : inputs)
    analytic.push_back(in.requires_grad() ? in.grad() : std::vector<double>{});

  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    double input_max = 0.0;
    std::vector<double>& xv = inputs[i].mut_data();
    for (size_t j = 0; j < xv.size(); ++j) {
      double saved = xv[j];
      double fplus, fminus;
      {
        NoGradGuard ng;
        xv[j] = saved + eps;
        fplus = g.build(inputs).item();
        xv[j] = saved - eps;
        fminus = g.build(inputs).item();
      }
      xv[j] = saved;
      double fd = (fplus - fminus) / (2.0 * eps);
      double a = analytic[i][j];
      double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      input_max = std::max(input_max, rel);
      ++rep.checked;
    }
    rep.per_input_max.push_back(input_max);
    rep.max_rel_err = std::max(rep.max_rel_err, input_max);
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

namespace {

Tensor leaf_normal(Rng& rng, std::vector<int> shape, bool rg = true) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), rg);
}

Tensor leaf_away_from_zero(Rng& rng, std::vector<int> shape, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(lo, hi) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor leaf_uniform(Rng& rng, std::vector<int> shape, double lo, double hi, bool rg = true) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), rg);
}

// Projects a tensor to a scalar with fixed weights so every output
// coordinate contributes to the checked loss.
Tensor project(const Tensor& y, const Tensor& weights) { return mean_all(mul(y, weights)); }

bool any_channel_degenerate(const Tensor& x, double min_var) {
  int n = x.dim(0), c = x.dim(1);
  int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const auto& v = x.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const double* p = v.data() + nc * hw;
    double mean = 0.0;
    for (int64_t t = 0; t < hw; ++t) mean += p[t];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (int64_t t = 0; t < hw; ++t) var += (p[t] - mean) * (p[t] - mean);
    var /= static_cast<double>(hw);
    if (var < min_var) return true;
  }
  return false;
}

std::map<std::string, Subgraph> build_registry() {
  std::map<std::string, Subgraph> reg;
  auto put = [&reg](Subgraph g) { reg[g.name] = std::move(g); };

  put({"add",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {3, 4}), leaf_normal(r, {3, 4}),
                                    leaf_normal(r, {3, 4}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(add(in[0], in[1]), in[2]); },
       nullptr});

  put({"multiply",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {3, 4}), leaf_normal(r, {3, 4}),
                                    leaf_normal(r, {3, 4}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(mul(in[0], in[1]), in[2]); },
       nullptr});

  put({"scalar_affine",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 5}), leaf_normal(r, {2, 5}, false)};
       },
       [](const std::vector<Tensor>& in) {
         return project(scalar_affine(in[0], 1.7, -0.3), in[1]);
       },
       nullptr});

  put({"matmul",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {3, 4}), leaf_normal(r, {4, 5}),
                                    leaf_normal(r, {3, 5}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(matmul(in[0], in[1]), in[2]); },
       nullptr});

  put({"add_bias",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 2, 2}), leaf_normal(r, {3}),
                                    leaf_normal(r, {2, 3, 2, 2}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(add_bias(in[0], in[1]), in[2]); },
       nullptr});

  auto conv_graph = [](const char* name, std::vector<int> xs, std::vector<int> ws, int stride,
                       int pad, std::vector<int> os) {
    return Subgraph{
        name,
        [xs, ws, os](Rng& r) {
          return std::vector<Tensor>{leaf_normal(r, xs), leaf_normal(r, ws),
                                     leaf_normal(r, {ws[0]}), leaf_normal(r, os, false)};
        },
        [stride, pad](const std::vector<Tensor>& in) {
          return project(conv2d(in[0], in[1], in[2], stride, pad), in[3]);
        },
        nullptr};
  };
  put(conv_graph("conv3x3", {2, 3, 5, 5}, {4, 3, 3, 3}, 1, 1, {2, 4, 5, 5}));
  put(conv_graph("conv3x3_s2", {2, 3, 6, 6}, {4, 3, 3, 3}, 2, 1, {2, 4, 3, 3}));
  put(conv_graph("conv1x1", {2, 3, 4, 4}, {5, 3, 1, 1}, 1, 0, {2, 5, 4, 4}));

  put({"relu",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_away_from_zero(r, {3, 5}, 0.2, 1.5),
                                    leaf_normal(r, {3, 5}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(relu(in[0]), in[1]); },
       nullptr});

  put({"channel_mean",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 4, 4}), leaf_normal(r, {2, 3}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(channel_mean(in[0]), in[1]); },
       nullptr});

  put({"global_avg_pool",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 4, 4}), leaf_normal(r, {2, 3}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(global_avg_pool(in[0]), in[1]); },
       nullptr});

  put({"channel_std",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 4, 4}), leaf_normal(r, {2, 3}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(channel_std(in[0], 1e-6), in[1]); },
       [](const std::vector<Tensor>& in) { return any_channel_degenerate(in[0], 1e-3); }});

  // Derivative singularity probe: zero variance makes sigma ~ sqrt(eps).
  put({"channel_std_constant",
       [](Rng& r) {
         (void)r;
         return std::vector<Tensor>{Tensor::full({2, 2, 3, 3}, 2.0, true),
                                    Tensor::full({2, 2}, 1.0)};
       },
       [](const std::vector<Tensor>& in) { return project(channel_std(in[0], 1e-6), in[1]); },
       [](const std::vector<Tensor>& in) { return any_channel_degenerate(in[0], 1e-3); }});

  put({"channel_affine",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 3, 3}),
                                    leaf_uniform(r, {2, 3}, 0.5, 1.5), leaf_normal(r, {2, 3}),
                                    leaf_normal(r, {2, 3, 3, 3}, false)};
       },
       [](const std::vector<Tensor>& in) {
         return project(channel_affine(in[0], in[1], in[2]), in[3]);
       },
       nullptr});

  put({"softmax",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {3, 4}), leaf_normal(r, {3, 4}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(softmax_classes(in[0]), in[1]); },
       nullptr});

  put({"softmax_pixels",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {2, 3, 2, 2}),
                                    leaf_normal(r, {2, 3, 2, 2}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(softmax_classes(in[0]), in[1]); },
       nullptr});

  put({"log",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_uniform(r, {3, 4}, 0.2, 2.0),
                                    leaf_normal(r, {3, 4}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(log_floor(in[0], 1e-12), in[1]); },
       nullptr});

  put({"square",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {3, 4}), leaf_normal(r, {3, 4}, false)};
       },
       [](const std::vector<Tensor>& in) { return project(square(in[0]), in[1]); },
       nullptr});

  put({"mean_all",
       [](Rng& r) { return std::vector<Tensor>{leaf_normal(r, {2, 3, 2, 2})}; },
       [](const std::vector<Tensor>& in) { return mean_all(in[0]); },
       nullptr});

  put({"sum_all",
       [](Rng& r) { return std::vector<Tensor>{leaf_normal(r, {3, 4})}; },
       [](const std::vector<Tensor>& in) { return sum_all(in[0]); },
       nullptr});

  put({"masked_mean",
       [](Rng& r) {
         Tensor x = leaf_normal(r, {2, 3, 4, 4});
         std::vector<double> m(static_cast<size_t>(x.numel()));
         for (double& v : m) v = r.uniform() < 0.5 ? 1.0 : 0.0;
         if (std::count(m.begin(), m.end(), 1.0) == 0) m[0] = 1.0;
         return std::vector<Tensor>{x, Tensor::from({2, 3, 4, 4}, std::move(m))};
       },
       [](const std::vector<Tensor>& in) { return masked_mean(in[0], in[1]); },
       nullptr});

  put({"linear",
       [](Rng& r) {
         return std::vector<Tensor>{leaf_normal(r, {4, 3}), leaf_normal(r, {3, 5}),
                                    leaf_normal(r, {5}), leaf_normal(r, {4, 5}, false)};
       },
       [](const std::vector<Tensor>& in) {
         return project(add_bias(matmul(in[0], in[1]), in[2]), in[3]);
       },
       nullptr});

  // Small conv-relu-conv-relu-pool-linear net trained with cross entropy.
  put({"three_layer_net",
       [](Rng& r) {
         Tensor x = leaf_normal(r, {2, 3, 6, 6});
         Tensor w0 = leaf_uniform(r, {4, 3, 3, 3}, -0.4, 0.4);
         Tensor b0 = leaf_uniform(r, {4}, -0.1, 0.1);
         Tensor w1 = leaf_uniform(r, {5, 4, 3, 3}, -0.4, 0.4);
         Tensor b1 = leaf_uniform(r, {5}, -0.1, 0.1);
         Tensor w2 = leaf_uniform(r, {5, 3}, -0.5, 0.5);
         Tensor b2 = leaf_uniform(r, {3}, -0.1, 0.1);
         std::vector<double> onehot(2 * 3, 0.0);
         for (int n = 0; n < 2; ++n) onehot[static_cast<size_t>(n * 3 + r.randint(3))] = 1.0;
         return std::vector<Tensor>{x, w0, b0, w1, b1, w2, b2, Tensor::from({2, 3}, std::move(onehot))};
       },
       [](const std::vector<Tensor>& in) {
         Tensor h = relu(conv2d(in[0], in[1], in[2], 1, 1));
         h = relu(conv2d(h, in[3], in[4], 2, 1));
         Tensor pooled = global_avg_pool(h);
         Tensor logits = add_bias(matmul(pooled, in[5]), in[6]);
         Tensor logp = log_floor(softmax_classes(logits), 1e-12);
         return scalar_affine(masked_mean(logp, in[7]), -1.0, 0.0);
       },
       nullptr});

  return reg;
}

const std::map<std::string, Subgraph>& registry() {
  static const std::map<std::string, Subgraph> reg = build_registry();
  return reg;
}

}  // namespace

GradCheckReport grad_check(const std::string& subgraph, uint64_t seed, double eps, double tol) {
  auto it = registry().find(subgraph);
  if (it == registry().end())
    throw contract_error("grad_check: unknown subgraph '" + subgraph + "'");
  return grad_check(it->second, seed, eps, tol);
}

std::vector<std::string> gradcheck_subgraphs() {
  std::vector<std::string> names;
  for (const auto& [k, v] : registry()) names.push_back(k);
  return names;
}

}  // namespace shade
