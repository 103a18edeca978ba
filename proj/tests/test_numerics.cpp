#include <cmath>
#include <vector>

#include "doctest.h"
#include "shade/gradcheck.hpp"
#include "shade/ops.hpp"
#include "shade/rng.hpp"
#include "shade/tensor.hpp"

using namespace shade;

namespace {

bool close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; }

Tensor rand_tensor(Rng& rng, std::vector<int> shape, bool rg = false) {
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("relu forward on mixed signs") {
  Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(x);
  CHECK(y.data() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("channel mean of a 1x1x2x2 map") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 5.0});
  CHECK(close(channel_mean(x).data()[0], 2.75));
}

TEST_CASE("conv3x3 with identity-center kernel preserves the map") {
  Rng rng(7);
  Tensor x = rand_tensor(rng, {2, 1, 5, 5});
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;  // center tap
  Tensor w = Tensor::from({1, 1, 3, 3}, std::move(k));
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 1);
  // identity applies per input channel; use single-channel maps
  Tensor x1 = rand_tensor(rng, {1, 1, 4, 4});
  Tensor y1 = conv2d(x1, w, b, 1, 1);
  for (size_t i = 0; i < x1.data().size(); ++i) CHECK(close(y1.data()[i], x1.data()[i]));
  CHECK(y.shape() == std::vector<int>{2, 1, 5, 5});
}

TEST_CASE("conv2d stride-2 output geometry") {
  Tensor x = Tensor::zeros({1, 3, 32, 32});
  Tensor w = Tensor::zeros({4, 3, 3, 3});
  Tensor b = Tensor::zeros({4});
  CHECK(conv2d(x, w, b, 2, 1).shape() == std::vector<int>{1, 4, 16, 16});
}

TEST_CASE("backward of sum gives unit gradients") {
  Tensor x = Tensor::from({3}, {4.0, -1.0, 0.5}, true);
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum_all(square(x)));
  CHECK(x.grad() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = square(x);
  CHECK_THROWS_AS(backward(y), contract_error);
}

TEST_CASE("backward default resets, accumulate mode adds") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum_all(x));
  backward(sum_all(x));
  CHECK(x.grad() == std::vector<double>{1.0, 1.0});
  backward(sum_all(x), /*accumulate=*/true);
  CHECK(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("shared subgraph accumulates through both consumers") {
  Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
  Tensor h = scalar_affine(x, 2.0, 0.0);
  Tensor loss = add(sum_all(h), sum_all(square(h)));
  backward(loss);
  // d/dx [2x + 4x^2] = 2 + 8x
  CHECK(close(x.grad()[0], 2.0 + 8.0 * 3.0));
  CHECK(close(x.grad()[1], 2.0 - 8.0 * 1.0));
}

TEST_CASE("gradient checks pass for every registered subgraph") {
  for (const std::string& name : gradcheck_subgraphs()) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      GradCheckReport rep = grad_check(name, seed, 1e-6, 1e-5);
      INFO(name, " seed ", seed, " max_rel_err ", rep.max_rel_err);
      CHECK(rep.pass);
    }
  }
}

TEST_CASE("grad_check named examples") {
  CHECK(grad_check("linear", 0, 1e-6, 1e-5).pass);
  CHECK(grad_check("conv3x3", 0, 1e-6, 1e-5).pass);
  CHECK(grad_check("three_layer_net", 0, 1e-6, 1e-5).pass);
}

TEST_CASE("channel_std at constant input is flagged near-singular and excluded") {
  GradCheckReport rep = grad_check("channel_std_constant", 0, 1e-6, 1e-5);
  CHECK(rep.excluded_trials == 1);
  CHECK(rep.checked == 0);
}

TEST_CASE("grad_check rejects unknown subgraph") {
  CHECK_THROWS_AS(grad_check("no_such_graph", 0, 1e-6, 1e-5), contract_error);
}

TEST_CASE("backward is linear in the upstream gradient") {
  // Scaling the loss scales every leaf gradient by the same factor.
  Rng rng(11);
  Tensor x = rand_tensor(rng, {3, 4}, true);
  Tensor w = rand_tensor(rng, {4, 2}, true);
  Tensor kw = rand_tensor(rng, {2, 3, 3, 3}, true);
  Tensor kb = rand_tensor(rng, {2}, true);
  Tensor img = rand_tensor(rng, {1, 3, 4, 4}, true);

  auto run = [&](double a) {
    Tensor base = add(sum_all(matmul(x, w)), sum_all(conv2d(img, kw, kb, 1, 1)));
    backward(scalar_affine(base, a, 0.0));
    std::vector<double> all;
    for (const Tensor* t : {&x, &w, &kw, &kb, &img})
      all.insert(all.end(), t->grad().begin(), t->grad().end());
    return all;
  };
  std::vector<double> g1 = run(1.0);
  std::vector<double> g3 = run(3.0);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(close(g3[i], 3.0 * g1[i], 1e-12));
}

TEST_CASE("softmax outputs are probability vectors") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = rand_tensor(rng, {4, 6});
    Tensor p = softmax_classes(x);
    for (int n = 0; n < 4; ++n) {
      double s = 0.0;
      for (int k = 0; k < 6; ++k) {
        double v = p.data()[static_cast<size_t>(n * 6 + k)];
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(close(s, 1.0, 1e-12));
    }
  }
  // 4-D variant sums to one along the class axis
  Tensor x4 = rand_tensor(rng, {2, 3, 2, 2});
  Tensor p4 = softmax_classes(x4);
  for (int n = 0; n < 2; ++n)
    for (int s = 0; s < 4; ++s) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += p4.data()[static_cast<size_t>((n * 3 + k) * 4 + s)];
      CHECK(close(acc, 1.0, 1e-12));
    }
}

TEST_CASE("shape mismatch raises shape_error") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), shape_error);
  CHECK_THROWS_AS(mul(a, b), shape_error);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 2})), shape_error);
}

TEST_CASE("debug mode flags non-finite inputs with the op name") {
  set_debug_checks(true);
  Tensor a = Tensor::from({2}, {1.0, std::nan("")});
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), numeric_error);
  set_debug_checks(false);
  CHECK_NOTHROW(add(a, b));  // cost-controlled: off by default
}

TEST_CASE("masked_mean handles empty masks and constant masks") {
  Tensor x = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}, true);
  Tensor none = Tensor::zeros({4});
  Tensor some = Tensor::from({4}, {0.0, 1.0, 1.0, 0.0});
  CHECK(masked_mean(x, none).item() == 0.0);
  CHECK(close(masked_mean(x, some).item(), 2.5));
  Tensor rg_mask = Tensor::from({4}, {1.0, 0.0, 0.0, 0.0}, true);
  CHECK_THROWS_AS(masked_mean(x, rg_mask), contract_error);
}

TEST_CASE("nearest_downsample samples top-left and rejects gradients") {
  Tensor labels = Tensor::from({1, 4, 4}, {0, 1, 2, 3,    //
                                           4, 5, 6, 7,    //
                                           8, 9, 10, 11,  //
                                           12, 13, 14, 15});
  Tensor d = nearest_downsample(labels, 2);
  CHECK(d.shape() == std::vector<int>{1, 2, 2});
  CHECK(d.data() == std::vector<double>{0, 2, 8, 10});
  Tensor rg = Tensor::zeros({1, 4, 4}, true);
  CHECK_THROWS_AS(nearest_downsample(rg, 2), contract_error);

  std::vector<int> li{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  CHECK(downsample_labels(li, 1, 4, 4, 2) == std::vector<int>{0, 2, 8, 10});
}

TEST_CASE("mut_data only works on leaves") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = square(x);
  CHECK_THROWS_AS(y.mut_data(), contract_error);
  CHECK_NOTHROW(x.mut_data());
}

TEST_CASE("channel_std matches the definition with epsilon") {
  // values {1,3}: mean 2, population var 1, sigma = sqrt(1 + 1e-6)
  Tensor x = Tensor::from({1, 1, 1, 2}, {1.0, 3.0});
  CHECK(close(channel_std(x, 1e-6).data()[0], std::sqrt(1.0 + 1e-6)));
  // constant map: sigma = sqrt(eps)
  Tensor c = Tensor::full({1, 1, 2, 2}, 2.0);
  CHECK(close(channel_std(c, 1e-6).data()[0], 1e-3));
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  Tensor y = square(x);
  CHECK_FALSE(y.requires_grad());
}
