#include <cmath>
#include <vector>

#include "doctest.h"
#include "shade/gradcheck.hpp"
#include "shade/nn.hpp"
#include "shade/rng.hpp"

using namespace shade;

namespace {

Tensor rand_images(Rng& rng, int n, int c, int hw) {
  std::vector<double> v(static_cast<size_t>(n) * c * hw * hw);
  for (double& x : v) x = rng.uniform(0.0, 1.5);
  return Tensor::from({n, c, hw, hw}, std::move(v));
}

bool same_data(const ModelParams& a, const ModelParams& b) {
  auto ta = a.all();
  auto tb = b.all();
  for (size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->data() != tb[i]->data()) return false;
  return true;
}

}  // namespace

TEST_CASE("init_params is deterministic and zero-biased") {
  ModelSpec spec;
  ModelParams a = init_params(spec, 42);
  ModelParams b = init_params(spec, 42);
  CHECK(same_data(a, b));
  CHECK(params_hash(a) == params_hash(b));

  for (const Tensor* t : {&a.stem_b, &a.l1_b, &a.l2_b, &a.head_b})
    for (double v : t->data()) CHECK(v == 0.0);

  ModelParams c = init_params(spec, 43);
  CHECK_FALSE(same_data(a, c));
}

TEST_CASE("poly schedule endpoints and midpoint") {
  OptimState s;
  s.base_lr = 0.01;
  s.power = 0.9;
  s.max_iter = 1000;
  CHECK(poly_lr(0, s) == 0.01);
  CHECK(poly_lr(1000, s) == 0.0);
  // 0.01 * 0.5^0.9
  CHECK(std::abs(poly_lr(500, s) - 0.0053588673) < 1e-9);
  CHECK_THROWS_AS(poly_lr(1001, s), std::out_of_range);
}

TEST_CASE("poly schedule is monotonically non-increasing") {
  OptimState s;
  s.base_lr = 0.05;
  s.power = 0.9;
  s.max_iter = 337;
  double prev = poly_lr(0, s);
  for (int64_t i = 1; i <= s.max_iter; ++i) {
    double cur = poly_lr(i, s);
    CHECK(cur <= prev);
    prev = cur;
  }
}

TEST_CASE("sgd_step without momentum") {
  ModelSpec spec;
  spec.c0 = 2;
  spec.c1 = 2;
  ModelParams p = init_params(spec, 0);
  OptimState s;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  s.init_for(p);
  // w=1, grad=2, lr=0.1 -> w=0.8
  p.stem_w.mut_data()[0] = 1.0;
  for (Tensor* t : p.all()) t->zero_grad();
  p.stem_w.impl()->grad[0] = 2.0;
  sgd_step(p, s, 0.1);
  CHECK(std::abs(p.stem_w.data()[0] - 0.8) < 1e-15);
}

TEST_CASE("sgd_step momentum recurrence over two steps") {
  // momentum 0.9, constant grad 1, lr 1, w0=0, wd=0: w2 = -(1 + 1.9)
  ModelSpec spec;
  spec.c0 = 2;
  spec.c1 = 2;
  ModelParams p = init_params(spec, 0);
  for (Tensor* t : p.all())
    for (double& v : t->mut_data()) v = 0.0;
  OptimState s;
  s.momentum = 0.9;
  s.weight_decay = 0.0;
  s.init_for(p);
  for (int step = 0; step < 2; ++step) {
    for (Tensor* t : p.all()) {
      t->zero_grad();
      for (double& g : t->impl()->grad) g = 1.0;
    }
    sgd_step(p, s, 1.0);
  }
  CHECK(std::abs(p.stem_w.data()[0] + 2.9) < 1e-15);
}

TEST_CASE("sgd_step with zero grads and zero weight decay is identity") {
  ModelSpec spec;
  ModelParams p = init_params(spec, 5);
  ModelParams before = p.clone(Role::student);
  OptimState s;
  s.weight_decay = 0.0;
  s.init_for(p);
  for (Tensor* t : p.all()) t->zero_grad();
  sgd_step(p, s, 0.3);
  CHECK(same_data(p, before));
}

TEST_CASE("sgd_step requires gradients") {
  ModelSpec spec;
  ModelParams p = init_params(spec, 5);
  OptimState s;
  s.init_for(p);
  CHECK_THROWS_AS(sgd_step(p, s, 0.1), contract_error);
}

TEST_CASE("lr=0 training step leaves parameters bit-identical") {
  ModelSpec spec;
  spec.c0 = 4;
  spec.c1 = 6;
  ModelParams p = init_params(spec, 9);
  ModelParams before = p.clone(Role::student);
  OptimState s;
  s.init_for(p);
  Rng rng(3);
  Tensor imgs = rand_images(rng, 2, 3, 8);
  ForwardTrace t = forward(spec, p, imgs);
  backward(task_loss(t.logits, {0, 1}, HeadKind::classification));
  sgd_step(p, s, 0.0);
  CHECK(same_data(p, before));
}

TEST_CASE("cross entropy at uniform logits equals ln K") {
  Tensor logits = Tensor::zeros({3, 5});
  Tensor seg_logits = Tensor::zeros({2, 5, 2, 2});
  std::vector<int> seg_labels(2 * 2 * 2, 3);
  CHECK(std::abs(task_loss(logits, {0, 4, 2}, HeadKind::classification).item() - std::log(5.0)) <
        1e-12);
  CHECK(std::abs(task_loss(seg_logits, seg_labels, HeadKind::segmentation).item() -
                 std::log(5.0)) < 1e-12);
}

TEST_CASE("cross entropy approaches zero for confident correct logits") {
  Tensor logits = Tensor::from({2, 3}, {30.0, 0.0, 0.0, 0.0, 30.0, 0.0});
  double l = task_loss(logits, {0, 1}, HeadKind::classification).item();
  CHECK(l >= 0.0);
  CHECK(l < 1e-9);
}

TEST_CASE("cross entropy is non-negative on random inputs") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> v(4 * 6);
    for (double& x : v) x = 3.0 * rng.normal();
    std::vector<int> labels(4);
    for (int& y : labels) y = rng.randint(6);
    CHECK(task_loss(Tensor::from({4, 6}, std::move(v)), labels, HeadKind::classification).item() >=
          0.0);
  }
}

TEST_CASE("task_loss rejects out-of-range labels") {
  Tensor logits = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(task_loss(logits, {0, 3}, HeadKind::classification), data_error);
  CHECK_THROWS_AS(task_loss(logits, {-1, 0}, HeadKind::classification), data_error);
}

TEST_CASE("task_loss gradient matches finite differences") {
  Subgraph g{"task_loss_fd",
             [](Rng& r) {
               std::vector<double> v(3 * 4);
               for (double& x : v) x = r.normal();
               return std::vector<Tensor>{Tensor::from({3, 4}, std::move(v), true)};
             },
             [](const std::vector<Tensor>& in) {
               return task_loss(in[0], {1, 0, 3}, HeadKind::classification);
             },
             nullptr};
  for (uint64_t seed = 0; seed < 5; ++seed) CHECK(grad_check(g, seed, 1e-6, 1e-5).pass);
}

TEST_CASE("ema_update blends parameters") {
  ModelSpec spec;
  spec.c0 = 2;
  spec.c1 = 2;
  ModelParams s = init_params(spec, 1);
  ModelParams t = s.clone(Role::ema_teacher);
  for (Tensor* x : t.all())
    for (double& v : x->mut_data()) v = 0.0;
  for (Tensor* x : s.all())
    for (double& v : x->mut_data()) v = 1.0;

  SUBCASE("decay zero copies the student") {
    ema_update(t, s, 0.0);
    CHECK(same_data(t, s));
  }
  SUBCASE("decay one is rejected") { CHECK_THROWS_AS(ema_update(t, s, 1.0), contract_error); }
  SUBCASE("small step toward the student") {
    ema_update(t, s, 0.999);
    CHECK(std::abs(t.stem_w.data()[0] - 0.001) < 1e-15);
  }
  SUBCASE("frozen teachers are immutable") {
    ModelParams f = s.clone(Role::frozen_teacher);
    CHECK_THROWS_AS(ema_update(f, s, 0.5), contract_error);
  }
}

TEST_CASE("forward produces task-shaped outputs") {
  Rng rng(2);
  Tensor imgs = rand_images(rng, 2, 3, 32);

  ModelSpec cls;
  cls.num_classes = 4;
  ForwardTrace tc = forward(cls, init_params(cls, 0), imgs);
  CHECK(tc.logits.shape() == std::vector<int>{2, 4});
  CHECK(tc.rc_feature.shape() == std::vector<int>{2, 32});

  ModelSpec seg;
  seg.head = HeadKind::segmentation;
  seg.num_classes = 5;
  ForwardTrace ts = forward(seg, init_params(seg, 0), imgs);
  CHECK(ts.logits.shape() == std::vector<int>{2, 5, 16, 16});
  CHECK(ts.rc_feature.shape() == std::vector<int>{2, 32, 16, 16});
}

TEST_CASE("style injector runs at the configured insertion point") {
  Rng rng(4);
  Tensor imgs = rand_images(rng, 1, 3, 8);
  for (int ip : {0, 1, 2}) {
    ModelSpec spec;
    spec.c0 = 4;
    spec.c1 = 6;
    spec.insertion_point = ip;
    ModelParams p = init_params(spec, 1);
    int seen_channels = -1;
    StyleInjector inj = [&](const Tensor& f) {
      seen_channels = f.dim(1);
      return scalar_affine(f, 1.0, 0.0);
    };
    ForwardTrace with = forward(spec, p, imgs, &inj);
    ForwardTrace without = forward(spec, p, imgs);
    CHECK(seen_channels == spec.channels_at(ip));
    for (size_t i = 0; i < with.logits.data().size(); ++i)
      CHECK(std::abs(with.logits.data()[i] - without.logits.data()[i]) < 1e-12);
  }
}

TEST_CASE("model spec validation") {
  ModelSpec bad;
  bad.insertion_point = 3;
  CHECK_THROWS_AS(bad.validate(), config_error);
  bad.insertion_point = 0;
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), config_error);
}
