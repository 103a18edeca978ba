#include <cmath>
#include <vector>

#include "doctest.h"
#include "shade/consistency.hpp"
#include "shade/gradcheck.hpp"
#include "shade/ops.hpp"
#include "shade/rng.hpp"

using namespace shade;

namespace {

// Entropy-route oracle: JSD(p,q) = H(m) - (H(p)+H(q))/2, m the midpoint.
double jsd_entropy_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  auto entropy = [](const std::vector<double>& d) {
    double h = 0.0;
    for (double v : d)
      if (v > 0.0) h -= v * std::log(v);
    return h;
  };
  std::vector<double> m(p.size());
  for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return entropy(m) - 0.5 * (entropy(p) + entropy(q));
}

std::vector<double> random_simplex(Rng& rng, int k) {
  std::vector<double> p(static_cast<size_t>(k));
  double sum = 0.0;
  for (double& v : p) {
    v = rng.uniform(1e-6, 1.0);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

Tensor probs_tensor(Rng& rng, std::vector<int> shape) {
  // normalized along axis 1
  int n = shape[0], k = shape[1];
  int64_t spatial = shape.size() == 4 ? static_cast<int64_t>(shape[2]) * shape[3] : 1;
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (int i = 0; i < n; ++i)
    for (int64_t s = 0; s < spatial; ++s) {
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        double u = rng.uniform(1e-4, 1.0);
        v[static_cast<size_t>((static_cast<int64_t>(i) * k + c) * spatial + s)] = u;
        sum += u;
      }
      for (int c = 0; c < k; ++c)
        v[static_cast<size_t>((static_cast<int64_t>(i) * k + c) * spatial + s)] /= sum;
    }
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("jsd of identical distributions is exactly zero") {
  std::vector<double> p{0.2, 0.5, 0.3};
  CHECK(jsd(p, p) == 0.0);
}

TEST_CASE("jsd of disjoint supports is ln 2") {
  std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
  CHECK(std::abs(jsd(p, q) - std::log(2.0)) < 1e-12);
}

TEST_CASE("jsd on the worked example matches the entropy oracle") {
  std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  double oracle = jsd_entropy_oracle(p, q);
  // frozen from the oracle: 0.5*(KL(P||Q)+KL(Pt||Q)) with Q the midpoint
  CHECK(oracle == doctest::Approx(0.0338220755686).epsilon(1e-10));
  CHECK(jsd(p, q) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("jsd is exactly symmetric and bounded") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    int k = 2 + rng.randint(6);
    std::vector<double> p = random_simplex(rng, k);
    std::vector<double> q = random_simplex(rng, k);
    double a = jsd(p, q);
    CHECK(a == jsd(q, p));  // bitwise
    CHECK(a >= 0.0);
    CHECK(a <= std::log(2.0) + 1e-15);
    CHECK(a == doctest::Approx(jsd_entropy_oracle(p, q)).epsilon(1e-10));
  }
}

TEST_CASE("jsd separates distinct distributions") {
  std::vector<double> p{0.4, 0.6}, q{0.4 + 1e-5, 0.6 - 1e-5};
  CHECK(jsd(p, q) > 0.0);
}

TEST_CASE("jsd rejects non-simplex input") {
  std::vector<double> p{0.5, 0.6}, q{0.5, 0.5};
  CHECK_THROWS_AS(jsd(p, q), contract_error);
  std::vector<double> neg{1.2, -0.2};
  CHECK_THROWS_AS(jsd(neg, q), contract_error);
}

TEST_CASE("sc_loss is zero for identical branches") {
  Rng rng(5);
  Tensor p = probs_tensor(rng, {3, 4});
  CHECK(sc_loss({p, p}, HeadKind::classification).item() == 0.0);
}

TEST_CASE("sc_loss averages per-sample jsd") {
  // one identical pair and one disjoint pair: mean = ln2/2
  Tensor p = Tensor::from({2, 2}, {1.0, 0.0, 1.0, 0.0});
  Tensor pt = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(sc_loss({p, pt}, HeadKind::classification).item() ==
        doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("sc_loss equals the mean of the scalar jsd over positions") {
  Rng rng(7);
  SUBCASE("classification") {
    Tensor p = probs_tensor(rng, {5, 4});
    Tensor pt = probs_tensor(rng, {5, 4});
    double expect = 0.0;
    for (int i = 0; i < 5; ++i) {
      std::span<const double> sp(p.data().data() + i * 4, 4);
      std::span<const double> sq(pt.data().data() + i * 4, 4);
      expect += jsd(sp, sq) / 5.0;
    }
    CHECK(sc_loss({p, pt}, HeadKind::classification).item() ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("segmentation averages over every pixel") {
    Tensor p = probs_tensor(rng, {2, 3, 2, 2});
    Tensor pt = probs_tensor(rng, {2, 3, 2, 2});
    double expect = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int s = 0; s < 4; ++s) {
        std::vector<double> sp(3), sq(3);
        for (int c = 0; c < 3; ++c) {
          sp[static_cast<size_t>(c)] = p.data()[static_cast<size_t>((n * 3 + c) * 4 + s)];
          sq[static_cast<size_t>(c)] = pt.data()[static_cast<size_t>((n * 3 + c) * 4 + s)];
        }
        expect += jsd(sp, sq) / 8.0;
      }
    CHECK(sc_loss({p, pt}, HeadKind::segmentation).item() ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("sc_loss validates shapes and simplex inputs") {
  Rng rng(9);
  Tensor p = probs_tensor(rng, {2, 3});
  Tensor bad = Tensor::full({2, 3}, 0.9);
  CHECK_THROWS_AS(sc_loss({p, bad}, HeadKind::classification), contract_error);
  Tensor seg = probs_tensor(rng, {2, 3, 2, 2});
  CHECK_THROWS_AS(sc_loss({p, seg}, HeadKind::classification), shape_error);
  CHECK_THROWS_AS(sc_loss({p, p}, HeadKind::segmentation), shape_error);
}

TEST_CASE("sc_loss gradient matches finite differences") {
  Subgraph g{"sc_fd",
             [](Rng& r) {
               std::vector<double> a(3 * 4), b(3 * 4);
               for (double& v : a) v = r.normal();
               for (double& v : b) v = r.normal();
               return std::vector<Tensor>{Tensor::from({3, 4}, std::move(a), true),
                                          Tensor::from({3, 4}, std::move(b), true)};
             },
             [](const std::vector<Tensor>& in) {
               PosteriorPair pair{softmax_classes(in[0]), softmax_classes(in[1])};
               return sc_loss(pair, HeadKind::classification);
             },
             nullptr};
  for (uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckReport rep = grad_check(g, seed, 1e-6, 1e-5);
    INFO("seed ", seed, " err ", rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("rc_loss on hand-built features") {
  Tensor teacher = Tensor::full({2, 3, 2, 2}, 1.0);
  SUBCASE("perfect agreement gives zero") {
    CHECK(rc_loss({teacher.clone(), teacher.clone(), teacher}, HeadKind::classification).item() ==
          0.0);
  }
  SUBCASE("unit offset on the original branch gives one half") {
    Tensor off = Tensor::full({2, 3, 2, 2}, 2.0);
    CHECK(rc_loss({off, teacher.clone(), teacher}, HeadKind::classification).item() ==
          doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("single-branch mode keeps only the stylized term") {
    Tensor off = Tensor::full({2, 3, 2, 2}, 2.0);
    CHECK(rc_loss({off, teacher.clone(), teacher}, HeadKind::classification, false).item() == 0.0);
  }
}

TEST_CASE("rc_loss masks segmentation features to the foreground") {
  Rng rng(11);
  auto feat = [&rng](double offset) {
    std::vector<double> v(1 * 2 * 2 * 2);
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) + offset;
    return Tensor::from({1, 2, 2, 2}, std::move(v));
  };
  Tensor teacher = feat(0.0);
  Tensor orig = feat(2.0);  // squared distance 4 everywhere
  Tensor styl = feat(0.0);

  SUBCASE("all-background mask contributes zero") {
    Tensor mask = Tensor::zeros({1, 2, 2});
    CHECK(rc_loss({orig, styl, teacher, mask}, HeadKind::segmentation).item() == 0.0);
  }
  SUBCASE("half foreground averages masked elements only") {
    Tensor mask = Tensor::from({1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
    // orig branch: masked mean of 4 = 4; styl branch 0 -> rc = 2
    CHECK(rc_loss({orig, styl, teacher, mask}, HeadKind::segmentation).item() ==
          doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("missing mask is a contract error") {
    CHECK_THROWS_AS(rc_loss({orig, styl, teacher}, HeadKind::segmentation), contract_error);
  }
  SUBCASE("classification rejects a mask") {
    Tensor mask = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(rc_loss({orig, styl, teacher, mask}, HeadKind::classification),
                    contract_error);
  }
}

TEST_CASE("rc_loss requires detached teacher features") {
  Tensor teacher = Tensor::full({1, 2, 2, 2}, 1.0, true);
  Tensor s = Tensor::full({1, 2, 2, 2}, 1.0);
  CHECK_THROWS_AS(rc_loss({s, s, teacher}, HeadKind::classification), contract_error);
}

TEST_CASE("rc_loss is invariant to a shared spatial permutation") {
  Rng rng(13);
  int n = 2, c = 3, h = 3, w = 3;
  auto rand_feat = [&rng, n, c, h, w]() {
    std::vector<double> v(static_cast<size_t>(n * c * h * w));
    for (double& x : v) x = rng.normal();
    return v;
  };
  std::vector<double> so = rand_feat(), ss = rand_feat(), to = rand_feat();
  std::vector<double> mask(static_cast<size_t>(n * h * w));
  for (double& m : mask) m = rng.uniform() < 0.5 ? 1.0 : 0.0;
  mask[0] = 1.0;

  std::vector<int> perm(static_cast<size_t>(h * w));
  for (int i = 0; i < h * w; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  auto permute_feat = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int s = 0; s < h * w; ++s)
          out[static_cast<size_t>((i * c + ch) * h * w + s)] =
              v[static_cast<size_t>((i * c + ch) * h * w + perm[static_cast<size_t>(s)])];
    return out;
  };
  auto permute_mask = [&](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (int i = 0; i < n; ++i)
      for (int s = 0; s < h * w; ++s)
        out[static_cast<size_t>(i * h * w + s)] =
            v[static_cast<size_t>(i * h * w + perm[static_cast<size_t>(s)])];
    return out;
  };

  auto rc_of = [&](std::vector<double> a, std::vector<double> b, std::vector<double> t,
                   std::vector<double> m) {
    RetroFeatures rf{Tensor::from({n, c, h, w}, std::move(a)),
                     Tensor::from({n, c, h, w}, std::move(b)),
                     Tensor::from({n, c, h, w}, std::move(t)),
                     Tensor::from({n, h, w}, std::move(m))};
    return rc_loss(rf, HeadKind::segmentation).item();
  };
  double base = rc_of(so, ss, to, mask);
  double permuted = rc_of(permute_feat(so), permute_feat(ss), permute_feat(to), permute_mask(mask));
  CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
}

TEST_CASE("rc_loss gradient matches finite differences") {
  Subgraph g{"rc_fd",
             [](Rng& r) {
               auto mk = [&r](bool rg) {
                 std::vector<double> v(2 * 3 * 2 * 2);
                 for (double& x : v) x = r.normal();
                 return Tensor::from({2, 3, 2, 2}, std::move(v), rg);
               };
               return std::vector<Tensor>{mk(true), mk(true), mk(false)};
             },
             [](const std::vector<Tensor>& in) {
               return rc_loss({in[0], in[1], in[2]}, HeadKind::classification);
             },
             nullptr};
  for (uint64_t seed = 0; seed < 5; ++seed) CHECK(grad_check(g, seed, 1e-6, 1e-5).pass);
}

TEST_CASE("total_loss combines components linearly") {
  Tensor t = Tensor::scalar(1.25);
  Tensor sc = Tensor::scalar(0.5);
  Tensor rc = Tensor::scalar(0.125);
  LossWeights w{10.0, 1.0};
  CHECK(total_loss(t, sc, rc, w).item() == doctest::Approx(1.25 + 5.0 + 0.125).epsilon(1e-15));

  LossWeights zero{0.0, 0.0};
  CHECK(total_loss(t, sc, rc, zero).item() == doctest::Approx(1.25).epsilon(1e-15));

  // absent components are dropped
  CHECK(total_loss(t, Tensor(), Tensor(), w).item() == 1.25);
}

TEST_CASE("total_loss rejects non-finite components") {
  Tensor t = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(total_loss(t, Tensor(), Tensor(), LossWeights{}), numeric_error);
}
