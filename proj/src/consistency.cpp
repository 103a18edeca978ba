#include "shade/consistency.hpp"

#include <cmath>

#include "shade/ops.hpp"

namespace shade {

namespace {

constexpr double kLogFloor = 1e-12;

void require_simplex(const Tensor& t, const char* what) {
  int n = t.dim(0), k = t.dim(1);
  int64_t spatial = t.rank() == 4 ? static_cast<int64_t>(t.dim(2)) * t.dim(3) : 1;
  const auto& v = t.data();
  for (int i = 0; i < n; ++i) {
    for (int64_t s = 0; s < spatial; ++s) {
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        double p = v[static_cast<size_t>((static_cast<int64_t>(i) * k + c) * spatial + s)];
        if (p < -1e-6)
          throw contract_error(std::string(what) + ": negative probability entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw contract_error(std::string(what) + ": probabilities do not sum to 1");
    }
  }
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw contract_error("jsd: dimension mismatch");
  double ps = 0.0, qs = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < -1e-6 || q[i] < -1e-6) throw contract_error("jsd: negative probability entry");
    ps += p[i];
    qs += q[i];
  }
  if (std::abs(ps - 1.0) > 1e-6 || std::abs(qs - 1.0) > 1e-6)
    throw contract_error("jsd: inputs must lie on the simplex");
  // The two KL sums accumulate separately so jsd(p,q) and jsd(q,p) perform
  // identical operation sequences and agree bitwise.
  double kl_p = 0.0, kl_q = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * (std::log(p[i]) - std::log(m));
    if (q[i] > 0.0) kl_q += q[i] * (std::log(q[i]) - std::log(m));
  }
  return 0.5 * (kl_p + kl_q);
}

Tensor sc_loss(const PosteriorPair& pair, HeadKind task) {
  const Tensor& p = pair.p;
  const Tensor& pt = pair.p_tilde;
  if (!p.defined() || !pt.defined()) throw contract_error("sc_loss: undefined posterior");
  if (p.shape() != pt.shape()) throw shape_error("sc_loss: branch shapes differ");
  int expected_rank = task == HeadKind::classification ? 2 : 4;
  if (p.rank() != expected_rank)
    throw shape_error("sc_loss: posterior rank does not match the task");
  require_simplex(p, "sc_loss");
  require_simplex(pt, "sc_loss");

  int k = p.dim(1);
  // Per-position JSD summed over the class axis, averaged over positions:
  // mean_all runs over N*K(*h*w), so scaling by K restores the per-position
  // class sum. The log floor keeps boundary gradients finite.
  Tensor q = scalar_affine(add(p, pt), 0.5, 0.0);
  Tensor log_q = log_floor(q, kLogFloor);
  Tensor kl_p = mul(p, sub(log_floor(p, kLogFloor), log_q));
  Tensor kl_pt = mul(pt, sub(log_floor(pt, kLogFloor), log_q));
  Tensor sum = add(mean_all(kl_p), mean_all(kl_pt));
  return scalar_affine(sum, 0.5 * static_cast<double>(k), 0.0);
}

Tensor rc_loss(const RetroFeatures& rf, HeadKind task, bool both_branches) {
  const Tensor& so = rf.f_student_orig;
  const Tensor& ss = rf.f_student_styl;
  const Tensor& to = rf.f_teacher_orig;
  if (!so.defined() || !ss.defined() || !to.defined())
    throw contract_error("rc_loss: undefined feature tensor");
  if (so.shape() != to.shape() || ss.shape() != to.shape())
    throw shape_error("rc_loss: feature shapes differ");
  if (to.requires_grad())
    throw contract_error("rc_loss: teacher features must be detached");

  Tensor mask4;
  if (task == HeadKind::segmentation) {
    if (!rf.fg_mask.defined())
      throw contract_error("rc_loss: segmentation requires a foreground mask");
    if (rf.fg_mask.rank() != 3 || so.rank() != 4 || rf.fg_mask.dim(0) != so.dim(0) ||
        rf.fg_mask.dim(1) != so.dim(2) || rf.fg_mask.dim(2) != so.dim(3))
      throw shape_error("rc_loss: mask must be (N,h,w) at feature resolution");
    // replicate the plane mask across channels
    int n = so.dim(0), c = so.dim(1);
    int64_t hw = static_cast<int64_t>(so.dim(2)) * so.dim(3);
    std::vector<double> m(static_cast<size_t>(n) * c * hw);
    const auto& src = rf.fg_mask.data();
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int64_t t = 0; t < hw; ++t)
          m[static_cast<size_t>((static_cast<int64_t>(i) * c + ch) * hw + t)] =
              src[static_cast<size_t>(i * hw + t)];
    mask4 = Tensor::from(so.shape(), std::move(m));
  } else if (rf.fg_mask.defined()) {
    throw contract_error("rc_loss: classification takes no foreground mask");
  }

  auto msd = [&](const Tensor& a) {
    Tensor d2 = square(sub(a, to));
    return mask4.defined() ? masked_mean(d2, mask4) : mean_all(d2);
  };
  if (!both_branches) return msd(ss);
  return scalar_affine(add(msd(so), msd(ss)), 0.5, 0.0);
}

Tensor total_loss(const Tensor& task, const Tensor& sc, const Tensor& rc, const LossWeights& w) {
  if (!task.defined()) throw contract_error("total_loss: task loss required");
  if (!(w.lambda_sc >= 0.0) || !(w.lambda_rc >= 0.0))
    throw contract_error("total_loss: loss weights must be non-negative and finite");
  for (const Tensor* t : {&task, &sc, &rc})
    if (t->defined() && !std::isfinite(t->item()))
      throw numeric_error("total_loss: non-finite loss component");
  Tensor out = task;
  if (sc.defined()) out = add(out, scalar_affine(sc, w.lambda_sc, 0.0));
  if (rc.defined()) out = add(out, scalar_affine(rc, w.lambda_rc, 0.0));
  return out;
}

}  // namespace shade
