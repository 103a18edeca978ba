#pragma once

#include <span>
#include <vector>

#include "shade/nn.hpp"
#include "shade/tensor.hpp"

namespace shade {

// Posterior probabilities of the original and stylized branches, both
// distributions along the class axis: (N,K) or (N,K,h,w).
struct PosteriorPair {
  Tensor p;
  Tensor p_tilde;
};

// Features entering retrospection consistency. Teacher features must be
// detached. fg_mask (N,h,w at feature resolution, values 0/1) is required
// for segmentation and absent for classification.
struct RetroFeatures {
  Tensor f_student_orig;
  Tensor f_student_styl;
  Tensor f_teacher_orig;
  Tensor fg_mask;
};

struct LossWeights {
  double lambda_sc = 10.0;
  double lambda_rc = 1.0;
};

// Jensen-Shannon divergence in nats between two distributions, with the
// midpoint mixture as reference: 0.5*(KL(p||q_mid) + KL(q||q_mid)).
// Symmetric, bounded by ln 2; zero entries follow 0*log(0/x) = 0.
double jsd(std::span<const double> p, std::span<const double> q);

// Mean JSD between the branch posteriors: over samples for classification,
// over all pixels (foreground and background) for segmentation.
Tensor sc_loss(const PosteriorPair& pair, HeadKind task);

// Mean squared feature distance to the teacher's view of the original
// sample, averaged over both student branches (single-branch keeps only the
// stylized one). Segmentation restricts the mean to foreground positions;
// an all-background batch contributes 0.
Tensor rc_loss(const RetroFeatures& rf, HeadKind task, bool both_branches = true);

// task + lambda_sc * sc + lambda_rc * rc. Undefined component tensors are
// treated as absent terms.
Tensor total_loss(const Tensor& task, const Tensor& sc, const Tensor& rc, const LossWeights& w);

}  // namespace shade
