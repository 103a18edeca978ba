#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shade/ops.hpp"
#include "shade/rng.hpp"
#include "shade/tensor.hpp"

namespace shade {

enum class HeadKind { classification, segmentation };
enum class Role { student, frozen_teacher, ema_teacher };

std::string to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

// Toy backbone: three conv-relu layers with a task head.
//   layer 0 (stem): conv3x3 in->c0, stride 1
//   layer 1:        conv3x3 c0->c1, stride 2
//   layer 2:        conv3x3 c1->c1, stride 1
// Classification head: global average pool + linear c1->K.
// Segmentation head: conv1x1 c1->K at half input resolution.
// The style branch is injected after layer `insertion_point`.
struct ModelSpec {
  HeadKind head = HeadKind::classification;
  int in_channels = 3;
  int c0 = 16;
  int c1 = 32;
  int num_classes = 4;
  int insertion_point = 0;

  void validate() const;
  int channels_at(int layer) const;  // feature channels after the given layer
};

struct ModelParams {
  Role role = Role::student;
  Tensor stem_w, stem_b, l1_w, l1_b, l2_w, l2_b, head_w, head_b;

  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
  ModelParams clone(Role new_role) const;
  void set_requires_grad(bool rg);
};

// Fan-in scaled uniform weights, zero biases; deterministic in (spec, seed).
ModelParams init_params(const ModelSpec& spec, uint64_t seed);

// FNV-1a over the raw parameter bytes, in fixed parameter order.
uint64_t params_hash(const ModelParams& p);

struct ForwardTrace {
  Tensor backbone;    // output of layer 2, (N,c1,h/2,w/2)
  Tensor rc_feature;  // pooled (N,c1) for classification, backbone for segmentation
  Tensor logits;      // (N,K) or (N,K,h/2,w/2)
};

using StyleInjector = std::function<Tensor(const Tensor&)>;

// Forward through layers (from_layer..2] starting at a feature map that is
// the output of layer (from_layer). from_layer == -1 starts from images.
Tensor forward_until(const ModelSpec&, const ModelParams&, const Tensor& images, int through_layer);
ForwardTrace forward_from(const ModelSpec&, const ModelParams&, const Tensor& feature, int from_layer);
ForwardTrace forward(const ModelSpec&, const ModelParams&, const Tensor& images,
                     const StyleInjector* injector = nullptr);

struct OptimState {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double power = 0.9;
  int64_t max_iter = 1;
  std::vector<std::vector<double>> velocity;  // per parameter, shape-matched

  void init_for(const ModelParams& p);
};

// Polynomial decay: base_lr * (1 - iter/max_iter)^power.
double poly_lr(int64_t iter, const OptimState& s);

// v <- momentum*v + (grad + wd*w); w <- w - lr*v. Gradients are read from
// the parameter tensors and must be populated.
void sgd_step(ModelParams& params, OptimState& state, double lr);

// Mean cross-entropy over samples (classification: logits (N,K), labels (N))
// or over all labeled pixels (segmentation: logits (N,K,h,w), labels (N*h*w)).
Tensor task_loss(const Tensor& logits, const std::vector<int>& labels, HeadKind head);

// t <- decay*t + (1-decay)*s, elementwise; requires 0 <= decay < 1.
void ema_update(ModelParams& teacher, const ModelParams& student, double decay);

}  // namespace shade
