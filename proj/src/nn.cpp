#include "shade/nn.hpp"

#include <cmath>
#include <cstring>

namespace shade {

std::string to_string(HeadKind k) {
  return k == HeadKind::classification ? "classification" : "segmentation";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "classification") return HeadKind::classification;
  if (s == "segmentation") return HeadKind::segmentation;
  throw config_error("unknown task '" + s + "'");
}

void ModelSpec::validate() const {
  if (in_channels < 1) throw config_error("ModelSpec: in_channels must be >= 1");
  if (c0 < 2 || c1 < 2) throw config_error("ModelSpec: channel widths must be >= 2");
  if (num_classes < 2) throw config_error("ModelSpec: num_classes must be >= 2");
  if (insertion_point < 0 || insertion_point > 2)
    throw config_error("ModelSpec: insertion_point must be in {0,1,2}");
}

int ModelSpec::channels_at(int layer) const {
  switch (layer) {
    case 0: return c0;
    case 1:
    case 2: return c1;
    default: throw contract_error("ModelSpec::channels_at: layer out of range");
  }
}

std::vector<Tensor*> ModelParams::all() {
  return {&stem_w, &stem_b, &l1_w, &l1_b, &l2_w, &l2_b, &head_w, &head_b};
}

std::vector<const Tensor*> ModelParams::all() const {
  return {&stem_w, &stem_b, &l1_w, &l1_b, &l2_w, &l2_b, &head_w, &head_b};
}

ModelParams ModelParams::clone(Role new_role) const {
  ModelParams c;
  c.role = new_role;
  c.stem_w = stem_w.clone();
  c.stem_b = stem_b.clone();
  c.l1_w = l1_w.clone();
  c.l1_b = l1_b.clone();
  c.l2_w = l2_w.clone();
  c.l2_b = l2_b.clone();
  c.head_w = head_w.clone();
  c.head_b = head_b.clone();
  bool rg = new_role == Role::student;
  c.set_requires_grad(rg);
  return c;
}

void ModelParams::set_requires_grad(bool rg) {
  for (Tensor* t : all()) t->set_requires_grad(rg);
}

namespace {
// He-style fan-in scaling suits the ReLU stack.
Tensor fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in, bool rg) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<size_t>(numel_of(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), rg);
}
}  // namespace

ModelParams init_params(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.role = Role::student;
  // One derived stream per layer keeps layer draws independent of each
  // other's parameter counts.
  Rng r0 = Rng::derived(seed, 0);
  Rng r1 = Rng::derived(seed, 1);
  Rng r2 = Rng::derived(seed, 2);
  Rng r3 = Rng::derived(seed, 3);
  p.stem_w = fan_in_uniform(r0, {spec.c0, spec.in_channels, 3, 3}, spec.in_channels * 9, true);
  p.stem_b = Tensor::zeros({spec.c0}, true);
  p.l1_w = fan_in_uniform(r1, {spec.c1, spec.c0, 3, 3}, spec.c0 * 9, true);
  p.l1_b = Tensor::zeros({spec.c1}, true);
  p.l2_w = fan_in_uniform(r2, {spec.c1, spec.c1, 3, 3}, spec.c1 * 9, true);
  p.l2_b = Tensor::zeros({spec.c1}, true);
  if (spec.head == HeadKind::classification) {
    p.head_w = fan_in_uniform(r3, {spec.c1, spec.num_classes}, spec.c1, true);
    p.head_b = Tensor::zeros({spec.num_classes}, true);
  } else {
    p.head_w = fan_in_uniform(r3, {spec.num_classes, spec.c1, 1, 1}, spec.c1, true);
    p.head_b = Tensor::zeros({spec.num_classes}, true);
  }
  return p;
}

uint64_t params_hash(const ModelParams& p) {
  uint64_t h = 0xCBF29CE484222325ULL;
  auto mix_bytes = [&h](const void* ptr, size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(ptr);
    for (size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const Tensor* t : p.all())
    mix_bytes(t->data().data(), t->data().size() * sizeof(double));
  return h;
}

Tensor forward_until(const ModelSpec& spec, const ModelParams& p, const Tensor& images,
                     int through_layer) {
  if (through_layer < 0 || through_layer > 2)
    throw contract_error("forward_until: layer out of range");
  // Fixed input centering: raw pixels live in [0,~2] with mean near 0.75;
  // the constants are domain-independent so relative style shifts survive.
  Tensor x = scalar_affine(images, 1.0 / 0.6, -1.25);
  Tensor h = relu(conv2d(x, p.stem_w, p.stem_b, 1, 1));
  if (through_layer == 0) return h;
  h = relu(conv2d(h, p.l1_w, p.l1_b, 2, 1));
  if (through_layer == 1) return h;
  return relu(conv2d(h, p.l2_w, p.l2_b, 1, 1));
}

ForwardTrace forward_from(const ModelSpec& spec, const ModelParams& p, const Tensor& feature,
                          int from_layer) {
  if (from_layer < 0 || from_layer > 2)
    throw contract_error("forward_from: layer out of range");
  Tensor h = feature;
  if (from_layer < 1) h = relu(conv2d(h, p.l1_w, p.l1_b, 2, 1));
  if (from_layer < 2) h = relu(conv2d(h, p.l2_w, p.l2_b, 1, 1));
  ForwardTrace t;
  t.backbone = h;
  if (spec.head == HeadKind::classification) {
    t.rc_feature = global_avg_pool(h);
    t.logits = add_bias(matmul(t.rc_feature, p.head_w), p.head_b);
  } else {
    t.rc_feature = h;
    t.logits = conv2d(h, p.head_w, p.head_b, 1, 0);
  }
  return t;
}

ForwardTrace forward(const ModelSpec& spec, const ModelParams& p, const Tensor& images,
                     const StyleInjector* injector) {
  Tensor h = forward_until(spec, p, images, spec.insertion_point);
  if (injector && *injector) h = (*injector)(h);
  return forward_from(spec, p, h, spec.insertion_point);
}

void OptimState::init_for(const ModelParams& p) {
  velocity.clear();
  for (const Tensor* t : p.all())
    velocity.emplace_back(t->data().size(), 0.0);
}

double poly_lr(int64_t iter, const OptimState& s) {
  if (iter < 0 || iter > s.max_iter) throw std::out_of_range("poly_lr: iter outside [0, max_iter]");
  double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(s.max_iter);
  return s.base_lr * std::pow(frac, s.power);
}

void sgd_step(ModelParams& params, OptimState& state, double lr) {
  if (params.role != Role::student)
    throw contract_error("sgd_step: only student parameters are optimized");
  auto ts = params.all();
  if (state.velocity.size() != ts.size()) throw contract_error("sgd_step: optimizer not initialized");
  for (size_t i = 0; i < ts.size(); ++i) {
    Tensor& t = *ts[i];
    if (!t.has_grad()) throw contract_error("sgd_step: missing gradient on a parameter");
    const std::vector<double>& g = t.grad();
    std::vector<double>& w = t.mut_data();
    std::vector<double>& v = state.velocity[i];
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = state.momentum * v[j] + (g[j] + state.weight_decay * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

Tensor task_loss(const Tensor& logits, const std::vector<int>& labels, HeadKind head) {
  int n = logits.dim(0), k = logits.dim(1);
  int64_t spatial = 1;
  if (head == HeadKind::classification) {
    if (logits.rank() != 2) throw shape_error("task_loss: classification expects (N,K) logits");
    if (static_cast<int>(labels.size()) != n)
      throw shape_error("task_loss: need one label per sample");
  } else {
    if (logits.rank() != 4) throw shape_error("task_loss: segmentation expects (N,K,h,w) logits");
    spatial = static_cast<int64_t>(logits.dim(2)) * logits.dim(3);
    if (static_cast<int64_t>(labels.size()) != n * spatial)
      throw shape_error("task_loss: need one label per pixel");
  }
  // One-hot selector over the class axis; cross entropy is the negated
  // masked mean of log-probabilities (the mask picks N or N*h*w entries).
  std::vector<double> onehot(static_cast<size_t>(logits.numel()), 0.0);
  for (int i = 0; i < n; ++i) {
    for (int64_t s = 0; s < spatial; ++s) {
      int y = labels[static_cast<size_t>(i * spatial + s)];
      if (y < 0 || y >= k)
        throw data_error("task_loss: label " + std::to_string(y) + " out of range [0," +
                         std::to_string(k) + ")");
      onehot[static_cast<size_t>((static_cast<int64_t>(i) * k + y) * spatial + s)] = 1.0;
    }
  }
  Tensor mask = Tensor::from(logits.shape(), std::move(onehot));
  Tensor logp = log_floor(softmax_classes(logits), 1e-12);
  return scalar_affine(masked_mean(logp, mask), -1.0, 0.0);
}

void ema_update(ModelParams& teacher, const ModelParams& student, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw contract_error("ema_update: decay must be in [0,1)");
  if (teacher.role == Role::frozen_teacher)
    throw contract_error("ema_update: frozen teacher must not be updated");
  auto td = teacher.all();
  auto sd = student.all();
  for (size_t i = 0; i < td.size(); ++i) {
    if (td[i]->shape() != sd[i]->shape())
      throw contract_error("ema_update: parameter shape mismatch");
    std::vector<double>& t = td[i]->mut_data();
    const std::vector<double>& s = sd[i]->data();
    for (size_t j = 0; j < t.size(); ++j) t[j] = decay * t[j] + (1.0 - decay) * s[j];
  }
}

}  // namespace shade
