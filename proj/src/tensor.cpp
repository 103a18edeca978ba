#include "shade/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace shade {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_debug_checks = false;
}  // namespace

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw shape_error("tensor extents must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  int64_t n = numel_of(shape);
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  int64_t n = numel_of(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw shape_error("Tensor::from: data length does not match shape");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

std::vector<double>& Tensor::mut_data() {
  TensorImpl& t = check();
  if (t.node) throw contract_error("mut_data: only leaf tensors may be mutated");
  return t.data;
}

void Tensor::set_requires_grad(bool rg) {
  TensorImpl& t = check();
  if (t.node) throw contract_error("set_requires_grad: only valid on leaf tensors");
  t.requires_grad = rg;
}

const std::vector<double>& Tensor::grad() const {
  TensorImpl& t = check();
  if (t.grad.empty()) throw contract_error("grad: no gradient present (run backward first)");
  return t.grad;
}

void Tensor::zero_grad() {
  TensorImpl& t = check();
  t.grad.assign(t.data.size(), 0.0);
}

double Tensor::item() const {
  TensorImpl& t = check();
  if (t.data.size() != 1) throw contract_error("item: tensor is not a scalar");
  return t.data[0];
}

Tensor Tensor::detached() const {
  const TensorImpl& t = check();
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = t.shape;
  impl->data = t.data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detached(); }

void backward(const Tensor& loss, bool accumulate) {
  if (!loss.defined()) throw contract_error("backward: undefined loss tensor");
  if (loss.numel() != 1) throw contract_error("backward: loss must be a scalar");

  // Iterative post-order DFS; post-order lists inputs before consumers, so
  // the reversed order is a valid reverse-topological visit of the DAG.
  struct Frame {
    TensorImpl* t;
    size_t next;
  };
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<Frame> stack;
  stack.push_back({loss.impl().get(), 0});
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.t->node && f.next < f.t->node->inputs.size()) {
      TensorImpl* in = f.t->node->inputs[f.next++].get();
      if (seen.insert(in).second) stack.push_back({in, 0});
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }

  // Reset-then-accumulate: interior grads are always scratch; leaf grads
  // survive only when the caller asked to accumulate across calls.
  for (TensorImpl* t : order) {
    bool interior = t->node != nullptr;
    if (interior || !accumulate || t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  }
  loss.impl()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (t->node && t->node->backward) t->node->backward(*t);
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v))
      throw numeric_error(std::string("non-finite value at op '") + op + "'");
  }
}

}  // namespace shade
