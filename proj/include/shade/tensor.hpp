#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "shade/error.hpp"

namespace shade {

struct TensorImpl;

// One recorded op in the reverse-mode graph: an op tag for diagnostics, the
// parent tensors, and a closure that scatters the output gradient into the
// parents' grad buffers. Saved forward context lives in the closure.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;    // empty until backward touches this tensor
  std::shared_ptr<Node> node;  // creator op; null for leaves
};

int64_t numel_of(const std::vector<int>& shape);

// Dense 64-bit tensor handle with shared ownership of its storage. Values
// are immutable once the tensor has been consumed by an op; only leaves
// (parameters) are mutated in place, between steps, via mut_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return check().shape; }
  int dim(int i) const { return check().shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(check().shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(check().data.size()); }

  const std::vector<double>& data() const { return check().data; }
  std::vector<double>& mut_data();  // leaves only

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool rg);  // leaves only
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;  // scalar tensors only

  Tensor detached() const;  // same storage values, fresh leaf
  Tensor clone() const;     // deep copy, fresh leaf

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  TensorImpl& check() const {
    if (!impl_) throw contract_error("use of undefined Tensor");
    return *impl_;
  }
  std::shared_ptr<TensorImpl> impl_;
};

// Computes d(loss)/d(leaf) for every requires_grad leaf reachable from
// `loss`. By default all reachable grad buffers are reset first; with
// accumulate=true leaf gradients from earlier calls are kept and added to.
void backward(const Tensor& loss, bool accumulate = false);

// Scoped suppression of graph recording (forward values only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Non-finite detection at op boundaries; off by default (debug-only cost).
void set_debug_checks(bool on);
bool debug_checks();
void check_finite(const Tensor& t, const char* op);

}  // namespace shade
