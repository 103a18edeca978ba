#pragma once

#include <functional>
#include <string>
#include <vector>

#include "shade/rng.hpp"
#include "shade/tensor.hpp"

namespace shade {

struct GradCheckReport {
  std::string subgraph;
  double max_rel_err = 0.0;
  bool pass = false;
  int checked = 0;           // coordinates compared
  int excluded_trials = 0;   // trials skipped as near-singular
  std::vector<double> per_input_max;  // max error per grad-carrying input
};

// A checkable subgraph: leaf tensors (only those with requires_grad are
// perturbed) and a builder producing a scalar loss from them. near_singular,
// when set, marks a sampled trial as sitting too close to a derivative
// singularity; such trials are excluded rather than compared.
struct Subgraph {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> build;
  std::function<bool(const std::vector<Tensor>&)> near_singular;
};

// Central-difference comparison of analytic gradients on one sampled trial.
// rel err per coordinate = |analytic - fd| / max(1, |analytic|, |fd|).
GradCheckReport grad_check(const Subgraph& g, uint64_t seed, double eps, double tol);

// Named registry covering every differentiable op kind plus composites.
GradCheckReport grad_check(const std::string& subgraph, uint64_t seed, double eps, double tol);
std::vector<std::string> gradcheck_subgraphs();

}  // namespace shade
