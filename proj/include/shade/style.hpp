#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "shade/data.hpp"
#include "shade/nn.hpp"
#include "shade/rng.hpp"
#include "shade/tensor.hpp"

namespace shade {

// Channel-wise (mean, std) of one sample's feature map - the non-content
// appearance of the sample at the insertion point.
struct StyleVector {
  std::vector<double> mu;
  std::vector<double> sigma;

  int channels() const { return static_cast<int>(mu.size()); }
};

// C style rows spanning the observed style space, selected either by
// farthest point sampling over the pool or as k-means centroids.
struct BasisStyles {
  int channels = 0;
  std::vector<StyleVector> rows;
  std::string selector;         // "fps" | "kmeans"
  int64_t selected_at = 0;      // epoch stamp
  std::vector<int> pool_indices;  // fps only: positions of rows in the pool

  nlohmann::json to_json() const;
  static BasisStyles from_json(const nlohmann::json& j);
};

struct CombinationWeight {
  std::vector<double> w;
};

// Embedding used for selection and diagnostics: mu and sigma concatenated,
// Euclidean metric.
std::vector<double> style_embed(const StyleVector& s);
double style_distance(const StyleVector& a, const StyleVector& b);

// Per-sample channel statistics of a (N,C,h,w) feature map; sigma uses
// population variance plus eps under the square root. Value-level (no graph).
std::vector<StyleVector> extract_style(const Tensor& features, double eps = 1e-6);

// AdaIN restyling: target.sigma * (x - mu(x))/sigma(x) + target.mu, one
// target per sample. The statistics (both the input's own and the target's)
// act as constants; gradients flow through the content path only.
Tensor apply_style(const Tensor& features, const std::vector<StyleVector>& targets,
                   double eps = 1e-6);

// Greedy farthest point sampling over the (mu||sigma) embedding. The first
// pick is the point farthest from the pool centroid; every later pick
// maximizes the minimum distance to the selected set. Ties break toward the
// lowest index, so the result is deterministic.
BasisStyles fps_select(const std::vector<StyleVector>& pool, int count);

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded to
// the point farthest from their stale centroid. Deterministic given seed.
// wcss_history, when given, receives the objective after each update step.
BasisStyles kmeans_select(const std::vector<StyleVector>& pool, int count, uint64_t seed,
                          int iters, std::vector<double>* wcss_history = nullptr);

// Dirichlet(1/C, ..., 1/C) draw via normalized Gamma variates.
CombinationWeight sample_dirichlet(int c, Rng& rng);

// New style as the convex combination of basis rows: mu = w^T mu_base etc.
StyleVector hallucinate(const BasisStyles& basis, const CombinationWeight& w);

// Baseline: mu ~ N(0,1), sigma = |N(0,1)| per channel.
StyleVector random_style(int c, Rng& rng);

// Baseline: per-sample mix of own style with a shuffled partner's style,
// lambda ~ Beta(alpha, alpha).
Tensor mixstyle_batch(const Tensor& features, Rng& rng, double alpha = 0.1, double eps = 1e-6);

// Baseline: wholesale swap with the shuffled partner's style.
Tensor crossnorm_batch(const Tensor& features, Rng& rng, double eps = 1e-6);

// Styles of min(max_samples, N) uniformly sampled training images, computed
// with the current parameters up to the insertion point, without gradients.
std::vector<StyleVector> collect_styles(const ModelSpec& spec, const ModelParams& params,
                                        const DomainDataset& dataset, int insertion_point,
                                        int max_samples, Rng& rng, double eps = 1e-6);

nlohmann::json styles_to_json(const std::vector<StyleVector>& styles, int channels,
                              const std::string& selector);

}  // namespace shade
