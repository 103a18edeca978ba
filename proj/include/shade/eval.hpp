#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "shade/data.hpp"
#include "shade/nn.hpp"

namespace shade {

struct ConfusionMatrix {
  int k = 0;
  std::vector<uint64_t> counts;  // k*k row-major, rows = ground truth

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes) : k(classes), counts(static_cast<size_t>(classes) * classes, 0) {}
  uint64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * k + pred]; }
  uint64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * k + pred]; }
  uint64_t total() const;
  double accuracy() const;
  // IoU per class; classes absent from the ground truth come back negative.
  std::vector<double> per_class_iou() const;
  // Mean IoU over classes present in the ground truth.
  double miou() const;
};

struct EvalResult {
  double metric = 0.0;  // accuracy or mIoU
  double mean_task_loss = 0.0;
  ConfusionMatrix cm;
};

// Deterministic full-dataset evaluation with the final parameters.
// Segmentation compares at head resolution against nearest-downsampled masks.
EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const DomainDataset& ds,
                    HeadKind task, int batch_size = 64);

// source metric minus the mean target metric.
double generalization_gap(double source_metric, const std::vector<double>& target_metrics);

// Deterministic 2-D PCA (centered covariance eigendecomposition).
struct Pca2d {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> axes;
  std::array<double, 2> explained_variance;  // fraction of total variance

  std::array<double, 2> project(const std::vector<double>& x) const;
};
Pca2d fit_pca2d(const std::vector<std::vector<double>>& points);

struct StyleSpaceOptions {
  int pool_max = 1024;
  int target_pool_max = 256;
  int n_generated = 200;
  int kmeans_iters = 50;
  uint64_t seed = 0;
  double feature_eps = 1e-6;
};

// Styles of every domain projected to 2-D, with FPS and k-means bases over
// the source pool, hallucinated samples, and basis diagnostics.
nlohmann::json export_style_space(const ModelSpec& spec, const ModelParams& params,
                                  const Benchmark& bench, const StyleSpaceOptions& opts);

}  // namespace shade
