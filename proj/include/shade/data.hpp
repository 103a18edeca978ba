#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "shade/rng.hpp"
#include "shade/tensor.hpp"

namespace shade {

enum class ShapeKind { rectangle, ellipse, triangle, cross };
std::string to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& s);

// One component of the per-domain style mixture: each image draws a
// per-channel affine (gain, bias) from exactly one mode, plus pixel noise.
struct StyleMode {
  double weight = 1.0;
  std::array<double, 3> gain_mean{1.0, 1.0, 1.0};
  std::array<double, 3> gain_std{0.05, 0.05, 0.05};
  std::array<double, 3> bias_mean{0.0, 0.0, 0.0};
  std::array<double, 3> bias_std{0.02, 0.02, 0.02};
  double noise_std = 0.01;
};

struct DomainConfig {
  std::string name = "domain";
  int n_samples = 0;
  int image_size = 32;
  std::vector<ShapeKind> shape_classes{ShapeKind::rectangle, ShapeKind::ellipse,
                                       ShapeKind::triangle, ShapeKind::cross};
  std::vector<StyleMode> style_modes{StyleMode{}};
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DomainConfig from_json(const nlohmann::json& j);
};

// Labeled synthetic samples for one domain. Masks use 0 for background and
// 1..K-1 for the shape classes; class_labels are 0-based shape indices.
struct DomainDataset {
  Tensor images;                  // (N,3,H,W)
  std::vector<int> class_labels;  // N
  std::vector<int> pixel_masks;   // N*H*W row-major
  DomainConfig provenance;

  int n() const { return images.defined() ? images.dim(0) : 0; }
  int height() const { return images.dim(2); }
  int width() const { return images.dim(3); }
  int num_mask_classes() const { return static_cast<int>(provenance.shape_classes.size()) + 1; }
};

// Renders one shape per image on a textured background, then applies the
// per-image style affine and noise. Geometry and style draw from separate
// derived streams, so masks are invariant to the style_modes configuration.
DomainDataset gen_domain(const DomainConfig& cfg);

// Versioned binary dataset + JSON provenance sidecar at path + ".json".
void save_dataset(const DomainDataset& ds, const std::string& path);
DomainDataset load_dataset(const std::string& path);

// 8-bit PNG dump of the first `limit` images, for inspection only.
void export_pngs(const DomainDataset& ds, const std::string& dir, int limit);

struct Benchmark {
  DomainDataset source_train;
  DomainDataset source_val;
  std::vector<DomainDataset> targets;
};

// Default benchmark: a source with one dominant and two rare style modes,
// plus three targets on held-out modes of increasing distance from the
// dominant one. Content distribution is identical across domains.
Benchmark make_benchmark(uint64_t seed);
DomainConfig default_source_config(uint64_t seed, int n_samples, const std::string& name);
std::vector<DomainConfig> default_target_configs(uint64_t seed);

// Teacher pretraining distribution: every mode equally likely with widened
// parameter spread.
DomainConfig broaden(const DomainConfig& cfg);

void save_benchmark(const Benchmark& b, const std::string& dir);
Benchmark load_benchmark(const std::string& dir);

// Batch assembly.
Tensor gather_images(const DomainDataset& ds, const std::vector<int>& idx);
std::vector<int> gather_labels(const DomainDataset& ds, const std::vector<int>& idx);
std::vector<int> gather_masks(const DomainDataset& ds, const std::vector<int>& idx);

}  // namespace shade
