#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shade/consistency.hpp"
#include "shade/data.hpp"
#include "shade/eval.hpp"
#include "shade/nn.hpp"
#include "shade/style.hpp"

namespace shade {

enum class StyleGenerator { shm_fps, shm_kmeans, mixstyle, crossnorm, random_gauss };
enum class RcTeacher { frozen, ema };

std::string to_string(StyleGenerator g);
StyleGenerator style_generator_from_string(const std::string& s);
std::string to_string(RcTeacher t);
RcTeacher rc_teacher_from_string(const std::string& s);

// Full description of one training run. `epochs` is the schedule horizon
// (poly decay reaches zero there); runs can be stopped early and resumed
// without changing the horizon. interval_k = 0 selects the basis exactly
// once at epoch 0 (the "inf" arm); k >= 1 re-selects every k epochs.
struct TrainConfig {
  HeadKind task = HeadKind::classification;
  bool use_shm = false;
  bool use_sc = false;
  bool use_rc = false;
  bool ce_on_stylized = false;
  // Start the student from the pretrained teacher, mirroring the role of
  // pretrained backbones in the full-scale protocol. Requires a teacher.
  bool init_from_teacher = false;
  RcTeacher rc_teacher = RcTeacher::frozen;
  StyleGenerator style_generator = StyleGenerator::shm_fps;
  double lambda_sc = 10.0;
  double lambda_rc = 0.1;
  int insertion_point = 0;
  int interval_k = 3;
  int batch_size = 32;
  int epochs = 16;
  int iters_per_epoch = 16;  // 0: one full pass over the training set
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;
  double ema_decay = 0.999;
  int style_pool_max = 1024;
  int kmeans_iters = 25;
  // Instance-statistics epsilon for the training pipeline. Deliberately
  // larger than the op-level default: without normalization layers the
  // restyle scale sigma_target/sigma_own on a near-dead channel is capped
  // at roughly sigma_max/sqrt(eps).
  double feature_eps = 1e-2;
  int c0 = 16;
  int c1 = 32;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  // Unset fields fall back to task-dependent defaults (lambda_rc and
  // batch_size differ between classification and segmentation).
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig defaults_for(HeadKind task);

  ModelSpec model_spec(int num_classes) const;
};

struct EpochMetrics {
  int epoch = 0;
  std::string split;   // train | val | test
  std::string domain;
  double task_loss = 0.0;
  double sc_loss = 0.0;
  double rc_loss = 0.0;
  double metric = 0.0;  // accuracy or mIoU
  double lr = 0.0;
  int basis_epoch = -1;
};

extern const char* const kMetricsCsvHeader;
std::string metrics_csv_row(const EpochMetrics& m);
void append_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

// Everything needed to continue a run bit-exactly from an epoch boundary.
struct Checkpoint {
  ModelSpec spec;
  TrainConfig config;
  ModelParams student;
  bool has_ema = false;
  ModelParams ema;
  OptimState optim;
  int64_t iteration = 0;
  int epoch = 0;  // completed epochs
  std::string rng_data_state;
  std::string rng_style_state;
  std::string rng_pool_state;
  BasisStyles basis;
  int basis_epoch = -1;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// ERM training of the teacher on a broadened-style variant of the source
// generator; returned parameters are frozen.
ModelParams pretrain_teacher(const Benchmark& bench, const TrainConfig& cfg,
                             std::vector<EpochMetrics>* metrics = nullptr);

// Same run, returned as a checkpoint so the CLI can persist the teacher
// with its training provenance.
TrainResult pretrain_teacher_run(const Benchmark& bench, const TrainConfig& cfg);

// Student training per the configured method flags. The teacher is required
// iff use_rc with a frozen rc_teacher. stop_after_epoch (when > 0) ends the
// run early at that epoch boundary while keeping the schedule horizon; a
// resume checkpoint continues the same run bit-exactly.
TrainResult train_student(const Benchmark& bench, const ModelParams* teacher,
                          const TrainConfig& cfg, const std::string& metrics_csv_path = "",
                          int stop_after_epoch = 0, const Checkpoint* resume = nullptr);

// Style pool collection followed by the configured selector; stamped with
// the epoch. Exposed for the re-selection schedule and its tests.
BasisStyles reselect_basis(const ModelSpec& spec, const ModelParams& params,
                           const DomainDataset& dataset, const TrainConfig& cfg, int epoch,
                           Rng& pool_rng);

uint64_t checkpoint_param_hash(const Checkpoint& c);

}  // namespace shade
