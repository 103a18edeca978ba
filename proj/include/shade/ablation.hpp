#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "shade/train.hpp"

namespace shade {

struct AblationCell {
  std::string config_id;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double source_metric = 0.0;
  std::vector<double> target_metrics;
  double target_mean = 0.0;
  double gap = 0.0;
};

struct AblationTables {
  std::vector<std::string> target_names;
  std::vector<AblationCell> ablation;         // 6 rows per seed
  std::vector<AblationCell> style_variation;  // baseline + 5 style rows per seed
};

// The fixed config grid behind the two tables. Both tables share the ERM
// row and the fps row equals full SHADE, so each unique config runs once
// per seed and its result is emitted wherever it appears.
TrainConfig ablation_config(const TrainConfig& base, const std::string& config_id);
const std::vector<std::string>& ablation_row_ids();         // erm..shade
const std::vector<std::string>& style_variation_row_ids();  // erm + 5 generators

// Runs the grid over the seeds; cells run in parallel up to `jobs` workers
// and failures annotate their cell without stopping the grid.
AblationTables run_ablation(const Benchmark& bench, const ModelParams& teacher,
                            const TrainConfig& base, const std::vector<uint64_t>& seeds, int jobs,
                            std::ostream* log = nullptr);

// One CSV per table: a row per (config, seed) plus mean/sd aggregate rows.
void write_ablation_csv(const std::vector<AblationCell>& rows,
                        const std::vector<std::string>& target_names, const std::string& path);

}  // namespace shade
