#include "shade/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>

namespace shade {

TrainConfig ablation_config(const TrainConfig& base, const std::string& id) {
  TrainConfig c = base;
  c.use_shm = true;
  c.use_sc = true;
  c.use_rc = true;
  c.ce_on_stylized = false;
  c.rc_teacher = RcTeacher::frozen;
  c.style_generator = StyleGenerator::shm_fps;
  if (id == "erm") {
    c.use_shm = c.use_sc = c.use_rc = false;
  } else if (id == "shm_only") {
    c.use_sc = c.use_rc = false;
    c.ce_on_stylized = true;
  } else if (id == "shm_sc") {
    c.use_rc = false;
  } else if (id == "shm_rc") {
    c.use_sc = false;
  } else if (id == "shm_sc_ema") {
    c.rc_teacher = RcTeacher::ema;
  } else if (id == "shade" || id == "fps_basis") {
    // full method
  } else if (id == "random_style") {
    c.style_generator = StyleGenerator::random_gauss;
  } else if (id == "mixstyle") {
    c.style_generator = StyleGenerator::mixstyle;
  } else if (id == "crossnorm") {
    c.style_generator = StyleGenerator::crossnorm;
  } else if (id == "kmeans_basis") {
    c.style_generator = StyleGenerator::shm_kmeans;
  } else {
    throw contract_error("ablation_config: unknown config id '" + id + "'");
  }
  return c;
}

const std::vector<std::string>& ablation_row_ids() {
  static const std::vector<std::string> ids{"erm",    "shm_only",   "shm_sc",
                                            "shm_rc", "shm_sc_ema", "shade"};
  return ids;
}

const std::vector<std::string>& style_variation_row_ids() {
  static const std::vector<std::string> ids{"erm",       "random_style", "mixstyle",
                                            "crossnorm", "kmeans_basis", "fps_basis"};
  return ids;
}

namespace {

// Canonical key: rows that share a config run once per seed.
std::string unique_key(const TrainConfig& base, const std::string& id) {
  return ablation_config(base, id).to_json().dump();
}

AblationCell run_cell(const Benchmark& bench, const ModelParams& teacher, const TrainConfig& base,
                      const std::string& id, uint64_t seed) {
  AblationCell cell;
  cell.config_id = id;
  cell.seed = seed;
  try {
    TrainConfig cfg = ablation_config(base, id);
    cfg.seed = seed;
    TrainResult r = train_student(bench, &teacher, cfg);
    for (const EpochMetrics& m : r.metrics) {
      if (m.split == "val" && m.epoch == cfg.epochs - 1) cell.source_metric = m.metric;
      if (m.split == "test") cell.target_metrics.push_back(m.metric);
    }
    if (cell.target_metrics.empty()) throw data_error("run produced no target metrics");
    double sum = 0.0;
    for (double v : cell.target_metrics) sum += v;
    cell.target_mean = sum / static_cast<double>(cell.target_metrics.size());
    cell.gap = generalization_gap(cell.source_metric, cell.target_metrics);
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

int env_thread_cap() {
  const char* env = std::getenv("SHADE_LAB_THREADS");
  if (!env) return 0;
  int v = std::atoi(env);
  return v > 0 ? v : 0;
}

}  // namespace

AblationTables run_ablation(const Benchmark& bench, const ModelParams& teacher,
                            const TrainConfig& base, const std::vector<uint64_t>& seeds, int jobs,
                            std::ostream* log) {
  if (seeds.empty()) throw config_error("run_ablation: need at least one seed");
  if (jobs < 1) jobs = 1;
  int cap = env_thread_cap();
  if (cap > 0) jobs = std::min(jobs, cap);

  // unique (config, seed) work items
  struct Item {
    std::string key;
    std::string id;  // representative id used to build the config
    uint64_t seed;
    AblationCell cell;
  };
  std::vector<Item> items;
  std::map<std::pair<std::string, uint64_t>, size_t> index;
  auto add = [&](const std::string& id, uint64_t seed) {
    std::string key = unique_key(base, id);
    auto probe = index.find({key, seed});
    if (probe != index.end()) return;
    index[{key, seed}] = items.size();
    items.push_back({key, id, seed, {}});
  };
  for (uint64_t seed : seeds) {
    for (const std::string& id : ablation_row_ids()) add(id, seed);
    for (const std::string& id : style_variation_row_ids()) add(id, seed);
  }

  // bounded parallel execution, deterministic assembly by index
  std::vector<std::future<AblationCell>> slots(items.size());
  size_t next = 0, done = 0;
  size_t in_flight = 0;
  while (done < items.size()) {
    while (next < items.size() && in_flight < static_cast<size_t>(jobs)) {
      const Item& it = items[next];
      slots[next] = std::async(std::launch::async, run_cell, std::cref(bench), std::cref(teacher),
                               std::cref(base), it.id, it.seed);
      ++next;
      ++in_flight;
    }
    // harvest in submission order; done slots stay valid futures
    slots[done].wait();
    items[done].cell = slots[done].get();
    --in_flight;
    if (log) {
      const AblationCell& c = items[done].cell;
      *log << "[ablate] " << c.config_id << " seed " << c.seed
           << (c.failed ? std::string(" FAILED: ") + c.error
                        : " target_mean " + std::to_string(c.target_mean))
           << "\n";
    }
    ++done;
  }

  AblationTables tables;
  for (const DomainDataset& t : bench.targets) tables.target_names.push_back(t.provenance.name);
  auto cell_for = [&](const std::string& id, uint64_t seed) {
    AblationCell c = items[index.at({unique_key(base, id), seed})].cell;
    c.config_id = id;  // emitted under the row's own name
    c.seed = seed;
    return c;
  };
  for (const std::string& id : ablation_row_ids())
    for (uint64_t seed : seeds) tables.ablation.push_back(cell_for(id, seed));
  for (const std::string& id : style_variation_row_ids())
    for (uint64_t seed : seeds) tables.style_variation.push_back(cell_for(id, seed));
  return tables;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_ablation_csv(const std::vector<AblationCell>& rows,
                        const std::vector<std::string>& target_names, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("write_ablation_csv: cannot open " + path);
  os << "config,seed,status,source";
  for (const std::string& t : target_names) os << "," << t;
  os << ",target_mean,gap\n";

  // group rows by config in emission order
  std::vector<std::string> order;
  for (const AblationCell& c : rows)
    if (order.empty() || order.back() != c.config_id)
      if (std::find(order.begin(), order.end(), c.config_id) == order.end())
        order.push_back(c.config_id);

  for (const std::string& id : order) {
    std::vector<const AblationCell*> group;
    for (const AblationCell& c : rows)
      if (c.config_id == id) group.push_back(&c);

    for (const AblationCell* c : group) {
      os << c->config_id << "," << c->seed << "," << (c->failed ? "failed" : "ok") << ",";
      if (c->failed) {
        os << ",";
        for (size_t i = 0; i < target_names.size(); ++i) os << ",";
        os << "\n";
        continue;
      }
      os << fmt(c->source_metric);
      for (double v : c->target_metrics) os << "," << fmt(v);
      os << "," << fmt(c->target_mean) << "," << fmt(c->gap) << "\n";
    }

    // aggregate rows over successful cells
    std::vector<const AblationCell*> ok;
    for (const AblationCell* c : group)
      if (!c->failed) ok.push_back(c);
    if (ok.empty()) continue;
    size_t nt = target_names.size();
    auto stat = [&](auto getter, double& mean, double& sd) {
      mean = 0.0;
      for (const AblationCell* c : ok) mean += getter(*c);
      mean /= static_cast<double>(ok.size());
      sd = 0.0;
      for (const AblationCell* c : ok) sd += (getter(*c) - mean) * (getter(*c) - mean);
      sd = ok.size() > 1 ? std::sqrt(sd / static_cast<double>(ok.size() - 1)) : 0.0;
    };
    for (const char* which : {"mean", "sd"}) {
      os << id << "," << which << ",ok,";
      bool want_sd = std::string(which) == "sd";
      double m, s;
      stat([](const AblationCell& c) { return c.source_metric; }, m, s);
      os << fmt(want_sd ? s : m);
      for (size_t t = 0; t < nt; ++t) {
        stat([t](const AblationCell& c) { return c.target_metrics[t]; }, m, s);
        os << "," << fmt(want_sd ? s : m);
      }
      stat([](const AblationCell& c) { return c.target_mean; }, m, s);
      os << "," << fmt(want_sd ? s : m);
      stat([](const AblationCell& c) { return c.gap; }, m, s);
      os << "," << fmt(want_sd ? s : m) << "\n";
    }
  }
}

}  // namespace shade
