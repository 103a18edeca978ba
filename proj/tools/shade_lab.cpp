// shade_lab: synthetic multi-domain training laboratory for style
// hallucination with dual consistency. Subcommands cover benchmark
// generation, teacher pretraining, student training, evaluation, the
// ablation grids, and style-space export.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "shade/ablation.hpp"
#include "shade/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace shade;

namespace {

#ifndef SHADE_BUILD_ID
#define SHADE_BUILD_ID "unknown"
#endif

std::string iso_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json_atomic(const fs::path& path, const json& j) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw io_error("cannot open " + tmp.string());
    os << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

// Immutable once training starts; completion details land in run_result.json.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    uint64_t seed, const json& outputs) {
  fs::create_directories(out_dir);
  write_json_atomic(out_dir / "run_manifest.json", json{{"command", command},
                                                        {"config", config},
                                                        {"seed", seed},
                                                        {"build", SHADE_BUILD_ID},
                                                        {"started_utc", iso_now()},
                                                        {"outputs", outputs}});
}

void write_result(const fs::path& out_dir, const json& summary) {
  json j = summary;
  j["finished_utc"] = iso_now();
  write_json_atomic(out_dir / "run_result.json", j);
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config file " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw config_error("config file " + path + ": " + e.what());
  }
}

// Flag values recorded here override config-file keys, which override
// built-in defaults.
struct TrainFlagOverlay {
  CLI::App* cmd = nullptr;
  std::string task, style_generator, rc_teacher;
  bool use_shm = false, use_sc = false, use_rc = false, ce_on_stylized = false,
       init_from_teacher = false;
  double lambda_sc = 0, lambda_rc = 0, lr = 0, momentum = 0, weight_decay = 0, power = 0,
         ema_decay = 0, feature_eps = 0;
  int insertion_point = 0, interval_k = 0, batch_size = 0, epochs = 0, iters_per_epoch = 0,
      pool_max = 0, kmeans_iters = 0, c0 = 0, c1 = 0;
  uint64_t seed = 0;

  void attach(CLI::App* app) {
    cmd = app;
    app->add_option("--task", task, "classification | segmentation");
    app->add_option("--use-shm", use_shm, "enable the style branch");
    app->add_option("--use-sc", use_sc, "enable style consistency");
    app->add_option("--use-rc", use_rc, "enable retrospection consistency");
    app->add_option("--ce-on-stylized", ce_on_stylized, "task loss on the stylized branch too");
    app->add_option("--init-from-teacher", init_from_teacher, "start the student from the teacher");
    app->add_option("--rc-teacher", rc_teacher, "frozen | ema");
    app->add_option("--style-generator", style_generator,
                    "shm_fps | shm_kmeans | mixstyle | crossnorm | random");
    app->add_option("--lambda-sc", lambda_sc, "style consistency weight");
    app->add_option("--lambda-rc", lambda_rc, "retrospection consistency weight");
    app->add_option("--insertion-point", insertion_point, "style branch layer (0..2)");
    app->add_option("--interval-k", interval_k, "basis re-selection interval in epochs, 0 = once");
    app->add_option("--batch-size", batch_size, "");
    app->add_option("--epochs", epochs, "");
    app->add_option("--iters-per-epoch", iters_per_epoch, "batches per epoch, 0 = full pass");
    app->add_option("--lr", lr, "base learning rate");
    app->add_option("--momentum", momentum, "");
    app->add_option("--weight-decay", weight_decay, "");
    app->add_option("--power", power, "poly schedule power");
    app->add_option("--ema-decay", ema_decay, "");
    app->add_option("--pool-max", pool_max, "style pool cap for basis selection");
    app->add_option("--kmeans-iters", kmeans_iters, "");
    app->add_option("--feature-eps", feature_eps, "instance statistics epsilon");
    app->add_option("--c0", c0, "stem width");
    app->add_option("--c1", c1, "body width");
    app->add_option("--seed", seed, "run seed");
  }

  json apply(json base) const {
    auto set = [&](const char* flag, const char* key, auto value) {
      if (cmd->count(flag)) base[key] = value;
    };
    set("--task", "task", task);
    set("--use-shm", "use_shm", use_shm);
    set("--use-sc", "use_sc", use_sc);
    set("--use-rc", "use_rc", use_rc);
    set("--ce-on-stylized", "ce_on_stylized", ce_on_stylized);
    set("--init-from-teacher", "init_from_teacher", init_from_teacher);
    set("--rc-teacher", "rc_teacher", rc_teacher);
    set("--style-generator", "style_generator", style_generator);
    set("--lambda-sc", "lambda_sc", lambda_sc);
    set("--lambda-rc", "lambda_rc", lambda_rc);
    set("--insertion-point", "insertion_point", insertion_point);
    set("--interval-k", "interval_k", interval_k);
    set("--batch-size", "batch_size", batch_size);
    set("--epochs", "epochs", epochs);
    set("--iters-per-epoch", "iters_per_epoch", iters_per_epoch);
    set("--lr", "base_lr", lr);
    set("--momentum", "momentum", momentum);
    set("--weight-decay", "weight_decay", weight_decay);
    set("--power", "power", power);
    set("--ema-decay", "ema_decay", ema_decay);
    set("--pool-max", "style_pool_max", pool_max);
    set("--kmeans-iters", "kmeans_iters", kmeans_iters);
    set("--feature-eps", "feature_eps", feature_eps);
    set("--c0", "c0", c0);
    set("--c1", "c1", c1);
    set("--seed", "seed", seed);
    return base;
  }
};

ModelParams teacher_from_checkpoint(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  return c.student.clone(Role::frozen_teacher);
}

double final_val_metric(const TrainResult& r) {
  double v = 0.0;
  for (const EpochMetrics& m : r.metrics)
    if (m.split == "val") v = m.metric;
  return v;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (!cur.empty()) {
        seeds.push_back(std::stoull(cur));
        cur.clear();
      }
    } else if (std::isdigit(static_cast<unsigned char>(ch))) {
      cur += ch;
    } else {
      throw config_error("--seeds must be a comma-separated list of integers");
    }
  }
  if (seeds.empty()) throw config_error("--seeds must name at least one seed");
  return seeds;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"desk-scale style-hallucination / dual-consistency laboratory"};
  app.require_subcommand(1);
  bool debug_checks_flag = false;
  app.add_flag("--debug-checks", debug_checks_flag, "validate tensors for non-finite values");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate the multi-domain benchmark");
  std::string gen_config, gen_out;
  uint64_t gen_seed = 0;
  int gen_pngs = 0;
  gen->add_option("--config", gen_config, "benchmark config json");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--export-pngs", gen_pngs, "also dump N inspection PNGs per domain");

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "train the frozen retrospection teacher");
  std::string pre_data, pre_out, pre_config;
  TrainFlagOverlay pre_flags;
  pre->add_option("--data", pre_data, "benchmark directory")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--config", pre_config, "train config json");
  pre_flags.attach(pre);

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a student");
  std::string tr_data, tr_out, tr_config, tr_teacher, tr_resume;
  int tr_stop = 0;
  TrainFlagOverlay tr_flags;
  tr->add_option("--data", tr_data, "benchmark directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--config", tr_config, "train config json");
  tr->add_option("--teacher", tr_teacher, "teacher checkpoint");
  tr->add_option("--resume", tr_resume, "resume checkpoint");
  tr->add_option("--stop-after-epoch", tr_stop, "stop early at this epoch boundary");
  tr_flags.attach(tr);

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every domain");
  std::string ev_data, ev_ckpt, ev_out;
  ev->add_option("--data", ev_data, "benchmark directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--out", ev_out, "output directory")->required();

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "run the ablation and style-variation grids");
  std::string ab_data, ab_out, ab_config, ab_teacher, ab_seeds = "0";
  int ab_jobs = 1;
  TrainFlagOverlay ab_flags;
  ab->add_option("--data", ab_data, "benchmark directory")->required();
  ab->add_option("--teacher", ab_teacher, "teacher checkpoint")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--config", ab_config, "base train config json");
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list");
  ab->add_option("--jobs", ab_jobs, "parallel cells (capped by SHADE_LAB_THREADS)");
  ab_flags.attach(ab);

  // ---- viz ----
  auto* vz = app.add_subcommand("viz", "export the projected style space");
  std::string vz_data, vz_ckpt, vz_out;
  uint64_t vz_seed = 0;
  int vz_pool = 1024, vz_generated = 200;
  vz->add_option("--data", vz_data, "benchmark directory")->required();
  vz->add_option("--ckpt", vz_ckpt, "checkpoint (omitted: freshly initialized model)");
  vz->add_option("--out", vz_out, "output json path")->required();
  vz->add_option("--seed", vz_seed, "seed for pooling and generation");
  vz->add_option("--pool-max", vz_pool, "source style pool cap");
  vz->add_option("--n-generated", vz_generated, "hallucinated samples to project");

  CLI11_PARSE(app, argc, argv);
  set_debug_checks(debug_checks_flag);

  if (gen->parsed()) {
    Benchmark bench;
    json cfg = gen_config.empty() ? json::object() : load_json_file(gen_config);
    uint64_t seed = gen->count("--seed") ? gen_seed : cfg.value("seed", static_cast<uint64_t>(0));
    if (cfg.contains("source_train")) {
      bench.source_train = gen_domain(DomainConfig::from_json(cfg.at("source_train")));
      bench.source_val = gen_domain(DomainConfig::from_json(cfg.at("source_val")));
      for (const json& t : cfg.at("targets"))
        bench.targets.push_back(gen_domain(DomainConfig::from_json(t)));
    } else {
      bench = make_benchmark(seed);
    }
    write_manifest(gen_out, "gen-data", cfg, seed, {{"dir", gen_out}});
    save_benchmark(bench, gen_out);
    if (gen_pngs > 0) {
      export_pngs(bench.source_train, gen_out + "/pngs", gen_pngs);
      for (const DomainDataset& t : bench.targets) export_pngs(t, gen_out + "/pngs", gen_pngs);
    }
    write_result(gen_out, {{"domains", 2 + bench.targets.size()},
                           {"source_n", bench.source_train.n()}});
    std::cout << "benchmark written to " << gen_out << "\n";
    return 0;
  }

  if (pre->parsed()) {
    Benchmark bench = load_benchmark(pre_data);
    json cfg_json = pre_flags.apply(pre_config.empty() ? json::object() : load_json_file(pre_config));
    TrainConfig cfg = TrainConfig::from_json(cfg_json);
    write_manifest(pre_out, "pretrain", cfg.to_json(), cfg.seed,
                   {{"teacher", pre_out + "/teacher.ckpt"}, {"metrics", pre_out + "/metrics.csv"}});
    TrainResult r = pretrain_teacher_run(bench, cfg);
    append_metrics_csv(pre_out + "/metrics.csv", r.metrics);
    save_checkpoint(r.checkpoint, pre_out + "/teacher.ckpt");
    write_result(pre_out, {{"val_metric", final_val_metric(r)}});
    std::cout << "teacher val metric " << final_val_metric(r) << "\n";
    return 0;
  }

  if (tr->parsed()) {
    Benchmark bench = load_benchmark(tr_data);
    json cfg_json = tr_flags.apply(tr_config.empty() ? json::object() : load_json_file(tr_config));
    TrainConfig cfg = TrainConfig::from_json(cfg_json);
    ModelParams teacher;
    bool have_teacher = !tr_teacher.empty();
    if ((cfg.use_rc && cfg.rc_teacher == RcTeacher::frozen && !have_teacher) ||
        (cfg.init_from_teacher && !have_teacher))
      throw config_error("train: this config requires --teacher");
    if (have_teacher) teacher = teacher_from_checkpoint(tr_teacher);

    Checkpoint resume;
    bool resuming = !tr_resume.empty();
    if (resuming) resume = load_checkpoint(tr_resume);

    write_manifest(tr_out, "train", cfg.to_json(), cfg.seed,
                   {{"metrics", tr_out + "/metrics.csv"},
                    {"checkpoint", tr_out + "/checkpoint.ckpt"}});
    TrainResult r = train_student(bench, have_teacher ? &teacher : nullptr, cfg,
                                  tr_out + "/metrics.csv", tr_stop, resuming ? &resume : nullptr);
    save_checkpoint(r.checkpoint, tr_out + "/checkpoint.ckpt");
    write_result(tr_out, {{"val_metric", final_val_metric(r)},
                          {"iterations", r.checkpoint.iteration},
                          {"epochs", r.checkpoint.epoch}});
    std::cout << "final val metric " << final_val_metric(r) << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Benchmark bench = load_benchmark(ev_data);
    Checkpoint ckpt = load_checkpoint(ev_ckpt);
    fs::create_directories(ev_out);
    std::ofstream os(ev_out + "/eval.csv");
    if (!os) throw io_error("eval: cannot open " + ev_out + "/eval.csv");
    os << "domain,samples,accuracy_or_miou,task_loss\n";
    auto one = [&](const DomainDataset& ds) {
      EvalResult r = evaluate(ckpt.spec, ckpt.student, ds, ckpt.config.task);
      char line[256];
      std::snprintf(line, sizeof(line), "%s,%d,%.17g,%.17g", ds.provenance.name.c_str(), ds.n(),
                    r.metric, r.mean_task_loss);
      os << line << "\n";
      std::cout << line << "\n";
    };
    one(bench.source_val);
    for (const DomainDataset& t : bench.targets) one(t);
    return 0;
  }

  if (ab->parsed()) {
    Benchmark bench = load_benchmark(ab_data);
    json cfg_json = ab_flags.apply(ab_config.empty() ? json::object() : load_json_file(ab_config));
    TrainConfig base = TrainConfig::from_json(cfg_json);
    ModelParams teacher = teacher_from_checkpoint(ab_teacher);
    std::vector<uint64_t> seeds = parse_seed_list(ab_seeds);
    write_manifest(ab_out, "ablate", base.to_json(), base.seed,
                   {{"ablation", ab_out + "/ablation.csv"},
                    {"style_variation", ab_out + "/style_variation.csv"}});
    AblationTables tables = run_ablation(bench, teacher, base, seeds, ab_jobs, &std::cout);
    write_ablation_csv(tables.ablation, tables.target_names, ab_out + "/ablation.csv");
    write_ablation_csv(tables.style_variation, tables.target_names,
                       ab_out + "/style_variation.csv");
    int failed = 0;
    for (const AblationCell& c : tables.ablation) failed += c.failed;
    for (const AblationCell& c : tables.style_variation) failed += c.failed;
    write_result(ab_out, {{"cells", tables.ablation.size() + tables.style_variation.size()},
                          {"failed_cells", failed}});
    return 0;
  }

  if (vz->parsed()) {
    Benchmark bench = load_benchmark(vz_data);
    ModelSpec spec;
    ModelParams params;
    if (vz_ckpt.empty()) {
      TrainConfig cfg = TrainConfig::defaults_for(HeadKind::classification);
      spec = cfg.model_spec(static_cast<int>(bench.source_train.provenance.shape_classes.size()));
      params = init_params(spec, vz_seed);
    } else {
      Checkpoint ckpt = load_checkpoint(vz_ckpt);
      spec = ckpt.spec;
      params = ckpt.student.clone(Role::student);
    }
    StyleSpaceOptions opts;
    opts.pool_max = vz_pool;
    opts.n_generated = vz_generated;
    opts.seed = vz_seed;
    json out = export_style_space(spec, params, bench, opts);
    fs::path path(vz_out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(vz_out);
    if (!os) throw io_error("viz: cannot open " + vz_out);
    os << out.dump(2) << "\n";
    std::cout << "style space written to " << vz_out << " ("
              << out.at("points").size() << " points)\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const config_error& e) {
    std::cerr << "error category=config message=\"" << e.what() << "\"\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "error category=data message=\"" << e.what() << "\"\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "error category=numeric message=\"" << e.what() << "\"\n";
    return 4;
  } catch (const io_error& e) {
    std::cerr << "error category=io message=\"" << e.what() << "\"\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error category=internal message=\"" << e.what() << "\"\n";
    return 1;
  }
}
