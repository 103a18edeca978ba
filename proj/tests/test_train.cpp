#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "shade/train.hpp"

using namespace shade;
namespace fs = std::filesystem;

namespace {

Benchmark mini_benchmark(uint64_t seed = 5) {
  DomainConfig src = default_source_config(Rng::mix(seed, 1), 48, "source");
  src.image_size = 16;
  DomainConfig val = default_source_config(Rng::mix(seed, 2), 16, "source_val");
  val.image_size = 16;
  Benchmark b;
  b.source_train = gen_domain(src);
  b.source_val = gen_domain(val);
  for (DomainConfig t : default_target_configs(seed)) {
    t.n_samples = 16;
    t.image_size = 16;
    b.targets.push_back(gen_domain(t));
    break;  // one target keeps the unit tests quick
  }
  return b;
}

TrainConfig mini_config(HeadKind task = HeadKind::classification) {
  TrainConfig c = TrainConfig::defaults_for(task);
  c.c0 = 6;
  c.c1 = 8;
  c.batch_size = 8;
  c.iters_per_epoch = 4;
  c.epochs = 3;
  c.base_lr = 0.05;
  c.seed = 7;
  return c;
}

TrainConfig shade_config(HeadKind task = HeadKind::classification) {
  TrainConfig c = mini_config(task);
  c.use_shm = true;
  c.use_sc = true;
  c.use_rc = true;
  c.interval_k = 1;
  return c;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  auto ta = a.all();
  auto tb = b.all();
  for (size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->data() != tb[i]->data()) return false;
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "shade_train_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("erm training runs deterministically and writes csv rows") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  fs::path dir = fresh_dir("erm");

  TrainResult a = train_student(bench, nullptr, cfg, (dir / "a.csv").string());
  TrainResult b = train_student(bench, nullptr, cfg, (dir / "b.csv").string());
  CHECK(params_equal(a.checkpoint.student, b.checkpoint.student));
  CHECK(slurp((dir / "a.csv").string()) == slurp((dir / "b.csv").string()));
  CHECK(!a.metrics.empty());

  // ERM rows carry no consistency losses and no basis
  for (const EpochMetrics& m : a.metrics) {
    CHECK(m.sc_loss == 0.0);
    CHECK(m.rc_loss == 0.0);
    CHECK(m.basis_epoch == -1);
  }
  // final epoch contains target rows
  int test_rows = 0;
  for (const EpochMetrics& m : a.metrics)
    if (m.split == "test") ++test_rows;
  CHECK(test_rows == 1);
}

TEST_CASE("pretrained teacher is frozen, better than chance, and reproducible") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.epochs = 24;
  cfg.iters_per_epoch = 5;
  cfg.base_lr = 0.1;
  std::vector<EpochMetrics> metrics;
  ModelParams teacher = pretrain_teacher(bench, cfg, &metrics);
  CHECK(teacher.role == Role::frozen_teacher);
  CHECK_FALSE(teacher.stem_w.requires_grad());

  uint64_t h = params_hash(teacher);
  double val_metric = 0.0;
  for (const EpochMetrics& m : metrics)
    if (m.split == "val") val_metric = m.metric;
  CHECK(val_metric > 0.25);  // above 1/K chance on the broad distribution

  ModelParams teacher2 = pretrain_teacher(bench, cfg);
  CHECK(params_hash(teacher2) == h);
}

TEST_CASE("full shade training exercises every loss and the teacher stays frozen") {
  Benchmark bench = mini_benchmark();
  TrainConfig tcfg = mini_config();
  ModelParams teacher = pretrain_teacher(bench, tcfg);
  uint64_t teacher_hash = params_hash(teacher);

  TrainConfig cfg = shade_config();
  TrainResult r = train_student(bench, &teacher, cfg);
  CHECK(params_hash(teacher) == teacher_hash);
  bool saw_sc = false, saw_rc = false;
  for (const EpochMetrics& m : r.metrics) {
    if (m.split != "train") continue;
    saw_sc |= m.sc_loss > 0.0;
    saw_rc |= m.rc_loss > 0.0;
    CHECK(m.basis_epoch >= 0);
  }
  CHECK(saw_sc);
  CHECK(saw_rc);
}

TEST_CASE("rc with frozen teacher requires one") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = shade_config();
  CHECK_THROWS_AS(train_student(bench, nullptr, cfg), config_error);
}

TEST_CASE("zero-weight consistency reproduces the erm trajectory bitwise") {
  Benchmark bench = mini_benchmark();
  TrainConfig tcfg = mini_config();
  ModelParams teacher = pretrain_teacher(bench, tcfg);

  TrainConfig erm = mini_config();
  TrainResult r_erm = train_student(bench, nullptr, erm);

  TrainConfig zero = shade_config();
  zero.lambda_sc = 0.0;
  zero.lambda_rc = 0.0;
  zero.ce_on_stylized = false;
  TrainResult r_zero = train_student(bench, &teacher, zero);
  CHECK(params_equal(r_erm.checkpoint.student, r_zero.checkpoint.student));
}

TEST_CASE("lambda_sc=0 with use_sc matches use_sc=false bitwise") {
  Benchmark bench = mini_benchmark();
  TrainConfig base = mini_config();
  base.use_shm = true;
  base.use_sc = false;
  base.use_rc = false;
  TrainResult off = train_student(bench, nullptr, base);

  TrainConfig on = base;
  on.use_sc = true;
  on.lambda_sc = 0.0;
  TrainResult zero = train_student(bench, nullptr, on);
  CHECK(params_equal(off.checkpoint.student, zero.checkpoint.student));
}

TEST_CASE("interval sentinel selects the basis exactly once") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.use_shm = true;
  cfg.ce_on_stylized = true;

  cfg.interval_k = 0;
  TrainResult once = train_student(bench, nullptr, cfg);
  CHECK(once.checkpoint.basis_epoch == 0);
  CHECK(once.checkpoint.basis.selected_at == 0);

  cfg.interval_k = 1;
  TrainResult every = train_student(bench, nullptr, cfg);
  CHECK(every.checkpoint.basis_epoch == cfg.epochs - 1);
}

TEST_CASE("reselect_basis is deterministic and tracks the model") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.use_shm = true;
  ModelSpec spec = cfg.model_spec(4);
  ModelParams params = init_params(spec, 1);

  Rng r1(3), r2(3);
  BasisStyles a = reselect_basis(spec, params, bench.source_train, cfg, 0, r1);
  BasisStyles b = reselect_basis(spec, params, bench.source_train, cfg, 0, r2);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].mu == b.rows[i].mu);
  CHECK(a.selector == "fps");

  ModelParams moved = params.clone(Role::student);
  for (double& v : moved.stem_w.mut_data()) v *= 1.3;
  Rng r3(3);
  BasisStyles c = reselect_basis(spec, moved, bench.source_train, cfg, 2, r3);
  CHECK(c.selected_at == 2);
  bool any_diff = false;
  for (size_t i = 0; i < a.rows.size() && !any_diff; ++i) any_diff = a.rows[i].mu != c.rows[i].mu;
  CHECK(any_diff);

  cfg.style_generator = StyleGenerator::shm_kmeans;
  Rng r4(3);
  BasisStyles km = reselect_basis(spec, params, bench.source_train, cfg, 0, r4);
  CHECK(km.selector == "kmeans");
}

TEST_CASE("checkpoint round trip preserves the training state") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.use_shm = true;
  cfg.ce_on_stylized = true;
  TrainResult r = train_student(bench, nullptr, cfg);

  fs::path dir = fresh_dir("ckpt");
  std::string path = (dir / "state.ckpt").string();
  save_checkpoint(r.checkpoint, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(params_equal(back.student, r.checkpoint.student));
  CHECK(back.iteration == r.checkpoint.iteration);
  CHECK(back.epoch == r.checkpoint.epoch);
  CHECK(back.rng_data_state == r.checkpoint.rng_data_state);
  CHECK(back.rng_style_state == r.checkpoint.rng_style_state);
  CHECK(back.basis.rows.size() == r.checkpoint.basis.rows.size());
  CHECK(back.optim.velocity == r.checkpoint.optim.velocity);
  CHECK(back.config.to_json() == cfg.to_json());

  // rng state reload reproduces the next draw
  Rng replay(0);
  replay.set_state(back.rng_style_state);
  Rng original(0);
  original.set_state(r.checkpoint.rng_style_state);
  CHECK(replay.u64() == original.u64());
}

TEST_CASE("corrupt checkpoints fail cleanly") {
  fs::path dir = fresh_dir("ckpt_bad");
  std::string path = (dir / "bad.ckpt").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(path), data_error);

  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.epochs = 1;
  TrainResult r = train_student(bench, nullptr, cfg);
  std::string good = (dir / "good.ckpt").string();
  save_checkpoint(r.checkpoint, good);
  fs::resize_file(good, fs::file_size(good) / 2);
  CHECK_THROWS_AS(load_checkpoint(good), data_error);
}

TEST_CASE("save/resume replays the uninterrupted run bit-exactly") {
  Benchmark bench = mini_benchmark();
  TrainConfig tcfg = mini_config();
  ModelParams teacher = pretrain_teacher(bench, tcfg);
  TrainConfig cfg = shade_config();
  fs::path dir = fresh_dir("resume");

  TrainResult full = train_student(bench, &teacher, cfg, (dir / "full.csv").string());

  TrainResult part = train_student(bench, &teacher, cfg, (dir / "part.csv").string(),
                                   /*stop_after_epoch=*/2);
  std::string ckpt_path = (dir / "mid.ckpt").string();
  save_checkpoint(part.checkpoint, ckpt_path);
  Checkpoint mid = load_checkpoint(ckpt_path);
  TrainResult rest = train_student(bench, &teacher, cfg, (dir / "part.csv").string(), 0, &mid);

  CHECK(params_equal(full.checkpoint.student, rest.checkpoint.student));
  CHECK(full.checkpoint.iteration == rest.checkpoint.iteration);
  CHECK(slurp((dir / "full.csv").string()) == slurp((dir / "part.csv").string()));

  // resuming under a different config is rejected
  TrainConfig other = cfg;
  other.base_lr *= 2.0;
  CHECK_THROWS_AS(train_student(bench, &teacher, other, "", 0, &mid), config_error);
}

TEST_CASE("non-finite losses abort with an iteration diagnostic") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = mini_config();
  cfg.base_lr = 1e18;  // guaranteed blow-up
  cfg.epochs = 4;
  CHECK_THROWS_WITH_AS(train_student(bench, nullptr, cfg), doctest::Contains("iteration"),
                       numeric_error);
}

TEST_CASE("segmentation training produces miou metrics") {
  Benchmark bench = mini_benchmark();
  TrainConfig cfg = shade_config(HeadKind::segmentation);
  cfg.batch_size = 4;
  cfg.epochs = 2;
  ModelParams teacher = pretrain_teacher(bench, mini_config(HeadKind::segmentation));
  TrainResult r = train_student(bench, &teacher, cfg);
  for (const EpochMetrics& m : r.metrics) {
    CHECK(m.metric >= 0.0);
    CHECK(m.metric <= 1.0);
  }
}

TEST_CASE("train config json honours task defaults and overrides") {
  TrainConfig seg = TrainConfig::from_json({{"task", "segmentation"}});
  CHECK(seg.lambda_rc == 1.0);
  CHECK(seg.batch_size == 8);

  TrainConfig cls = TrainConfig::from_json({{"task", "classification"}});
  CHECK(cls.lambda_rc == 0.1);
  CHECK(cls.batch_size == 32);

  TrainConfig give = TrainConfig::from_json({{"task", "segmentation"}, {"lambda_rc", 0.5}});
  CHECK(give.lambda_rc == 0.5);

  CHECK_THROWS_AS(TrainConfig::from_json({{"task", "detection"}}), config_error);
  CHECK_THROWS_AS(TrainConfig::from_json({{"use_sc", true}}), config_error);

  TrainConfig round = shade_config();
  CHECK(TrainConfig::from_json(round.to_json()).to_json() == round.to_json());
}
