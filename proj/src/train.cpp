#include "shade/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace shade {

using nlohmann::json;

std::string to_string(StyleGenerator g) {
  switch (g) {
    case StyleGenerator::shm_fps: return "shm_fps";
    case StyleGenerator::shm_kmeans: return "shm_kmeans";
    case StyleGenerator::mixstyle: return "mixstyle";
    case StyleGenerator::crossnorm: return "crossnorm";
    case StyleGenerator::random_gauss: return "random";
  }
  throw contract_error("to_string: bad StyleGenerator");
}

StyleGenerator style_generator_from_string(const std::string& s) {
  if (s == "shm_fps") return StyleGenerator::shm_fps;
  if (s == "shm_kmeans") return StyleGenerator::shm_kmeans;
  if (s == "mixstyle") return StyleGenerator::mixstyle;
  if (s == "crossnorm") return StyleGenerator::crossnorm;
  if (s == "random") return StyleGenerator::random_gauss;
  throw config_error("unknown style_generator '" + s + "'");
}

std::string to_string(RcTeacher t) { return t == RcTeacher::frozen ? "frozen" : "ema"; }

RcTeacher rc_teacher_from_string(const std::string& s) {
  if (s == "frozen") return RcTeacher::frozen;
  if (s == "ema") return RcTeacher::ema;
  throw config_error("unknown rc_teacher '" + s + "'");
}

void TrainConfig::validate() const {
  if ((use_sc || use_rc) && !use_shm)
    throw config_error("TrainConfig: use_sc/use_rc require an active style generator (use_shm)");
  if (lambda_sc < 0.0 || lambda_rc < 0.0) throw config_error("TrainConfig: lambda weights must be >= 0");
  if (insertion_point < 0 || insertion_point > 2)
    throw config_error("TrainConfig: insertion_point must be in {0,1,2}");
  if (interval_k < 0) throw config_error("TrainConfig: interval_k must be >= 0 (0 = select once)");
  if (batch_size < 1) throw config_error("TrainConfig: batch_size must be >= 1");
  if (epochs < 1) throw config_error("TrainConfig: epochs must be >= 1");
  if (iters_per_epoch < 0) throw config_error("TrainConfig: iters_per_epoch must be >= 0");
  if (!(base_lr > 0.0)) throw config_error("TrainConfig: base_lr must be > 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0))
    throw config_error("TrainConfig: ema_decay must be in [0,1)");
  if (style_pool_max < 1) throw config_error("TrainConfig: style_pool_max must be >= 1");
  if (kmeans_iters < 1) throw config_error("TrainConfig: kmeans_iters must be >= 1");
  if (!(feature_eps > 0.0)) throw config_error("TrainConfig: feature_eps must be > 0");
  if (c0 < 2 || c1 < 2) throw config_error("TrainConfig: channel widths must be >= 2");
}

json TrainConfig::to_json() const {
  return {{"task", to_string(task)},
          {"use_shm", use_shm},
          {"use_sc", use_sc},
          {"use_rc", use_rc},
          {"ce_on_stylized", ce_on_stylized},
          {"init_from_teacher", init_from_teacher},
          {"rc_teacher", to_string(rc_teacher)},
          {"style_generator", to_string(style_generator)},
          {"lambda_sc", lambda_sc},
          {"lambda_rc", lambda_rc},
          {"insertion_point", insertion_point},
          {"interval_k", interval_k},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"iters_per_epoch", iters_per_epoch},
          {"base_lr", base_lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"power", power},
          {"ema_decay", ema_decay},
          {"style_pool_max", style_pool_max},
          {"kmeans_iters", kmeans_iters},
          {"feature_eps", feature_eps},
          {"c0", c0},
          {"c1", c1},
          {"seed", seed}};
}

TrainConfig TrainConfig::defaults_for(HeadKind task) {
  TrainConfig c;
  c.task = task;
  if (task == HeadKind::segmentation) {
    c.lambda_rc = 1.0;
    c.batch_size = 8;
    c.iters_per_epoch = 32;
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) {
  HeadKind task = HeadKind::classification;
  try {
    if (j.contains("task")) task = head_kind_from_string(j.at("task").get<std::string>());
    TrainConfig c = defaults_for(task);
    if (j.contains("use_shm")) c.use_shm = j.at("use_shm").get<bool>();
    if (j.contains("use_sc")) c.use_sc = j.at("use_sc").get<bool>();
    if (j.contains("use_rc")) c.use_rc = j.at("use_rc").get<bool>();
    if (j.contains("ce_on_stylized")) c.ce_on_stylized = j.at("ce_on_stylized").get<bool>();
    if (j.contains("init_from_teacher")) c.init_from_teacher = j.at("init_from_teacher").get<bool>();
    if (j.contains("rc_teacher"))
      c.rc_teacher = rc_teacher_from_string(j.at("rc_teacher").get<std::string>());
    if (j.contains("style_generator"))
      c.style_generator = style_generator_from_string(j.at("style_generator").get<std::string>());
    if (j.contains("lambda_sc")) c.lambda_sc = j.at("lambda_sc").get<double>();
    if (j.contains("lambda_rc")) c.lambda_rc = j.at("lambda_rc").get<double>();
    if (j.contains("insertion_point")) c.insertion_point = j.at("insertion_point").get<int>();
    if (j.contains("interval_k")) c.interval_k = j.at("interval_k").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("iters_per_epoch")) c.iters_per_epoch = j.at("iters_per_epoch").get<int>();
    if (j.contains("base_lr")) c.base_lr = j.at("base_lr").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("power")) c.power = j.at("power").get<double>();
    if (j.contains("ema_decay")) c.ema_decay = j.at("ema_decay").get<double>();
    if (j.contains("style_pool_max")) c.style_pool_max = j.at("style_pool_max").get<int>();
    if (j.contains("kmeans_iters")) c.kmeans_iters = j.at("kmeans_iters").get<int>();
    if (j.contains("feature_eps")) c.feature_eps = j.at("feature_eps").get<double>();
    if (j.contains("c0")) c.c0 = j.at("c0").get<int>();
    if (j.contains("c1")) c.c1 = j.at("c1").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw config_error(std::string("TrainConfig: ") + e.what());
  }
}

ModelSpec TrainConfig::model_spec(int num_classes) const {
  ModelSpec spec;
  spec.head = task;
  spec.c0 = c0;
  spec.c1 = c1;
  spec.num_classes = num_classes;
  spec.insertion_point = insertion_point;
  return spec;
}

const char* const kMetricsCsvHeader =
    "epoch,split,domain,task_loss,sc_loss,rc_loss,accuracy_or_miou,lr,basis_epoch";

namespace {
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + "," + m.split + "," + m.domain + "," + fmt_double(m.task_loss) +
         "," + fmt_double(m.sc_loss) + "," + fmt_double(m.rc_loss) + "," + fmt_double(m.metric) +
         "," + fmt_double(m.lr) + "," + std::to_string(m.basis_epoch);
}

void append_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw io_error("append_metrics_csv: cannot open " + path);
  if (fresh) os << kMetricsCsvHeader << "\n";
  for (const EpochMetrics& m : rows) os << metrics_csv_row(m) << "\n";
}

// ---- checkpoint serialization ----

namespace {

constexpr uint32_t kCkptMagic = 0x4B434853u;  // "SHCK"
constexpr uint32_t kCkptVersion = 1u;

void w_u32(std::ofstream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void w_i64(std::ofstream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void w_f64(std::ofstream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

void w_str(std::ofstream& os, const std::string& s) {
  w_i64(os, static_cast<int64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void w_dvec(std::ofstream& os, const std::vector<double>& v) {
  w_i64(os, static_cast<int64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void w_tensor(std::ofstream& os, const Tensor& t) {
  w_i64(os, t.rank());
  for (int d : t.shape()) w_i64(os, d);
  w_dvec(os, t.data());
}

struct Reader {
  std::ifstream is;
  std::string path;
  explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
    if (!is) throw io_error("load_checkpoint: cannot open " + p);
  }
  void need() {
    if (!is) throw data_error("load_checkpoint: truncated or corrupt file " + path);
  }
  uint32_t u32() {
    uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    need();
    return v;
  }
  int64_t i64() {
    int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    need();
    return v;
  }
  double f64() {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    need();
    return v;
  }
  std::string str() {
    int64_t n = i64();
    if (n < 0 || n > (1LL << 31)) throw data_error("load_checkpoint: corrupt string length");
    std::string s(static_cast<size_t>(n), '\0');
    is.read(s.data(), n);
    need();
    return s;
  }
  std::vector<double> dvec() {
    int64_t n = i64();
    if (n < 0 || n > (1LL << 33)) throw data_error("load_checkpoint: corrupt vector length");
    std::vector<double> v(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(v.data()), n * 8);
    need();
    return v;
  }
  Tensor tensor(bool rg) {
    int64_t rank = i64();
    if (rank < 0 || rank > 8) throw data_error("load_checkpoint: corrupt tensor rank");
    std::vector<int> shape(static_cast<size_t>(rank));
    for (int64_t i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(i64());
    return Tensor::from(std::move(shape), dvec(), rg);
  }
};

void write_params(std::ofstream& os, const ModelParams& p) {
  for (const Tensor* t : p.all()) w_tensor(os, *t);
}

ModelParams read_params(Reader& r, Role role) {
  ModelParams p;
  p.role = role;
  bool rg = role == Role::student;
  p.stem_w = r.tensor(rg);
  p.stem_b = r.tensor(rg);
  p.l1_w = r.tensor(rg);
  p.l1_b = r.tensor(rg);
  p.l2_w = r.tensor(rg);
  p.l2_b = r.tensor(rg);
  p.head_w = r.tensor(rg);
  p.head_b = r.tensor(rg);
  return p;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("save_checkpoint: cannot open " + path);
  w_u32(os, kCkptMagic);
  w_u32(os, kCkptVersion);
  w_str(os, ckpt.config.to_json().dump());
  w_i64(os, ckpt.spec.head == HeadKind::classification ? 0 : 1);
  w_i64(os, ckpt.spec.in_channels);
  w_i64(os, ckpt.spec.c0);
  w_i64(os, ckpt.spec.c1);
  w_i64(os, ckpt.spec.num_classes);
  w_i64(os, ckpt.spec.insertion_point);
  write_params(os, ckpt.student);
  w_i64(os, ckpt.has_ema ? 1 : 0);
  if (ckpt.has_ema) write_params(os, ckpt.ema);
  w_f64(os, ckpt.optim.base_lr);
  w_f64(os, ckpt.optim.momentum);
  w_f64(os, ckpt.optim.weight_decay);
  w_f64(os, ckpt.optim.power);
  w_i64(os, ckpt.optim.max_iter);
  w_i64(os, static_cast<int64_t>(ckpt.optim.velocity.size()));
  for (const auto& v : ckpt.optim.velocity) w_dvec(os, v);
  w_i64(os, ckpt.iteration);
  w_i64(os, ckpt.epoch);
  w_str(os, ckpt.rng_data_state);
  w_str(os, ckpt.rng_style_state);
  w_str(os, ckpt.rng_pool_state);
  w_str(os, ckpt.basis.to_json().dump());
  w_i64(os, ckpt.basis_epoch);
  if (!os) throw io_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  if (r.u32() != kCkptMagic) throw data_error("load_checkpoint: bad magic in " + path);
  if (r.u32() != kCkptVersion)
    throw data_error("load_checkpoint: unsupported version in " + path);
  Checkpoint c;
  try {
    c.config = TrainConfig::from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw data_error("load_checkpoint: corrupt config block: " + std::string(e.what()));
  }
  c.spec.head = r.i64() == 0 ? HeadKind::classification : HeadKind::segmentation;
  c.spec.in_channels = static_cast<int>(r.i64());
  c.spec.c0 = static_cast<int>(r.i64());
  c.spec.c1 = static_cast<int>(r.i64());
  c.spec.num_classes = static_cast<int>(r.i64());
  c.spec.insertion_point = static_cast<int>(r.i64());
  c.student = read_params(r, Role::student);
  c.has_ema = r.i64() != 0;
  if (c.has_ema) c.ema = read_params(r, Role::ema_teacher);
  c.optim.base_lr = r.f64();
  c.optim.momentum = r.f64();
  c.optim.weight_decay = r.f64();
  c.optim.power = r.f64();
  c.optim.max_iter = r.i64();
  int64_t nvel = r.i64();
  if (nvel < 0 || nvel > 64) throw data_error("load_checkpoint: corrupt velocity count");
  for (int64_t i = 0; i < nvel; ++i) c.optim.velocity.push_back(r.dvec());
  c.iteration = r.i64();
  c.epoch = static_cast<int>(r.i64());
  c.rng_data_state = r.str();
  c.rng_style_state = r.str();
  c.rng_pool_state = r.str();
  try {
    c.basis = BasisStyles::from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw data_error("load_checkpoint: corrupt basis block: " + std::string(e.what()));
  }
  c.basis_epoch = static_cast<int>(r.i64());
  return c;
}

uint64_t checkpoint_param_hash(const Checkpoint& c) { return params_hash(c.student); }

// ---- training ----

BasisStyles reselect_basis(const ModelSpec& spec, const ModelParams& params,
                           const DomainDataset& dataset, const TrainConfig& cfg, int epoch,
                           Rng& pool_rng) {
  std::vector<StyleVector> pool = collect_styles(spec, params, dataset, cfg.insertion_point,
                                                 cfg.style_pool_max, pool_rng, cfg.feature_eps);
  int count = spec.channels_at(cfg.insertion_point);
  BasisStyles basis = cfg.style_generator == StyleGenerator::shm_kmeans
                          ? kmeans_select(pool, count, pool_rng.u64(), cfg.kmeans_iters)
                          : fps_select(pool, count);
  basis.selected_at = epoch;
  return basis;
}

namespace {

bool generator_uses_basis(StyleGenerator g) {
  return g == StyleGenerator::shm_fps || g == StyleGenerator::shm_kmeans;
}

Tensor stylize_batch(const Tensor& pre, const TrainConfig& cfg, const BasisStyles& basis,
                     Rng& rng_style) {
  int n = pre.dim(0);
  int c = pre.dim(1);
  switch (cfg.style_generator) {
    case StyleGenerator::shm_fps:
    case StyleGenerator::shm_kmeans: {
      std::vector<StyleVector> targets(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i)
        targets[static_cast<size_t>(i)] = hallucinate(basis, sample_dirichlet(c, rng_style));
      return apply_style(pre, targets, cfg.feature_eps);
    }
    case StyleGenerator::mixstyle:
      return mixstyle_batch(pre, rng_style, 0.1, cfg.feature_eps);
    case StyleGenerator::crossnorm:
      return crossnorm_batch(pre, rng_style, cfg.feature_eps);
    case StyleGenerator::random_gauss: {
      std::vector<StyleVector> targets(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) targets[static_cast<size_t>(i)] = random_style(c, rng_style);
      return apply_style(pre, targets, cfg.feature_eps);
    }
  }
  throw contract_error("stylize_batch: bad generator");
}

void tally_predictions(ConfusionMatrix& cm, const Tensor& logits, const std::vector<int>& labels) {
  int k = logits.dim(1);
  int n = logits.dim(0);
  int64_t spatial = logits.rank() == 4 ? static_cast<int64_t>(logits.dim(2)) * logits.dim(3) : 1;
  const double* v = logits.data().data();
  for (int i = 0; i < n; ++i) {
    for (int64_t s = 0; s < spatial; ++s) {
      int arg = 0;
      double best = v[(static_cast<int64_t>(i) * k) * spatial + s];
      for (int c = 1; c < k; ++c) {
        double x = v[(static_cast<int64_t>(i) * k + c) * spatial + s];
        if (x > best) {
          best = x;
          arg = c;
        }
      }
      cm.at(labels[static_cast<size_t>(i * spatial + s)], arg)++;
    }
  }
}

}  // namespace

TrainResult train_student(const Benchmark& bench, const ModelParams* teacher,
                          const TrainConfig& cfg, const std::string& metrics_csv_path,
                          int stop_after_epoch, const Checkpoint* resume) {
  cfg.validate();
  const DomainDataset& train_ds = bench.source_train;
  if (train_ds.n() < cfg.batch_size)
    throw config_error("train_student: batch_size exceeds the training set");
  int num_classes = cfg.task == HeadKind::classification
                        ? static_cast<int>(train_ds.provenance.shape_classes.size())
                        : train_ds.num_mask_classes();
  ModelSpec spec = cfg.model_spec(num_classes);
  spec.validate();

  bool styled = cfg.use_shm;
  bool needs_frozen = cfg.use_rc && cfg.rc_teacher == RcTeacher::frozen;
  if (needs_frozen && teacher == nullptr)
    throw config_error("train_student: rc_teacher=frozen requires a pretrained teacher");
  if (cfg.init_from_teacher && teacher == nullptr)
    throw config_error("train_student: init_from_teacher requires a pretrained teacher");
  if (teacher) {
    ModelParams probe = init_params(spec, 0);
    auto a = teacher->all();
    auto b = probe.all();
    for (size_t i = 0; i < a.size(); ++i)
      if (a[i]->shape() != b[i]->shape())
        throw config_error("train_student: teacher architecture does not match the student");
  }
  uint64_t teacher_hash = teacher ? params_hash(*teacher) : 0;

  int batches_per_epoch =
      cfg.iters_per_epoch > 0 ? cfg.iters_per_epoch : train_ds.n() / cfg.batch_size;
  if (batches_per_epoch < 1) throw config_error("train_student: no full batch per epoch");
  if (static_cast<int64_t>(batches_per_epoch) * cfg.batch_size > train_ds.n())
    throw config_error("train_student: iters_per_epoch exceeds one pass over the data");

  ModelParams student;
  ModelParams ema;
  bool has_ema = cfg.use_rc && cfg.rc_teacher == RcTeacher::ema;
  OptimState optim;
  optim.base_lr = cfg.base_lr;
  optim.momentum = cfg.momentum;
  optim.weight_decay = cfg.weight_decay;
  optim.power = cfg.power;
  optim.max_iter = static_cast<int64_t>(cfg.epochs) * batches_per_epoch;
  Rng rng_data(0), rng_style(0), rng_pool(0);
  int64_t iteration = 0;
  int start_epoch = 0;
  BasisStyles basis;
  int basis_epoch = -1;

  if (resume) {
    if (resume->config.to_json() != cfg.to_json())
      throw config_error("train_student: resume checkpoint was written under a different config");
    student = resume->student.clone(Role::student);
    has_ema = resume->has_ema;
    if (has_ema) ema = resume->ema.clone(Role::ema_teacher);
    optim = resume->optim;
    iteration = resume->iteration;
    start_epoch = resume->epoch;
    rng_data.set_state(resume->rng_data_state);
    rng_style.set_state(resume->rng_style_state);
    rng_pool.set_state(resume->rng_pool_state);
    basis = resume->basis;
    basis_epoch = resume->basis_epoch;
  } else {
    student = cfg.init_from_teacher ? teacher->clone(Role::student)
                                     : init_params(spec, Rng::mix(cfg.seed, 11));
    optim.init_for(student);
    rng_data = Rng::derived(cfg.seed, 1);
    rng_style = Rng::derived(cfg.seed, 2);
    rng_pool = Rng::derived(cfg.seed, 3);
    if (has_ema) ema = student.clone(Role::ema_teacher);
  }

  int stop = stop_after_epoch > 0 ? std::min(stop_after_epoch, cfg.epochs) : cfg.epochs;
  if (start_epoch >= stop) throw config_error("train_student: nothing to run before the stop epoch");

  std::vector<EpochMetrics> all_metrics;
  int ds_factor = 2;  // head at half input resolution

  for (int epoch = start_epoch; epoch < stop; ++epoch) {
    if (styled && generator_uses_basis(cfg.style_generator)) {
      bool due = cfg.interval_k == 0 ? (epoch == 0 && basis_epoch < 0)
                                     : (epoch % cfg.interval_k == 0);
      if (due) {
        basis = reselect_basis(spec, student, train_ds, cfg, epoch, rng_pool);
        basis_epoch = epoch;
      }
    }

    std::vector<int> perm(static_cast<size_t>(train_ds.n()));
    for (int i = 0; i < train_ds.n(); ++i) perm[static_cast<size_t>(i)] = i;
    rng_data.shuffle(perm);

    double sum_task = 0.0, sum_sc = 0.0, sum_rc = 0.0, last_lr = 0.0;
    ConfusionMatrix train_cm(spec.num_classes);

    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<int> idx(perm.begin() + static_cast<int64_t>(b) * cfg.batch_size,
                           perm.begin() + static_cast<int64_t>(b + 1) * cfg.batch_size);
      Tensor images = gather_images(train_ds, idx);
      std::vector<int> labels;
      Tensor fg_mask;
      if (cfg.task == HeadKind::classification) {
        labels = gather_labels(train_ds, idx);
      } else {
        labels = downsample_labels(gather_masks(train_ds, idx), cfg.batch_size, train_ds.height(),
                                   train_ds.width(), ds_factor);
        int fh = train_ds.height() / ds_factor, fw = train_ds.width() / ds_factor;
        std::vector<double> m(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] > 0 ? 1.0 : 0.0;
        fg_mask = Tensor::from({cfg.batch_size, fh, fw}, std::move(m));
      }

      try {
        Tensor pre = forward_until(spec, student, images, cfg.insertion_point);
        ForwardTrace orig = forward_from(spec, student, pre, cfg.insertion_point);
        ForwardTrace styl;
        if (styled) {
          Tensor styl_feat = stylize_batch(pre, cfg, basis, rng_style);
          styl = forward_from(spec, student, styl_feat, cfg.insertion_point);
        }

        Tensor task = task_loss(orig.logits, labels, cfg.task);
        double task_value = task.item();
        if (styled && cfg.ce_on_stylized)
          task = scalar_affine(add(task, task_loss(styl.logits, labels, cfg.task)), 0.5, 0.0);

        Tensor sc, rc;
        if (cfg.use_sc)
          sc = sc_loss({softmax_classes(orig.logits), softmax_classes(styl.logits)}, cfg.task);
        if (cfg.use_rc) {
          Tensor teacher_feat;
          {
            NoGradGuard ng;
            const ModelParams& tp = cfg.rc_teacher == RcTeacher::frozen ? *teacher : ema;
            teacher_feat = forward(spec, tp, images).rc_feature;
          }
          RetroFeatures rf{orig.rc_feature, styl.rc_feature, teacher_feat, fg_mask};
          rc = rc_loss(rf, cfg.task);
        }

        Tensor total = total_loss(task, sc, rc, {cfg.lambda_sc, cfg.lambda_rc});
        double total_value = total.item();
        if (!std::isfinite(total_value))
          throw numeric_error("train_student: non-finite loss");

        backward(total);
        last_lr = poly_lr(iteration, optim);
        sgd_step(student, optim, last_lr);
        if (has_ema) ema_update(ema, student, cfg.ema_decay);
        ++iteration;

        sum_task += task_value;
        if (sc.defined()) sum_sc += sc.item();
        if (rc.defined()) sum_rc += rc.item();
        tally_predictions(train_cm, orig.logits, labels);
      } catch (const numeric_error& e) {
        throw numeric_error(std::string(e.what()) + " [iteration " + std::to_string(iteration) +
                            ", epoch " + std::to_string(epoch) + "]");
      }
    }

    std::vector<EpochMetrics> epoch_rows;
    EpochMetrics train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.domain = train_ds.provenance.name;
    train_row.task_loss = sum_task / batches_per_epoch;
    train_row.sc_loss = cfg.use_sc ? sum_sc / batches_per_epoch : 0.0;
    train_row.rc_loss = cfg.use_rc ? sum_rc / batches_per_epoch : 0.0;
    train_row.metric = cfg.task == HeadKind::classification ? train_cm.accuracy() : train_cm.miou();
    train_row.lr = last_lr;
    train_row.basis_epoch = basis_epoch;
    epoch_rows.push_back(train_row);

    EvalResult val = evaluate(spec, student, bench.source_val, cfg.task);
    EpochMetrics val_row;
    val_row.epoch = epoch;
    val_row.split = "val";
    val_row.domain = bench.source_val.provenance.name;
    val_row.task_loss = val.mean_task_loss;
    val_row.metric = val.metric;
    val_row.lr = last_lr;
    val_row.basis_epoch = basis_epoch;
    epoch_rows.push_back(val_row);

    if (epoch == cfg.epochs - 1) {
      for (const DomainDataset& target : bench.targets) {
        EvalResult t = evaluate(spec, student, target, cfg.task);
        EpochMetrics row;
        row.epoch = epoch;
        row.split = "test";
        row.domain = target.provenance.name;
        row.task_loss = t.mean_task_loss;
        row.metric = t.metric;
        row.lr = last_lr;
        row.basis_epoch = basis_epoch;
        epoch_rows.push_back(row);
      }
    }

    if (!metrics_csv_path.empty()) append_metrics_csv(metrics_csv_path, epoch_rows);
    all_metrics.insert(all_metrics.end(), epoch_rows.begin(), epoch_rows.end());
  }

  if (teacher && params_hash(*teacher) != teacher_hash)
    throw contract_error("train_student: frozen teacher parameters changed during the run");

  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.config = cfg;
  ckpt.student = student;
  ckpt.has_ema = has_ema;
  if (has_ema) ckpt.ema = ema;
  ckpt.optim = optim;
  ckpt.iteration = iteration;
  ckpt.epoch = stop;
  ckpt.rng_data_state = rng_data.state();
  ckpt.rng_style_state = rng_style.state();
  ckpt.rng_pool_state = rng_pool.state();
  ckpt.basis = basis;
  ckpt.basis_epoch = basis_epoch;
  return {std::move(ckpt), std::move(all_metrics)};
}

TrainResult pretrain_teacher_run(const Benchmark& bench, const TrainConfig& cfg) {
  TrainConfig tcfg = cfg;
  tcfg.use_shm = false;
  tcfg.use_sc = false;
  tcfg.use_rc = false;
  tcfg.ce_on_stylized = false;
  tcfg.init_from_teacher = false;

  Benchmark broad;
  DomainConfig train_cfg = broaden(bench.source_train.provenance);
  DomainConfig val_cfg = broaden(bench.source_val.provenance);
  broad.source_train = gen_domain(train_cfg);
  broad.source_val = gen_domain(val_cfg);
  return train_student(broad, nullptr, tcfg);
}

ModelParams pretrain_teacher(const Benchmark& bench, const TrainConfig& cfg,
                             std::vector<EpochMetrics>* metrics) {
  TrainResult r = pretrain_teacher_run(bench, cfg);
  if (metrics) *metrics = r.metrics;
  return r.checkpoint.student.clone(Role::frozen_teacher);
}

}  // namespace shade
