#include "shade/data.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "png.hpp"

namespace shade {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
  }
  throw contract_error("to_string: bad ShapeKind");
}

ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "rectangle") return ShapeKind::rectangle;
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "triangle") return ShapeKind::triangle;
  if (s == "cross") return ShapeKind::cross;
  throw config_error("unknown shape kind '" + s + "'");
}

void DomainConfig::validate() const {
  if (n_samples < 1) throw config_error("DomainConfig." + name + ": n_samples must be >= 1");
  if (image_size < 12)
    throw config_error("DomainConfig." + name + ": image_size too small for shape geometry");
  if (shape_classes.empty()) throw config_error("DomainConfig." + name + ": shape_classes empty");
  if (style_modes.empty()) throw config_error("DomainConfig." + name + ": style_modes empty");
  double wsum = 0.0;
  for (const StyleMode& m : style_modes) {
    if (m.weight < 0.0) throw config_error("DomainConfig." + name + ": style_modes.weight < 0");
    wsum += m.weight;
    for (int c = 0; c < 3; ++c) {
      if (!(m.gain_mean[static_cast<size_t>(c)] > 0.0))
        throw config_error("DomainConfig." + name + ": style_modes.gain_mean must be > 0");
      if (m.gain_std[static_cast<size_t>(c)] < 0.0 || m.bias_std[static_cast<size_t>(c)] < 0.0)
        throw config_error("DomainConfig." + name + ": style std fields must be >= 0");
    }
    if (m.noise_std < 0.0) throw config_error("DomainConfig." + name + ": noise_std must be >= 0");
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw config_error("DomainConfig." + name + ": style_modes.weight must sum to 1");
}

json DomainConfig::to_json() const {
  json modes = json::array();
  for (const StyleMode& m : style_modes) {
    modes.push_back({{"weight", m.weight},
                     {"gain_mean", m.gain_mean},
                     {"gain_std", m.gain_std},
                     {"bias_mean", m.bias_mean},
                     {"bias_std", m.bias_std},
                     {"noise_std", m.noise_std}});
  }
  json shapes = json::array();
  for (ShapeKind k : shape_classes) shapes.push_back(to_string(k));
  return {{"name", name},         {"n_samples", n_samples}, {"image_size", image_size},
          {"shape_classes", shapes}, {"style_modes", modes},   {"seed", seed}};
}

DomainConfig DomainConfig::from_json(const json& j) {
  DomainConfig c;
  try {
    c.name = j.value("name", c.name);
    c.n_samples = j.at("n_samples").get<int>();
    c.image_size = j.value("image_size", c.image_size);
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    if (j.contains("shape_classes")) {
      c.shape_classes.clear();
      for (const auto& s : j.at("shape_classes"))
        c.shape_classes.push_back(shape_kind_from_string(s.get<std::string>()));
    }
    if (j.contains("style_modes")) {
      c.style_modes.clear();
      for (const auto& jm : j.at("style_modes")) {
        StyleMode m;
        m.weight = jm.at("weight").get<double>();
        m.gain_mean = jm.at("gain_mean").get<std::array<double, 3>>();
        m.gain_std = jm.at("gain_std").get<std::array<double, 3>>();
        m.bias_mean = jm.at("bias_mean").get<std::array<double, 3>>();
        m.bias_std = jm.at("bias_std").get<std::array<double, 3>>();
        m.noise_std = jm.at("noise_std").get<double>();
        c.style_modes.push_back(m);
      }
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("DomainConfig: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

constexpr double kFgMin = 0.05;
constexpr double kFgMax = 0.60;

struct Geometry {
  ShapeKind kind;
  int cls = 0;  // index into shape_classes
  double cx = 0, cy = 0, rx = 0, ry = 0;
};

bool inside_shape(const Geometry& g, double x, double y) {
  double dx = x - g.cx, dy = y - g.cy;
  switch (g.kind) {
    case ShapeKind::rectangle:
      return std::abs(dx) <= g.rx && std::abs(dy) <= g.ry;
    case ShapeKind::ellipse:
      return (dx * dx) / (g.rx * g.rx) + (dy * dy) / (g.ry * g.ry) <= 1.0;
    case ShapeKind::triangle: {
      // isoceles, apex up: vertices (cx, cy-ry), (cx-rx, cy+ry), (cx+rx, cy+ry)
      if (dy < -g.ry || dy > g.ry) return false;
      double half_width = g.rx * (dy + g.ry) / (2.0 * g.ry);
      return std::abs(dx) <= half_width;
    }
    case ShapeKind::cross:
      return (std::abs(dx) <= 0.3 * g.rx && std::abs(dy) <= g.ry) ||
             (std::abs(dy) <= 0.3 * g.ry && std::abs(dx) <= g.rx);
  }
  return false;
}

// Rasterizes one sample's mask; retries geometry draws until the foreground
// fraction lands in [kFgMin, kFgMax]. Driven entirely by the geometry rng.
Geometry draw_geometry(Rng& geo, const DomainConfig& cfg, std::vector<int>& mask) {
  int s = cfg.image_size;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Geometry g;
    g.cls = geo.randint(static_cast<int>(cfg.shape_classes.size()));
    g.kind = cfg.shape_classes[static_cast<size_t>(g.cls)];
    double r = geo.uniform(0.22, 0.36) * s;
    g.rx = r * geo.uniform(0.75, 1.0);
    g.ry = r * geo.uniform(0.75, 1.0);
    double margin = std::max(g.rx, g.ry) + 1.0;
    if (2.0 * margin >= s) continue;
    g.cx = geo.uniform(margin, s - margin);
    g.cy = geo.uniform(margin, s - margin);

    int fg = 0;
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        bool in = inside_shape(g, j + 0.5, i + 0.5);
        mask[static_cast<size_t>(i) * s + j] = in ? g.cls + 1 : 0;
        fg += in;
      }
    double frac = static_cast<double>(fg) / (s * s);
    if (frac >= kFgMin && frac <= kFgMax) return g;
  }
  throw config_error("gen_domain: could not place a shape within the foreground bounds; "
                     "image_size too small");
}

int draw_mode(Rng& sty, const std::vector<StyleMode>& modes) {
  double u = sty.uniform();
  double acc = 0.0;
  for (size_t m = 0; m < modes.size(); ++m) {
    acc += modes[m].weight;
    if (u < acc) return static_cast<int>(m);
  }
  return static_cast<int>(modes.size()) - 1;
}

}  // namespace

DomainDataset gen_domain(const DomainConfig& cfg) {
  cfg.validate();
  int s = cfg.image_size;
  int n = cfg.n_samples;
  int64_t plane = static_cast<int64_t>(s) * s;

  std::vector<double> images(static_cast<size_t>(n) * 3 * plane);
  std::vector<int> labels(static_cast<size_t>(n));
  std::vector<int> masks(static_cast<size_t>(n) * plane);
  std::vector<int> mask(static_cast<size_t>(plane));

  for (int img = 0; img < n; ++img) {
    Rng geo = Rng::derived(cfg.seed, 2 * static_cast<uint64_t>(img));
    Rng sty = Rng::derived(cfg.seed, 2 * static_cast<uint64_t>(img) + 1);

    Geometry g = draw_geometry(geo, cfg, mask);
    labels[static_cast<size_t>(img)] = g.cls;
    std::copy(mask.begin(), mask.end(), masks.begin() + static_cast<int64_t>(img) * plane);

    // low-frequency background texture shared across channels
    double base = geo.uniform(0.10, 0.30);
    double amp = geo.uniform(0.04, 0.10);
    double fx = geo.uniform(0.5, 2.0), fy = geo.uniform(0.5, 2.0);
    double phase = geo.uniform(0.0, 6.283185307179586);
    std::array<double, 3> bg_off{geo.uniform(-0.04, 0.04), geo.uniform(-0.04, 0.04),
                                 geo.uniform(-0.04, 0.04)};
    std::array<double, 3> fg_col{geo.uniform(0.7, 1.0), geo.uniform(0.7, 1.0),
                                 geo.uniform(0.7, 1.0)};

    const StyleMode& mode = cfg.style_modes[static_cast<size_t>(draw_mode(sty, cfg.style_modes))];
    std::array<double, 3> gain, bias;
    for (int c = 0; c < 3; ++c) {
      gain[static_cast<size_t>(c)] = std::max(
          0.05, mode.gain_mean[static_cast<size_t>(c)] + mode.gain_std[static_cast<size_t>(c)] * sty.normal());
      bias[static_cast<size_t>(c)] =
          mode.bias_mean[static_cast<size_t>(c)] + mode.bias_std[static_cast<size_t>(c)] * sty.normal();
    }

    double* dst = images.data() + static_cast<int64_t>(img) * 3 * plane;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          double v;
          if (mask[static_cast<size_t>(i) * s + j] > 0) {
            v = fg_col[static_cast<size_t>(c)];
          } else {
            v = base + bg_off[static_cast<size_t>(c)] +
                amp * std::sin(6.283185307179586 * (fx * i + fy * j) / s + phase);
          }
          v = gain[static_cast<size_t>(c)] * v + bias[static_cast<size_t>(c)];
          if (mode.noise_std > 0.0) v += mode.noise_std * sty.normal();
          dst[static_cast<int64_t>(c) * plane + static_cast<int64_t>(i) * s + j] = v;
        }
      }
    }
  }

  DomainDataset ds;
  ds.images = Tensor::from({n, 3, s, s}, std::move(images));
  ds.class_labels = std::move(labels);
  ds.pixel_masks = std::move(masks);
  ds.provenance = cfg;
  return ds;
}

namespace {

constexpr uint32_t kMagic = 0x53444853u;  // "SHDS" little-endian
constexpr uint32_t kVersion = 1u;

void write_u32(std::ofstream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& is, const std::string& path) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw io_error("load_dataset: truncated file " + path);
  return v;
}

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

}  // namespace

void save_dataset(const DomainDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("save_dataset: cannot open " + path);
  write_u32(os, kMagic);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(ds.n()));
  write_u32(os, static_cast<uint32_t>(ds.height()));
  write_u32(os, static_cast<uint32_t>(ds.width()));
  write_u32(os, static_cast<uint32_t>(ds.num_mask_classes()));
  const auto& img = ds.images.data();
  os.write(reinterpret_cast<const char*>(img.data()),
           static_cast<std::streamsize>(img.size() * sizeof(double)));
  static_assert(sizeof(int) == 4, "labels serialize as 32-bit integers");
  os.write(reinterpret_cast<const char*>(ds.class_labels.data()),
           static_cast<std::streamsize>(ds.class_labels.size() * sizeof(int)));
  os.write(reinterpret_cast<const char*>(ds.pixel_masks.data()),
           static_cast<std::streamsize>(ds.pixel_masks.size() * sizeof(int)));
  if (!os) throw io_error("save_dataset: write failed for " + path);
  os.close();

  std::ofstream sidecar(path + ".json");
  if (!sidecar) throw io_error("save_dataset: cannot open " + path + ".json");
  sidecar << ds.provenance.to_json().dump(2) << "\n";
}

DomainDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("load_dataset: cannot open " + path);
  if (read_u32(is, path) != kMagic) throw data_error("load_dataset: bad magic in " + path);
  if (read_u32(is, path) != kVersion) throw data_error("load_dataset: unsupported version in " + path);
  int n = static_cast<int>(read_u32(is, path));
  int h = static_cast<int>(read_u32(is, path));
  int w = static_cast<int>(read_u32(is, path));
  read_u32(is, path);  // mask alphabet size; re-derived from provenance

  DomainDataset ds;
  std::vector<double> img(static_cast<size_t>(n) * 3 * h * w);
  is.read(reinterpret_cast<char*>(img.data()),
          static_cast<std::streamsize>(img.size() * sizeof(double)));
  ds.class_labels.resize(static_cast<size_t>(n));
  is.read(reinterpret_cast<char*>(ds.class_labels.data()),
          static_cast<std::streamsize>(ds.class_labels.size() * sizeof(int)));
  ds.pixel_masks.resize(static_cast<size_t>(n) * h * w);
  is.read(reinterpret_cast<char*>(ds.pixel_masks.data()),
          static_cast<std::streamsize>(ds.pixel_masks.size() * sizeof(int)));
  if (!is) throw io_error("load_dataset: truncated file " + path);
  ds.images = Tensor::from({n, 3, h, w}, std::move(img));

  std::ifstream sidecar(path + ".json");
  if (!sidecar) throw io_error("load_dataset: missing provenance sidecar for " + path);
  json j;
  try {
    sidecar >> j;
  } catch (const json::exception& e) {
    throw data_error("load_dataset: bad provenance sidecar: " + std::string(e.what()));
  }
  ds.provenance = DomainConfig::from_json(j);
  return ds;
}

void export_pngs(const DomainDataset& ds, const std::string& dir, int limit) {
  fs::create_directories(dir);
  int h = ds.height(), w = ds.width();
  int64_t plane = static_cast<int64_t>(h) * w;
  int count = std::min(limit, ds.n());
  std::vector<uint8_t> rgb(static_cast<size_t>(plane) * 3);
  for (int i = 0; i < count; ++i) {
    const double* img = ds.images.data().data() + static_cast<int64_t>(i) * 3 * plane;
    for (int64_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c) {
        double v = img[static_cast<int64_t>(c) * plane + p] / 2.0;  // [0,~2] -> [0,1]
        v = std::clamp(v, 0.0, 1.0);
        rgb[static_cast<size_t>(p) * 3 + static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
    detail::write_png_rgb8(dir + "/" + ds.provenance.name + "_" + std::to_string(i) + ".png", w, h,
                           rgb);
  }
}

namespace {

StyleMode make_mode(double weight, std::array<double, 3> gain, std::array<double, 3> bias) {
  StyleMode m;
  m.weight = weight;
  m.gain_mean = gain;
  m.bias_mean = bias;
  return m;
}

}  // namespace

DomainConfig default_source_config(uint64_t seed, int n_samples, const std::string& name) {
  DomainConfig c;
  c.name = name;
  c.n_samples = n_samples;
  c.seed = seed;
  c.style_modes = {
      make_mode(0.90, {1.00, 1.00, 1.00}, {0.00, 0.00, 0.00}),  // dominant
      make_mode(0.05, {1.55, 1.15, 0.75}, {0.25, 0.10, 0.00}),  // rare
      make_mode(0.05, {0.50, 0.85, 1.30}, {0.00, 0.10, 0.25}),  // rare
  };
  return c;
}

std::vector<DomainConfig> default_target_configs(uint64_t seed) {
  struct Def {
    const char* name;
    std::array<double, 3> gain, bias;
  };
  // Held-out modes at increasing distance from the source's dominant mode.
  const Def defs[] = {
      {"target_near", {1.25, 1.10, 0.90}, {0.10, 0.05, 0.03}},
      {"target_mid", {1.80, 0.70, 0.55}, {0.30, -0.05, 0.20}},
      {"target_far", {0.40, 1.90, 1.75}, {0.50, 0.25, -0.05}},
  };
  std::vector<DomainConfig> out;
  uint64_t stream = 2000;
  for (const Def& d : defs) {
    DomainConfig c;
    c.name = d.name;
    c.n_samples = 500;
    c.seed = Rng::mix(seed, stream++);
    c.style_modes = {make_mode(1.0, d.gain, d.bias)};
    out.push_back(std::move(c));
  }
  return out;
}

DomainConfig broaden(const DomainConfig& cfg) {
  // Equal mode weights and a moderately widened spread: diverse enough to
  // stand in for general visual knowledge, without covering the held-out
  // target styles outright.
  DomainConfig b = cfg;
  b.name = cfg.name + "_broad";
  b.seed = Rng::mix(cfg.seed, 77);
  double w = 1.0 / static_cast<double>(b.style_modes.size());
  for (size_t i = 0; i < b.style_modes.size(); ++i) {
    StyleMode& m = b.style_modes[i];
    m.weight = i + 1 == b.style_modes.size()
                   ? 1.0 - w * static_cast<double>(b.style_modes.size() - 1)
                   : w;
    for (int c = 0; c < 3; ++c) {
      m.gain_std[static_cast<size_t>(c)] *= 1.5;
      m.bias_std[static_cast<size_t>(c)] *= 1.5;
    }
    m.noise_std *= 1.5;
  }
  return b;
}

Benchmark make_benchmark(uint64_t seed) {
  Benchmark b;
  b.source_train = gen_domain(default_source_config(Rng::mix(seed, 1000), 2000, "source"));
  b.source_val = gen_domain(default_source_config(Rng::mix(seed, 1001), 500, "source_val"));
  for (const DomainConfig& c : default_target_configs(seed)) b.targets.push_back(gen_domain(c));
  return b;
}

void save_benchmark(const Benchmark& b, const std::string& dir) {
  fs::create_directories(dir);
  save_dataset(b.source_train, dir + "/source_train.bin");
  save_dataset(b.source_val, dir + "/source_val.bin");
  for (const DomainDataset& t : b.targets)
    save_dataset(t, dir + "/" + t.provenance.name + ".bin");
}

Benchmark load_benchmark(const std::string& dir) {
  Benchmark b;
  b.source_train = load_dataset(dir + "/source_train.bin");
  b.source_val = load_dataset(dir + "/source_val.bin");
  for (const char* name : {"target_near", "target_mid", "target_far"}) {
    std::string path = dir + "/" + name + ".bin";
    if (fs::exists(path)) b.targets.push_back(load_dataset(path));
  }
  if (b.targets.empty()) throw data_error("load_benchmark: no target datasets in " + dir);
  return b;
}

Tensor gather_images(const DomainDataset& ds, const std::vector<int>& idx) {
  int h = ds.height(), w = ds.width();
  int64_t chw = 3LL * h * w;
  std::vector<double> out(idx.size() * static_cast<size_t>(chw));
  const double* src = ds.images.data().data();
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.data() + static_cast<int64_t>(i) * chw, src + idx[i] * chw,
                static_cast<size_t>(chw) * sizeof(double));
  return Tensor::from({static_cast<int>(idx.size()), 3, h, w}, std::move(out));
}

std::vector<int> gather_labels(const DomainDataset& ds, const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = ds.class_labels[static_cast<size_t>(idx[i])];
  return out;
}

std::vector<int> gather_masks(const DomainDataset& ds, const std::vector<int>& idx) {
  int64_t plane = static_cast<int64_t>(ds.height()) * ds.width();
  std::vector<int> out(idx.size() * static_cast<size_t>(plane));
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(ds.pixel_masks.begin() + idx[i] * plane, plane,
                out.begin() + static_cast<int64_t>(i) * plane);
  return out;
}

}  // namespace shade
