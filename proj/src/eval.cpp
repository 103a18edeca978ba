#include "shade/eval.hpp"

#include <algorithm>
#include <cmath>

#include "pca.hpp"
#include "shade/ops.hpp"
#include "shade/style.hpp"

namespace shade {

using nlohmann::json;

uint64_t ConfusionMatrix::total() const {
  uint64_t t = 0;
  for (uint64_t c : counts) t += c;
  return t;
}

double ConfusionMatrix::accuracy() const {
  uint64_t t = total();
  if (t == 0) return 0.0;
  uint64_t diag = 0;
  for (int i = 0; i < k; ++i) diag += at(i, i);
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
  std::vector<double> iou(static_cast<size_t>(k), -1.0);
  for (int c = 0; c < k; ++c) {
    uint64_t tp = at(c, c);
    uint64_t gt = 0, pred = 0;
    for (int j = 0; j < k; ++j) {
      gt += at(c, j);
      pred += at(j, c);
    }
    if (gt == 0) continue;  // class absent from ground truth
    uint64_t denom = gt + pred - tp;
    iou[static_cast<size_t>(c)] = denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }
  return iou;
}

double ConfusionMatrix::miou() const {
  std::vector<double> iou = per_class_iou();
  double sum = 0.0;
  int present = 0;
  for (double v : iou) {
    if (v >= 0.0) {
      sum += v;
      ++present;
    }
  }
  return present == 0 ? 0.0 : sum / present;
}

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const DomainDataset& ds,
                    HeadKind task, int batch_size) {
  if (batch_size < 1) throw contract_error("evaluate: batch_size must be >= 1");
  NoGradGuard ng;
  EvalResult res;
  res.cm = ConfusionMatrix(spec.num_classes);
  double loss_sum = 0.0;
  int64_t loss_units = 0;

  for (int start = 0; start < ds.n(); start += batch_size) {
    int end = std::min(ds.n(), start + batch_size);
    std::vector<int> idx(static_cast<size_t>(end - start));
    for (int i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    Tensor images = gather_images(ds, idx);
    ForwardTrace t = forward(spec, params, images);

    if (task == HeadKind::classification) {
      std::vector<int> labels = gather_labels(ds, idx);
      loss_sum += task_loss(t.logits, labels, task).item() * static_cast<double>(idx.size());
      loss_units += static_cast<int64_t>(idx.size());
      int kcls = spec.num_classes;
      for (size_t i = 0; i < idx.size(); ++i) {
        const double* row = t.logits.data().data() + static_cast<int64_t>(i) * kcls;
        int arg = 0;
        for (int c = 1; c < kcls; ++c)
          if (row[c] > row[arg]) arg = c;
        res.cm.at(labels[i], arg)++;
      }
    } else {
      int h = t.logits.dim(2), w = t.logits.dim(3);
      int factor = ds.height() / h;
      std::vector<int> masks = downsample_labels(gather_masks(ds, idx), static_cast<int>(idx.size()),
                                                 ds.height(), ds.width(), factor);
      loss_sum += task_loss(t.logits, masks, task).item() *
                  static_cast<double>(idx.size() * static_cast<size_t>(h) * w);
      loss_units += static_cast<int64_t>(idx.size()) * h * w;
      int kcls = spec.num_classes;
      int64_t hw = static_cast<int64_t>(h) * w;
      const double* logits = t.logits.data().data();
      for (size_t i = 0; i < idx.size(); ++i) {
        for (int64_t p = 0; p < hw; ++p) {
          int arg = 0;
          double best = logits[(static_cast<int64_t>(i) * kcls) * hw + p];
          for (int c = 1; c < kcls; ++c) {
            double v = logits[(static_cast<int64_t>(i) * kcls + c) * hw + p];
            if (v > best) {
              best = v;
              arg = c;
            }
          }
          res.cm.at(masks[i * static_cast<size_t>(hw) + static_cast<size_t>(p)], arg)++;
        }
      }
    }
  }

  res.metric = task == HeadKind::classification ? res.cm.accuracy() : res.cm.miou();
  res.mean_task_loss = loss_units > 0 ? loss_sum / static_cast<double>(loss_units) : 0.0;
  return res;
}

double generalization_gap(double source_metric, const std::vector<double>& target_metrics) {
  if (target_metrics.empty()) throw contract_error("generalization_gap: no target metrics");
  double mean = 0.0;
  for (double m : target_metrics) mean += m;
  mean /= static_cast<double>(target_metrics.size());
  return source_metric - mean;
}

Pca2d fit_pca2d(const std::vector<std::vector<double>>& points) {
  if (points.size() < 3) throw data_error("fit_pca2d: degenerate projection, need >= 3 points");
  size_t d = points[0].size();
  if (d < 2) throw contract_error("fit_pca2d: need at least 2 dimensions");
  Pca2d pca;
  pca.mean.assign(d, 0.0);
  for (const auto& p : points)
    for (size_t i = 0; i < d; ++i) pca.mean[i] += p[i];
  for (double& m : pca.mean) m /= static_cast<double>(points.size());

  std::vector<double> cov(d * d, 0.0);
  for (const auto& p : points) {
    for (size_t i = 0; i < d; ++i) {
      double di = p[i] - pca.mean[i];
      for (size_t j = i; j < d; ++j) cov[i * d + j] += di * (p[j] - pca.mean[j]);
    }
  }
  for (size_t i = 0; i < d; ++i)
    for (size_t j = i; j < d; ++j) {
      double v = cov[i * d + j] / static_cast<double>(points.size());
      cov[i * d + j] = v;
      cov[j * d + i] = v;
    }

  std::vector<double> values, vectors;
  detail::jacobi_eigh(cov, static_cast<int>(d), values, vectors);
  double total = 0.0;
  for (double v : values) total += std::max(v, 0.0);
  // top-2 eigenpairs (values come back ascending)
  for (int a = 0; a < 2; ++a) {
    size_t j = d - 1 - static_cast<size_t>(a);
    pca.axes[static_cast<size_t>(a)].assign(vectors.begin() + static_cast<int64_t>(j * d),
                                            vectors.begin() + static_cast<int64_t>((j + 1) * d));
    pca.explained_variance[static_cast<size_t>(a)] =
        total > 0.0 ? std::max(values[j], 0.0) / total : 0.0;
  }
  return pca;
}

std::array<double, 2> Pca2d::project(const std::vector<double>& x) const {
  std::array<double, 2> out{0.0, 0.0};
  for (size_t a = 0; a < 2; ++a)
    for (size_t i = 0; i < mean.size(); ++i) out[a] += (x[i] - mean[i]) * axes[a][i];
  return out;
}

namespace {

double min_pairwise_distance(const std::vector<StyleVector>& rows) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = i + 1; j < rows.size(); ++j)
      best = std::min(best, style_distance(rows[i], rows[j]));
  return rows.size() < 2 ? 0.0 : best;
}

double basis_coverage_radius(const std::vector<StyleVector>& pool, const BasisStyles& basis) {
  double radius = 0.0;
  for (const StyleVector& p : pool) {
    double d = std::numeric_limits<double>::infinity();
    for (const StyleVector& b : basis.rows) d = std::min(d, style_distance(p, b));
    radius = std::max(radius, d);
  }
  return radius;
}

}  // namespace

json export_style_space(const ModelSpec& spec, const ModelParams& params, const Benchmark& bench,
                        const StyleSpaceOptions& opts) {
  int ip = spec.insertion_point;
  int channels = spec.channels_at(ip);

  Rng pool_rng = Rng::derived(opts.seed, 501);
  std::vector<StyleVector> source_pool =
      collect_styles(spec, params, bench.source_train, ip, opts.pool_max, pool_rng, opts.feature_eps);
  std::vector<std::vector<StyleVector>> target_pools;
  for (const DomainDataset& t : bench.targets)
    target_pools.push_back(
        collect_styles(spec, params, t, ip, opts.target_pool_max, pool_rng, opts.feature_eps));

  if (source_pool.size() < 3) throw data_error("export_style_space: degenerate projection");

  BasisStyles fps = fps_select(source_pool, channels);
  BasisStyles km = kmeans_select(source_pool, channels, Rng::mix(opts.seed, 502), opts.kmeans_iters);

  Rng gen_rng = Rng::derived(opts.seed, 503);
  std::vector<StyleVector> generated;
  for (int i = 0; i < opts.n_generated; ++i)
    generated.push_back(hallucinate(fps, sample_dirichlet(channels, gen_rng)));

  // fit on the union of observed (source + target) styles
  std::vector<std::vector<double>> fit_points;
  for (const StyleVector& s : source_pool) fit_points.push_back(style_embed(s));
  for (const auto& pool : target_pools)
    for (const StyleVector& s : pool) fit_points.push_back(style_embed(s));
  Pca2d pca = fit_pca2d(fit_points);

  json points = json::array();
  auto emit = [&](const StyleVector& s, const std::string& domain, const std::string& kind) {
    std::array<double, 2> xy = pca.project(style_embed(s));
    points.push_back({{"x", xy[0]}, {"y", xy[1]}, {"domain", domain}, {"kind", kind}});
  };
  for (const StyleVector& s : source_pool) emit(s, "source", "source");
  for (size_t t = 0; t < target_pools.size(); ++t)
    for (const StyleVector& s : target_pools[t])
      emit(s, bench.targets[t].provenance.name, "target");
  for (const StyleVector& s : fps.rows) emit(s, "source", "fps_basis");
  for (const StyleVector& s : km.rows) emit(s, "source", "kmeans_basis");
  for (const StyleVector& s : generated) emit(s, "source", "generated");

  json diagnostics{
      {"pool_size", source_pool.size()},
      {"channels", channels},
      {"fps",
       {{"min_pairwise_distance", min_pairwise_distance(fps.rows)},
        {"coverage_radius", basis_coverage_radius(source_pool, fps)}}},
      {"kmeans",
       {{"min_pairwise_distance", min_pairwise_distance(km.rows)},
        {"coverage_radius", basis_coverage_radius(source_pool, km)}}},
  };

  return json{{"projection", "pca"},
              {"explained_variance", pca.explained_variance},
              {"points", points},
              {"diagnostics", diagnostics}};
}

}  // namespace shade
