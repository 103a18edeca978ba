#include "shade/style.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace shade {

using nlohmann::json;

std::vector<double> style_embed(const StyleVector& s) {
  std::vector<double> e;
  e.reserve(s.mu.size() * 2);
  e.insert(e.end(), s.mu.begin(), s.mu.end());
  e.insert(e.end(), s.sigma.begin(), s.sigma.end());
  return e;
}

double style_distance(const StyleVector& a, const StyleVector& b) {
  if (a.mu.size() != b.mu.size()) throw contract_error("style_distance: channel mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.mu.size(); ++i) {
    double d = a.mu[i] - b.mu[i];
    acc += d * d;
    double e = a.sigma[i] - b.sigma[i];
    acc += e * e;
  }
  return std::sqrt(acc);
}

std::vector<StyleVector> extract_style(const Tensor& features, double eps) {
  if (features.rank() != 4) throw shape_error("extract_style: expects (N,C,h,w)");
  if (!(eps > 0.0)) throw contract_error("extract_style: eps must be positive");
  int n = features.dim(0), c = features.dim(1);
  int64_t hw = static_cast<int64_t>(features.dim(2)) * features.dim(3);
  const double* x = features.data().data();
  std::vector<StyleVector> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    StyleVector& s = out[static_cast<size_t>(i)];
    s.mu.resize(static_cast<size_t>(c));
    s.sigma.resize(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
      const double* p = x + (static_cast<int64_t>(i) * c + ch) * hw;
      double mean = 0.0;
      for (int64_t t = 0; t < hw; ++t) mean += p[t];
      mean /= static_cast<double>(hw);
      double var = 0.0;
      for (int64_t t = 0; t < hw; ++t) {
        double d = p[t] - mean;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      s.mu[static_cast<size_t>(ch)] = mean;
      s.sigma[static_cast<size_t>(ch)] = std::sqrt(var + eps);
    }
  }
  return out;
}

Tensor apply_style(const Tensor& features, const std::vector<StyleVector>& targets, double eps) {
  if (features.rank() != 4) throw shape_error("apply_style: expects (N,C,h,w)");
  int n = features.dim(0), c = features.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw contract_error("apply_style: need one target style per sample");
  std::vector<StyleVector> own = extract_style(features, eps);
  std::vector<double> scale(static_cast<size_t>(n) * c);
  std::vector<double> shift(static_cast<size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    const StyleVector& t = targets[static_cast<size_t>(i)];
    if (t.channels() != c) throw contract_error("apply_style: target channel mismatch");
    for (int ch = 0; ch < c; ++ch) {
      double ts = t.sigma[static_cast<size_t>(ch)];
      if (ts < 0.0) throw contract_error("apply_style: target sigma must be >= 0");
      size_t nc = static_cast<size_t>(i) * c + static_cast<size_t>(ch);
      double s = ts / own[static_cast<size_t>(i)].sigma[static_cast<size_t>(ch)];
      scale[nc] = s;
      shift[nc] = t.mu[static_cast<size_t>(ch)] -
                  s * own[static_cast<size_t>(i)].mu[static_cast<size_t>(ch)];
    }
  }
  // Statistics enter as constants; the affine keeps the content path
  // differentiable w.r.t. the features.
  return channel_affine(features, Tensor::from({n, c}, std::move(scale)),
                        Tensor::from({n, c}, std::move(shift)));
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

StyleVector embed_to_style(const std::vector<double>& e, int c) {
  StyleVector s;
  s.mu.assign(e.begin(), e.begin() + c);
  s.sigma.assign(e.begin() + c, e.end());
  return s;
}

}  // namespace

BasisStyles fps_select(const std::vector<StyleVector>& pool, int count) {
  int n = static_cast<int>(pool.size());
  if (count < 1) throw contract_error("fps_select: count must be >= 1");
  if (n < count)
    throw data_error("fps_select: insufficient styles (" + std::to_string(n) + " < " +
                     std::to_string(count) + ")");
  int c = pool[0].channels();
  std::vector<std::vector<double>> pts(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].channels() != c) throw contract_error("fps_select: inconsistent channel counts");
    pts[i] = style_embed(pool[i]);
  }

  std::vector<double> centroid(pts[0].size(), 0.0);
  for (const auto& p : pts)
    for (size_t d = 0; d < p.size(); ++d) centroid[d] += p[d];
  for (double& v : centroid) v /= static_cast<double>(n);

  std::vector<double> min_d(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) min_d[static_cast<size_t>(i)] = sq_dist(pts[static_cast<size_t>(i)], centroid);

  BasisStyles basis;
  basis.channels = c;
  basis.selector = "fps";
  std::vector<char> taken(static_cast<size_t>(n), 0);
  for (int pick = 0; pick < count; ++pick) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      if (min_d[static_cast<size_t>(i)] > best_d) {  // strict: ties keep the lowest index
        best_d = min_d[static_cast<size_t>(i)];
        best = i;
      }
    }
    taken[static_cast<size_t>(best)] = 1;
    basis.rows.push_back(pool[static_cast<size_t>(best)]);
    basis.pool_indices.push_back(best);
    // The centroid only seeds the first pick; afterwards min_d tracks the
    // distance to the selected set alone.
    for (int i = 0; i < n; ++i) {
      if (taken[static_cast<size_t>(i)]) continue;
      double d = sq_dist(pts[static_cast<size_t>(i)], pts[static_cast<size_t>(best)]);
      if (pick == 0 || d < min_d[static_cast<size_t>(i)]) min_d[static_cast<size_t>(i)] = d;
    }
  }
  return basis;
}

BasisStyles kmeans_select(const std::vector<StyleVector>& pool, int count, uint64_t seed,
                          int iters, std::vector<double>* wcss_history) {
  int n = static_cast<int>(pool.size());
  if (count < 1) throw contract_error("kmeans_select: count must be >= 1");
  if (iters < 1) throw contract_error("kmeans_select: iters must be >= 1");
  if (n < count)
    throw data_error("kmeans_select: insufficient styles (" + std::to_string(n) + " < " +
                     std::to_string(count) + ")");
  int c = pool[0].channels();
  std::vector<std::vector<double>> pts(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) pts[i] = style_embed(pool[i]);
  size_t dim = pts[0].size();

  Rng rng(seed);
  // k-means++ seeding
  std::vector<std::vector<double>> centers;
  centers.push_back(pts[static_cast<size_t>(rng.randint(n))]);
  std::vector<double> d2(static_cast<size_t>(n));
  while (static_cast<int>(centers.size()) < count) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& ctr : centers) best = std::min(best, sq_dist(pts[static_cast<size_t>(i)], ctr));
      d2[static_cast<size_t>(i)] = best;
      total += best;
    }
    int chosen;
    if (total <= 0.0) {
      chosen = rng.randint(n);  // all points coincide with centers
    } else {
      double u = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (u < acc) {
          chosen = i;
          break;
        }
      }
    }
    centers.push_back(pts[static_cast<size_t>(chosen)]);
  }

  std::vector<int> assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    // assignment
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(pts[static_cast<size_t>(i)], centers[0]);
      for (int k = 1; k < count; ++k) {
        double d = sq_dist(pts[static_cast<size_t>(i)], centers[static_cast<size_t>(k)]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[static_cast<size_t>(i)] != best) changed = true;
      assign[static_cast<size_t>(i)] = best;
    }
    // update
    std::vector<std::vector<double>> sums(static_cast<size_t>(count),
                                          std::vector<double>(dim, 0.0));
    std::vector<int> sizes(static_cast<size_t>(count), 0);
    for (int i = 0; i < n; ++i) {
      int k = assign[static_cast<size_t>(i)];
      sizes[static_cast<size_t>(k)]++;
      for (size_t d = 0; d < dim; ++d) sums[static_cast<size_t>(k)][d] += pts[static_cast<size_t>(i)][d];
    }
    for (int k = 0; k < count; ++k) {
      if (sizes[static_cast<size_t>(k)] == 0) {
        // re-seed to the point farthest from this centroid
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double d = sq_dist(pts[static_cast<size_t>(i)], centers[static_cast<size_t>(k)]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers[static_cast<size_t>(k)] = pts[static_cast<size_t>(far)];
        changed = true;
      } else {
        for (size_t d = 0; d < dim; ++d)
          centers[static_cast<size_t>(k)][d] =
              sums[static_cast<size_t>(k)][d] / static_cast<double>(sizes[static_cast<size_t>(k)]);
      }
    }
    if (wcss_history) {
      double obj = 0.0;
      for (int i = 0; i < n; ++i)
        obj += sq_dist(pts[static_cast<size_t>(i)], centers[static_cast<size_t>(assign[static_cast<size_t>(i)])]);
      wcss_history->push_back(obj);
    }
    if (!changed) break;
  }

  BasisStyles basis;
  basis.channels = c;
  basis.selector = "kmeans";
  for (const auto& ctr : centers) basis.rows.push_back(embed_to_style(ctr, c));
  return basis;
}

CombinationWeight sample_dirichlet(int c, Rng& rng) {
  if (c < 1) throw contract_error("sample_dirichlet: dimension must be >= 1");
  CombinationWeight w;
  w.w.resize(static_cast<size_t>(c));
  double alpha = 1.0 / static_cast<double>(c);
  for (;;) {
    double sum = 0.0;
    for (double& v : w.w) {
      v = rng.gamma(alpha);
      sum += v;
    }
    if (sum > 0.0) {
      for (double& v : w.w) v /= sum;
      return w;
    }
    // all-zero draw: probability ~0, redraw
  }
}

StyleVector hallucinate(const BasisStyles& basis, const CombinationWeight& w) {
  if (w.w.size() != basis.rows.size())
    throw contract_error("hallucinate: weight count must match basis rows");
  StyleVector out;
  size_t c = static_cast<size_t>(basis.channels);
  out.mu.assign(c, 0.0);
  out.sigma.assign(c, 0.0);
  for (size_t r = 0; r < basis.rows.size(); ++r) {
    double wr = w.w[r];
    const StyleVector& row = basis.rows[r];
    for (size_t ch = 0; ch < c; ++ch) {
      out.mu[ch] += wr * row.mu[ch];
      out.sigma[ch] += wr * row.sigma[ch];
    }
  }
  return out;
}

StyleVector random_style(int c, Rng& rng) {
  StyleVector s;
  s.mu.resize(static_cast<size_t>(c));
  s.sigma.resize(static_cast<size_t>(c));
  for (double& v : s.mu) v = rng.normal();
  for (double& v : s.sigma) v = std::abs(rng.normal());
  return s;
}

namespace {

std::vector<int> shuffled_partners(int n, Rng& rng) {
  std::vector<int> perm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  rng.shuffle(perm);
  return perm;
}

}  // namespace

Tensor mixstyle_batch(const Tensor& features, Rng& rng, double alpha, double eps) {
  int n = features.dim(0);
  if (n < 2) throw contract_error("mixstyle_batch: needs a batch of at least 2");
  std::vector<StyleVector> own = extract_style(features, eps);
  std::vector<int> partner = shuffled_partners(n, rng);
  std::vector<StyleVector> mixed(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double lam = rng.beta(alpha, alpha);
    const StyleVector& a = own[static_cast<size_t>(i)];
    const StyleVector& b = own[static_cast<size_t>(partner[static_cast<size_t>(i)])];
    StyleVector& m = mixed[static_cast<size_t>(i)];
    m.mu.resize(a.mu.size());
    m.sigma.resize(a.sigma.size());
    for (size_t ch = 0; ch < a.mu.size(); ++ch) {
      m.mu[ch] = lam * a.mu[ch] + (1.0 - lam) * b.mu[ch];
      m.sigma[ch] = lam * a.sigma[ch] + (1.0 - lam) * b.sigma[ch];
    }
  }
  return apply_style(features, mixed, eps);
}

Tensor crossnorm_batch(const Tensor& features, Rng& rng, double eps) {
  int n = features.dim(0);
  if (n < 2) throw contract_error("crossnorm_batch: needs a batch of at least 2");
  std::vector<StyleVector> own = extract_style(features, eps);
  std::vector<int> partner = shuffled_partners(n, rng);
  std::vector<StyleVector> swapped(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) swapped[static_cast<size_t>(i)] = own[static_cast<size_t>(partner[static_cast<size_t>(i)])];
  return apply_style(features, swapped, eps);
}

std::vector<StyleVector> collect_styles(const ModelSpec& spec, const ModelParams& params,
                                        const DomainDataset& dataset, int insertion_point,
                                        int max_samples, Rng& rng, double eps) {
  if (dataset.n() == 0) throw data_error("collect_styles: empty dataset");
  std::vector<int> idx;
  if (max_samples >= dataset.n()) {
    idx.resize(static_cast<size_t>(dataset.n()));
    for (int i = 0; i < dataset.n(); ++i) idx[static_cast<size_t>(i)] = i;
  } else {
    idx = rng.sample_indices(dataset.n(), max_samples);
  }

  NoGradGuard ng;
  std::vector<StyleVector> styles;
  styles.reserve(idx.size());
  constexpr int kChunk = 64;
  for (size_t start = 0; start < idx.size(); start += kChunk) {
    size_t end = std::min(idx.size(), start + kChunk);
    std::vector<int> chunk(idx.begin() + static_cast<int64_t>(start),
                           idx.begin() + static_cast<int64_t>(end));
    Tensor feats = forward_until(spec, params, gather_images(dataset, chunk), insertion_point);
    std::vector<StyleVector> s = extract_style(feats, eps);
    styles.insert(styles.end(), s.begin(), s.end());
  }
  return styles;
}

json BasisStyles::to_json() const {
  json rows_j = json::array();
  for (const StyleVector& r : rows) rows_j.push_back({{"mu", r.mu}, {"sigma", r.sigma}});
  return {{"channels", channels},
          {"selector", selector},
          {"selected_at", selected_at},
          {"pool_indices", pool_indices},
          {"rows", rows_j}};
}

BasisStyles BasisStyles::from_json(const json& j) {
  BasisStyles b;
  try {
    b.channels = j.at("channels").get<int>();
    b.selector = j.at("selector").get<std::string>();
    b.selected_at = j.value("selected_at", static_cast<int64_t>(0));
    b.pool_indices = j.value("pool_indices", std::vector<int>{});
    for (const auto& r : j.at("rows")) {
      StyleVector s;
      s.mu = r.at("mu").get<std::vector<double>>();
      s.sigma = r.at("sigma").get<std::vector<double>>();
      b.rows.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw data_error(std::string("BasisStyles: ") + e.what());
  }
  return b;
}

json styles_to_json(const std::vector<StyleVector>& styles, int channels,
                    const std::string& selector) {
  json rows = json::array();
  for (const StyleVector& s : styles) rows.push_back({{"mu", s.mu}, {"sigma", s.sigma}});
  return {{"channels", channels}, {"selector", selector}, {"rows", rows}};
}

}  // namespace shade
