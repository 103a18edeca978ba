#include "pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace shade::detail {

void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& values,
                 std::vector<double>& vectors) {
  std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) s += a[static_cast<size_t>(i) * n + j] * a[static_cast<size_t>(i) * n + j];
    return s;
  };

  for (int sweep = 0; sweep < 100 && off_norm() > 1e-24; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = a[static_cast<size_t>(p) * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[static_cast<size_t>(p) * n + p];
        double aqq = a[static_cast<size_t>(q) * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double aip = a[static_cast<size_t>(i) * n + p];
          double aiq = a[static_cast<size_t>(i) * n + q];
          a[static_cast<size_t>(i) * n + p] = c * aip - s * aiq;
          a[static_cast<size_t>(i) * n + q] = s * aip + c * aiq;
        }
        for (int j = 0; j < n; ++j) {
          double apj = a[static_cast<size_t>(p) * n + j];
          double aqj = a[static_cast<size_t>(q) * n + j];
          a[static_cast<size_t>(p) * n + j] = c * apj - s * aqj;
          a[static_cast<size_t>(q) * n + j] = s * apj + c * aqj;
        }
        for (int i = 0; i < n; ++i) {
          double vip = v[static_cast<size_t>(i) * n + p];
          double viq = v[static_cast<size_t>(i) * n + q];
          v[static_cast<size_t>(i) * n + p] = c * vip - s * viq;
          v[static_cast<size_t>(i) * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  // sort ascending by eigenvalue, ties by original column index
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return diag[static_cast<size_t>(x)] < diag[static_cast<size_t>(y)]; });

  values.resize(static_cast<size_t>(n));
  vectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    int col = order[static_cast<size_t>(j)];
    values[static_cast<size_t>(j)] = diag[static_cast<size_t>(col)];
    // deterministic sign: largest-magnitude component positive
    int arg = 0;
    double best = 0.0;
    for (int i = 0; i < n; ++i) {
      double x = std::abs(v[static_cast<size_t>(i) * n + col]);
      if (x > best) {
        best = x;
        arg = i;
      }
    }
    double sign = v[static_cast<size_t>(arg) * n + col] >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i)
      vectors[static_cast<size_t>(j) * n + i] = sign * v[static_cast<size_t>(i) * n + col];
  }
}

}  // namespace shade::detail
