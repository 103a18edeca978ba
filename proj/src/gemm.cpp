#include "gemm.hpp"

#include <cstdint>

namespace shade::detail {

void gemm_nn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<int64_t>(i) * k;
    double* c = C + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void gemm_nt_acc(const double* A, const double* B, double* C, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<int64_t>(i) * n;
    double* c = C + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* b = B + static_cast<int64_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += a[j] * b[j];
      c[p] += acc;
    }
  }
}

void gemm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<int64_t>(i) * k;
    const double* b = B + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[p];
      double* c = C + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace shade::detail
