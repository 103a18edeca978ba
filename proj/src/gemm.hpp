#pragma once

// Internal dense kernels, row-major, accumulate into C.

namespace shade::detail {

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn_acc(const double* A, const double* B, double* C, int m, int k, int n);

// C (m x k) += A (m x n) * B^T where B is (k x n)
void gemm_nt_acc(const double* A, const double* B, double* C, int m, int n, int k);

// C (k x n) += A^T * B where A is (m x k), B is (m x n)
void gemm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n);

}  // namespace shade::detail
