#pragma once

#include <vector>

namespace shade::detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues ascending with matching columns in `vectors`
// (vectors[j*n + i] is component i of eigenvector j... stored row-major as
// vectors[j][i] flattened).
void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& values,
                 std::vector<double>& vectors);

}  // namespace shade::detail
