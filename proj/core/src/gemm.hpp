#pragma once

#include <cstddef>

namespace chronoscope::detail {

// Row-major C[m,n] = op(A)[m,k] * op(B)[k,n], or C += ... when accumulate.
// op(A) = A^T when trans_a; A is then stored as [k,m].
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace chronoscope::detail
