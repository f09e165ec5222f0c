#include "pidgen/kernels.hpp"

// Each C element is owned by one thread and summed in a fixed order, so
// results do not depend on the thread count.

namespace pidgen::kernels::omp {

namespace {

constexpr std::size_t kRows = 4;
// Below this many multiply-adds the threading overhead dominates.
constexpr std::size_t kParallelWork = 1u << 16;

// C rows [i, i+rows) += sum_p a(r, p) * B[p, :], a(r, p) = A[r*row_stride + p*col_stride].
inline void rank_update_block(std::size_t rows, std::size_t n, std::size_t k, const double* A, std::size_t row_stride,
                              std::size_t col_stride, const double* B, double* C) {
  if (rows == kRows) {
    double* c0 = C;
    double* c1 = C + n;
    double* c2 = C + 2 * n;
    double* c3 = C + 3 * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a0 = A[p * col_stride];
      const double a1 = A[row_stride + p * col_stride];
      const double a2 = A[2 * row_stride + p * col_stride];
      const double a3 = A[3 * row_stride + p * col_stride];
      const double* b = B + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = b[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
    return;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* c = C + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[r * row_stride + p * col_stride];
      const double* b = B + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  const std::size_t blocks = (m + kRows - 1) / kRows;
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i = bi * kRows;
    const std::size_t rows = i + kRows <= m ? kRows : m - i;
    rank_update_block(rows, n, k, A + i * k, k, 1, B, C + i * n);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  const std::size_t blocks = (m + kRows - 1) / kRows;
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i = bi * kRows;
    const std::size_t rows = i + kRows <= m ? kRows : m - i;
    rank_update_block(rows, n, k, A + i, 1, m, B, C + i * n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  const std::size_t blocks = (m + kRows - 1) / kRows;
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i = bi * kRows;
    const std::size_t rows = i + kRows <= m ? kRows : m - i;
    if (rows == kRows) {
      const double* a0 = A + i * k;
      const double* a1 = a0 + k;
      const double* a2 = a1 + k;
      const double* a3 = a2 + k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
        for (std::size_t p = 0; p < k; ++p) {
          s0 += a0[p] * b[p];
          s1 += a1[p] * b[p];
          s2 += a2[p] * b[p];
          s3 += a3[p] * b[p];
        }
        C[i * n + j] += s0;
        C[(i + 1) * n + j] += s1;
        C[(i + 2) * n + j] += s2;
        C[(i + 3) * n + j] += s3;
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* a = A + (i + r) * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double* b = B + j * k;
          double s = 0;
#pragma omp simd reduction(+ : s)
          for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
          C[(i + r) * n + j] += s;
        }
      }
    }
  }
}

}  // namespace pidgen::kernels::omp
