#pragma once

#include <cstddef>

// Dense row-major matmul kernels. Every routine accumulates into C:
//   gemm_nn: C[m x n] += A[m x k] * B[k x n]
//   gemm_tn: C[m x n] += A[k x m]^T * B[k x n]
//   gemm_nt: C[m x n] += A[m x k] * B[n x k]^T
// The serial namespace holds plain triple loops kept as the reference; the
// omp namespace is the blocked, vectorized, thread-parallel version the
// model uses.

namespace pidgen::kernels {

namespace serial {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
}  // namespace serial

namespace omp {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C);
}  // namespace omp

using omp::gemm_nn;
using omp::gemm_nt;
using omp::gemm_tn;

}  // namespace pidgen::kernels
