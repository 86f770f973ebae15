#pragma once

#include <cstddef>
#include <string>

// Arithmetic inner loops shared by the transformer and the matcher scan.
// Every primitive has a scalar reference implementation and an AVX2+FMA
// variant; the active backend is picked once at startup from CPUID and can
// be overridden (tests force both and compare). SIMD results may differ
// from scalar in the last bits because FMA contracts rounding; equivalence
// tests bound that difference, callers must not expect bit equality
// between backends.

namespace fpvit::kernels {

enum class Backend { scalar, avx2 };

// Highest backend this CPU supports.
Backend detect_backend();

// Currently active backend. Defaults to detect_backend(); the
// FPVIT_KERNEL_BACKEND environment variable ("scalar" or "avx2") or
// force_backend() override it.
Backend active_backend();
void force_backend(Backend b);
std::string backend_name(Backend b);

// y = sum_i a[i] * b[i]
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

// y[i] += alpha * x[i]
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

// Row-major GEMM family sized for transformer blocks.
//   gemm:      C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_at_b: C[k2,n] (+)= A^T * B with A[m,k2], B[m,n]   (weight gradients)
//   gemm_a_bt: C[m,k2] (+)= A * B^T with A[m,n], B[k2,n]   (input gradients)
void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate);
void gemm_at_b(const float* a, const float* b, float* c, std::size_t m, std::size_t k2,
               std::size_t n, bool accumulate);
void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k2,
               std::size_t n, bool accumulate);
void gemm_a_bt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
               std::size_t k2, bool accumulate);
void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k2, bool accumulate);

// Matcher scan: scores[i] = dot(probe, gallery + i*dim). The gallery block
// is streamed once; this is the throughput-critical path.
void score_block(const float* gallery, std::size_t count, std::size_t dim,
                 const float* probe, float* scores);

}  // namespace fpvit::kernels
