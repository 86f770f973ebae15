#pragma once

#include <cstddef>

// Internal: AVX2 translation unit entry points. Only kernels.cpp includes
// this. The AVX2 TU is compiled with -mavx2 -mfma; nothing here may be
// called unless CPUID reports both features.

namespace fpvit::kernels::avx2 {

float dot_f32(const float* a, const float* b, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate);
void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate);
void gemm_at_b_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k2,
                   std::size_t n, bool accumulate);
void gemm_at_b_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k2,
                   std::size_t n, bool accumulate);
void gemm_a_bt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
                   std::size_t k2, bool accumulate);
void gemm_a_bt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k2, bool accumulate);
void score_block_f32(const float* gallery, std::size_t count, std::size_t dim,
                     const float* probe, float* scores);

}  // namespace fpvit::kernels::avx2
