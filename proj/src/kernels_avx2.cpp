// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma;
// the dispatcher guarantees it is only entered on CPUs with both features.

#include "kernels_impl.hpp"

#include <cstring>
#include <immintrin.h>

namespace fpvit::kernels::avx2 {

namespace {

inline float hsum256_ps(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

inline double hsum256_pd(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

}  // namespace

float dot_f32(const float* a, const float* b, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float sum = hsum256_ps(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double sum = hsum256_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(float));
    for (std::size_t i = 0; i < m; ++i) {
        const float* a_row = a + i * k;
        float* c_row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float* b_row = b + p * n;
            __m256 av = _mm256_set1_ps(a_row[p]);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8)
                _mm256_storeu_ps(c_row + j, _mm256_fmadd_ps(av, _mm256_loadu_ps(b_row + j),
                                                            _mm256_loadu_ps(c_row + j)));
            for (; j < n; ++j) c_row[j] += a_row[p] * b_row[j];
        }
    }
}

void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        double* c_row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b_row = b + p * n;
            __m256d av = _mm256_set1_pd(a_row[p]);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(c_row + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b_row + j),
                                                            _mm256_loadu_pd(c_row + j)));
            for (; j < n; ++j) c_row[j] += a_row[p] * b_row[j];
        }
    }
}

void gemm_at_b_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k2,
                   std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, k2 * n * sizeof(float));
    for (std::size_t i = 0; i < m; ++i) {
        const float* a_row = a + i * k2;
        const float* b_row = b + i * n;
        for (std::size_t p = 0; p < k2; ++p) {
            float* c_row = c + p * n;
            __m256 av = _mm256_set1_ps(a_row[p]);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8)
                _mm256_storeu_ps(c_row + j, _mm256_fmadd_ps(av, _mm256_loadu_ps(b_row + j),
                                                            _mm256_loadu_ps(c_row + j)));
            for (; j < n; ++j) c_row[j] += a_row[p] * b_row[j];
        }
    }
}

void gemm_at_b_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k2,
                   std::size_t n, bool accumulate) {
    if (!accumulate) std::memset(c, 0, k2 * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k2;
        const double* b_row = b + i * n;
        for (std::size_t p = 0; p < k2; ++p) {
            double* c_row = c + p * n;
            __m256d av = _mm256_set1_pd(a_row[p]);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(c_row + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b_row + j),
                                                            _mm256_loadu_pd(c_row + j)));
            for (; j < n; ++j) c_row[j] += a_row[p] * b_row[j];
        }
    }
}

void gemm_a_bt_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
                   std::size_t k2, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* a_row = a + i * n;
        float* c_row = c + i * k2;
        for (std::size_t j = 0; j < k2; ++j) {
            float v = dot_f32(a_row, b + j * n, n);
            if (accumulate)
                c_row[j] += v;
            else
                c_row[j] = v;
        }
    }
}

void gemm_a_bt_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                   std::size_t k2, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * n;
        double* c_row = c + i * k2;
        for (std::size_t j = 0; j < k2; ++j) {
            double v = dot_f64(a_row, b + j * n, n);
            if (accumulate)
                c_row[j] += v;
            else
                c_row[j] = v;
        }
    }
}

namespace {

// Single-accumulator 8-wide dot with the same per-row operation order as
// the 4-row loop below, so a row's score does not depend on where a scan
// chunk starts.
inline float dot_row8(const float* g, const float* probe, std::size_t dim) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t j = 0;
    for (; j + 8 <= dim; j += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(g + j), _mm256_loadu_ps(probe + j), acc);
    float s = hsum256_ps(acc);
    for (; j < dim; ++j) s += g[j] * probe[j];
    return s;
}

}  // namespace

// Four gallery rows per pass: four independent FMA chains hide latency and
// the probe loads are shared. The gallery stream is the bandwidth limit.
void score_block_f32(const float* gallery, std::size_t count, std::size_t dim,
                     const float* probe, float* scores) {
    std::size_t r = 0;
    for (; r + 4 <= count; r += 4) {
        const float* g0 = gallery + (r + 0) * dim;
        const float* g1 = gallery + (r + 1) * dim;
        const float* g2 = gallery + (r + 2) * dim;
        const float* g3 = gallery + (r + 3) * dim;
        __m256 a0 = _mm256_setzero_ps();
        __m256 a1 = _mm256_setzero_ps();
        __m256 a2 = _mm256_setzero_ps();
        __m256 a3 = _mm256_setzero_ps();
        std::size_t j = 0;
        for (; j + 8 <= dim; j += 8) {
            __m256 p = _mm256_loadu_ps(probe + j);
            a0 = _mm256_fmadd_ps(_mm256_loadu_ps(g0 + j), p, a0);
            a1 = _mm256_fmadd_ps(_mm256_loadu_ps(g1 + j), p, a1);
            a2 = _mm256_fmadd_ps(_mm256_loadu_ps(g2 + j), p, a2);
            a3 = _mm256_fmadd_ps(_mm256_loadu_ps(g3 + j), p, a3);
        }
        float s0 = hsum256_ps(a0);
        float s1 = hsum256_ps(a1);
        float s2 = hsum256_ps(a2);
        float s3 = hsum256_ps(a3);
        for (; j < dim; ++j) {
            s0 += g0[j] * probe[j];
            s1 += g1[j] * probe[j];
            s2 += g2[j] * probe[j];
            s3 += g3[j] * probe[j];
        }
        scores[r + 0] = s0;
        scores[r + 1] = s1;
        scores[r + 2] = s2;
        scores[r + 3] = s3;
    }
    for (; r < count; ++r) scores[r] = dot_row8(gallery + r * dim, probe, dim);
}

}  // namespace fpvit::kernels::avx2
