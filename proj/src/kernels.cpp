#include "fpvit/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#ifdef FPVIT_WITH_AVX2
#include "kernels_impl.hpp"
#endif

namespace fpvit::kernels {

// ============================================================================
// Scalar reference kernels
// ============================================================================

namespace scalar {

template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m,n] (+)= A[m,k] * B[k,n], row-major. i-k-j order keeps the inner loop
// contiguous over both B and C.
template <typename T>
void gemm_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
              bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(T));
    for (std::size_t i = 0; i < m; ++i) {
        const T* a_row = a + i * k;
        T* c_row = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = a_row[p];
            const T* b_row = b + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// C[k2,n] (+)= A^T * B with A[m,k2], B[m,n].
template <typename T>
void gemm_at_b_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k2, std::size_t n,
                   bool accumulate) {
    if (!accumulate) std::memset(c, 0, k2 * n * sizeof(T));
    for (std::size_t i = 0; i < m; ++i) {
        const T* a_row = a + i * k2;
        const T* b_row = b + i * n;
        for (std::size_t p = 0; p < k2; ++p) {
            T av = a_row[p];
            T* c_row = c + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
        }
    }
}

// C[m,k2] (+)= A * B^T with A[m,n], B[k2,n].
template <typename T>
void gemm_a_bt_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k2,
                   bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a_row = a + i * n;
        T* c_row = c + i * k2;
        for (std::size_t j = 0; j < k2; ++j) {
            T acc = dot_ref(a_row, b + j * n, n);
            if (accumulate)
                c_row[j] += acc;
            else
                c_row[j] = acc;
        }
    }
}

void score_block_ref(const float* gallery, std::size_t count, std::size_t dim,
                     const float* probe, float* scores) {
    for (std::size_t i = 0; i < count; ++i) scores[i] = dot_ref(gallery + i * dim, probe, dim);
}

}  // namespace scalar

// ============================================================================
// Dispatch
// ============================================================================

namespace {

Backend resolve_initial_backend() {
    Backend best = detect_backend();
    if (const char* env = std::getenv("FPVIT_KERNEL_BACKEND")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && best == Backend::avx2) return Backend::avx2;
    }
    return best;
}

std::atomic<Backend> g_backend{resolve_initial_backend()};

}  // namespace

Backend detect_backend() {
#ifdef FPVIT_WITH_AVX2
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
#endif
    return Backend::scalar;
}

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

void force_backend(Backend b) {
    if (b == Backend::avx2 && detect_backend() != Backend::avx2) b = Backend::scalar;
    g_backend.store(b, std::memory_order_relaxed);
}

std::string backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

#ifdef FPVIT_WITH_AVX2
#define FPVIT_DISPATCH(avx2_call, scalar_call) \
    if (active_backend() == Backend::avx2) return avx2_call; \
    return scalar_call
#else
#define FPVIT_DISPATCH(avx2_call, scalar_call) return scalar_call
#endif

float dot(const float* a, const float* b, std::size_t n) {
    FPVIT_DISPATCH(avx2::dot_f32(a, b, n), scalar::dot_ref(a, b, n));
}

double dot(const double* a, const double* b, std::size_t n) {
    FPVIT_DISPATCH(avx2::dot_f64(a, b, n), scalar::dot_ref(a, b, n));
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    FPVIT_DISPATCH(avx2::axpy_f32(alpha, x, y, n), scalar::axpy_ref(alpha, x, y, n));
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    FPVIT_DISPATCH(avx2::axpy_f64(alpha, x, y, n), scalar::axpy_ref(alpha, x, y, n));
}

void gemm(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_f32(a, b, c, m, k, n, accumulate),
                   scalar::gemm_ref(a, b, c, m, k, n, accumulate));
}

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_f64(a, b, c, m, k, n, accumulate),
                   scalar::gemm_ref(a, b, c, m, k, n, accumulate));
}

void gemm_at_b(const float* a, const float* b, float* c, std::size_t m, std::size_t k2,
               std::size_t n, bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_at_b_f32(a, b, c, m, k2, n, accumulate),
                   scalar::gemm_at_b_ref(a, b, c, m, k2, n, accumulate));
}

void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k2,
               std::size_t n, bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_at_b_f64(a, b, c, m, k2, n, accumulate),
                   scalar::gemm_at_b_ref(a, b, c, m, k2, n, accumulate));
}

void gemm_a_bt(const float* a, const float* b, float* c, std::size_t m, std::size_t n,
               std::size_t k2, bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_a_bt_f32(a, b, c, m, n, k2, accumulate),
                   scalar::gemm_a_bt_ref(a, b, c, m, n, k2, accumulate));
}

void gemm_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k2, bool accumulate) {
    FPVIT_DISPATCH(avx2::gemm_a_bt_f64(a, b, c, m, n, k2, accumulate),
                   scalar::gemm_a_bt_ref(a, b, c, m, n, k2, accumulate));
}

void score_block(const float* gallery, std::size_t count, std::size_t dim, const float* probe,
                 float* scores) {
    FPVIT_DISPATCH(avx2::score_block_f32(gallery, count, dim, probe, scores),
                   scalar::score_block_ref(gallery, count, dim, probe, scores));
}

#undef FPVIT_DISPATCH

}  // namespace fpvit::kernels
