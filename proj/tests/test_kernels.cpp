#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpvit/kernels.hpp"
#include "fpvit/rng.hpp"

using namespace fpvit;
namespace k = fpvit::kernels;

namespace {

std::vector<float> random_vec(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

double dot_ref64(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

// Runs fn under both backends (when AVX2 exists) and restores the default.
template <typename Fn>
void with_each_backend(Fn&& fn) {
    k::Backend detected = k::detect_backend();
    k::force_backend(k::Backend::scalar);
    fn(k::Backend::scalar);
    if (detected == k::Backend::avx2) {
        k::force_backend(k::Backend::avx2);
        fn(k::Backend::avx2);
    }
    k::force_backend(detected);
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("backend forcing") {
    k::Backend detected = k::detect_backend();
    k::force_backend(k::Backend::scalar);
    CHECK(k::active_backend() == k::Backend::scalar);
    k::force_backend(detected);
    CHECK(k::active_backend() == detected);
}

TEST_CASE("dot matches a 64-bit reference on both backends") {
    Rng rng(11);
    for (std::size_t n : {1u, 7u, 8u, 17u, 64u, 100u, 384u, 1000u}) {
        auto a = random_vec(rng, n);
        auto b = random_vec(rng, n);
        double ref = dot_ref64(a.data(), b.data(), n);
        with_each_backend([&](k::Backend) {
            double got = k::dot(a.data(), b.data(), n);
            CHECK(std::fabs(got - ref) <= 1e-5 * (1.0 + std::sqrt(static_cast<double>(n))));
        });
    }
}

TEST_CASE("dot double precision") {
    Rng rng(12);
    for (std::size_t n : {5u, 33u, 384u}) {
        std::vector<double> a(n), b(n);
        for (auto& x : a) x = rng.uniform(-1.0, 1.0);
        for (auto& x : b) x = rng.uniform(-1.0, 1.0);
        long double ref = 0.0L;
        for (std::size_t i = 0; i < n; ++i) ref += static_cast<long double>(a[i]) * b[i];
        with_each_backend([&](k::Backend) {
            double got = k::dot(a.data(), b.data(), n);
            CHECK(std::fabs(got - static_cast<double>(ref)) <= 1e-12 * (1.0 + n));
        });
    }
}

TEST_CASE("axpy equivalent across backends") {
    Rng rng(13);
    for (std::size_t n : {3u, 16u, 41u}) {
        auto x = random_vec(rng, n);
        auto y0 = random_vec(rng, n);
        std::vector<std::vector<float>> results;
        with_each_backend([&](k::Backend) {
            auto y = y0;
            k::axpy(0.37f, x.data(), y.data(), n);
            results.push_back(y);
        });
        for (std::size_t i = 0; i < n; ++i) {
            float ref = y0[i] + 0.37f * x[i];
            for (const auto& r : results) CHECK(r[i] == doctest::Approx(ref).epsilon(1e-6));
        }
    }
}

TEST_CASE("gemm family vs naive reference") {
    Rng rng(14);
    const std::size_t m = 5, kk = 7, n = 11;
    auto a = random_vec(rng, m * kk);
    auto b = random_vec(rng, kk * n);
    std::vector<float> naive(m * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p)
            for (std::size_t j = 0; j < n; ++j) naive[i * n + j] += a[i * kk + p] * b[p * n + j];

    with_each_backend([&](k::Backend) {
        std::vector<float> c(m * n, 99.0f);
        k::gemm(a.data(), b.data(), c.data(), m, kk, n, false);
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(naive[i]).epsilon(1e-5));

        // accumulate mode adds on top
        k::gemm(a.data(), b.data(), c.data(), m, kk, n, true);
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(2.0f * naive[i]).epsilon(1e-5));
    });

    // A^T B: forward pass then compare to transposing by hand.
    auto at = random_vec(rng, m * kk);  // A is m x kk, C = A^T B is kk x n
    std::vector<float> naive_atb(kk * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p)
            for (std::size_t j = 0; j < n; ++j)
                naive_atb[p * n + j] += at[i * kk + p] * b[i * n + j];  // B here m x n
    auto b2 = random_vec(rng, m * n);
    std::fill(naive_atb.begin(), naive_atb.end(), 0.0f);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p)
            for (std::size_t j = 0; j < n; ++j)
                naive_atb[p * n + j] += at[i * kk + p] * b2[i * n + j];
    with_each_backend([&](k::Backend) {
        std::vector<float> c(kk * n, 0.0f);
        k::gemm_at_b(at.data(), b2.data(), c.data(), m, kk, n, false);
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(naive_atb[i]).epsilon(1e-5));
    });

    // A B^T
    auto bt = random_vec(rng, kk * n);  // B is kk x n, C = A B^T is m x kk with A m x n
    auto a2 = random_vec(rng, m * n);
    std::vector<float> naive_abt(m * kk, 0.0f);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < kk; ++j)
            for (std::size_t p = 0; p < n; ++p)
                naive_abt[i * kk + j] += a2[i * n + p] * bt[j * n + p];
    with_each_backend([&](k::Backend) {
        std::vector<float> c(m * kk, 0.0f);
        k::gemm_a_bt(a2.data(), bt.data(), c.data(), m, n, kk, false);
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(naive_abt[i]).epsilon(1e-5));
    });
}

TEST_CASE("score_block equals per-row dots and is chunk-invariant") {
    Rng rng(15);
    const std::size_t dim = 48;
    for (std::size_t count : {1u, 3u, 4u, 5u, 9u, 130u}) {
        auto gallery = random_vec(rng, count * dim);
        auto probe = random_vec(rng, dim);
        with_each_backend([&](k::Backend) {
            std::vector<float> scores(count);
            k::score_block(gallery.data(), count, dim, probe.data(), scores.data());
            for (std::size_t i = 0; i < count; ++i) {
                double ref = dot_ref64(gallery.data() + i * dim, probe.data(), dim);
                CHECK(std::fabs(scores[i] - ref) <= 1e-5);
            }
            // Splitting the block anywhere must reproduce identical bits;
            // multi-threaded scans rely on this.
            for (std::size_t split : {std::size_t(1), count / 2, count - 1}) {
                if (split == 0 || split >= count) continue;
                std::vector<float> parts(count);
                k::score_block(gallery.data(), split, dim, probe.data(), parts.data());
                k::score_block(gallery.data() + split * dim, count - split, dim, probe.data(),
                               parts.data() + split);
                for (std::size_t i = 0; i < count; ++i) CHECK(parts[i] == scores[i]);
            }
        });
    }
}

TEST_CASE("scalar and avx2 agree within float tolerance") {
    if (k::detect_backend() != k::Backend::avx2) return;  // nothing to compare
    Rng rng(16);
    const std::size_t dim = 384, count = 64;
    auto gallery = random_vec(rng, count * dim);
    auto probe = random_vec(rng, dim);

    std::vector<float> s_scalar(count), s_avx2(count);
    k::force_backend(k::Backend::scalar);
    k::score_block(gallery.data(), count, dim, probe.data(), s_scalar.data());
    k::force_backend(k::Backend::avx2);
    k::score_block(gallery.data(), count, dim, probe.data(), s_avx2.data());
    k::force_backend(k::detect_backend());
    for (std::size_t i = 0; i < count; ++i)
        CHECK(s_scalar[i] == doctest::Approx(s_avx2[i]).epsilon(1e-5));
}

}  // TEST_SUITE
