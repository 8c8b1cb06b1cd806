#pragma once

// Row-major accumulate-into GEMM kernels used by the convolution paths.
// Summation order is fixed per output element, so results are reproducible
// across thread counts.

#include <algorithm>
#include <cstddef>

namespace arfc::detail {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c)
{
    constexpr int kBlock = 512;
    for (int j0 = 0; j0 < n; j0 += kBlock) {
        const int jn = std::min(kBlock, n - j0);
        int i = 0;
        for (; i + 4 <= m; i += 4) {
            T* c0 = c + static_cast<std::size_t>(i) * n + j0;
            T* c1 = c0 + n;
            T* c2 = c1 + n;
            T* c3 = c2 + n;
            for (int p = 0; p < k; ++p) {
                const T a0 = a[static_cast<std::size_t>(i) * k + p];
                const T a1 = a[static_cast<std::size_t>(i + 1) * k + p];
                const T a2 = a[static_cast<std::size_t>(i + 2) * k + p];
                const T a3 = a[static_cast<std::size_t>(i + 3) * k + p];
                const T* bp = b + static_cast<std::size_t>(p) * n + j0;
#pragma omp simd
                for (int j = 0; j < jn; ++j) {
                    const T bv = bp[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        }
        for (; i < m; ++i) {
            T* ci = c + static_cast<std::size_t>(i) * n + j0;
            for (int p = 0; p < k; ++p) {
                const T av = a[static_cast<std::size_t>(i) * k + p];
                const T* bp = b + static_cast<std::size_t>(p) * n + j0;
#pragma omp simd
                for (int j = 0; j < jn; ++j)
                    ci[j] += av * bp[j];
            }
        }
    }
}

// C[m x n] += A^T * B with A stored [k x m], B [k x n]
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c)
{
    constexpr int kBlock = 512;
    for (int j0 = 0; j0 < n; j0 += kBlock) {
        const int jn = std::min(kBlock, n - j0);
        for (int i = 0; i < m; ++i) {
            T* ci = c + static_cast<std::size_t>(i) * n + j0;
            int p = 0;
            for (; p + 4 <= k; p += 4) {
                const T a0 = a[static_cast<std::size_t>(p) * m + i];
                const T a1 = a[static_cast<std::size_t>(p + 1) * m + i];
                const T a2 = a[static_cast<std::size_t>(p + 2) * m + i];
                const T a3 = a[static_cast<std::size_t>(p + 3) * m + i];
                const T* b0 = b + static_cast<std::size_t>(p) * n + j0;
                const T* b1 = b0 + n;
                const T* b2 = b1 + n;
                const T* b3 = b2 + n;
#pragma omp simd
                for (int j = 0; j < jn; ++j)
                    ci[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            for (; p < k; ++p) {
                const T av = a[static_cast<std::size_t>(p) * m + i];
                const T* bp = b + static_cast<std::size_t>(p) * n + j0;
#pragma omp simd
                for (int j = 0; j < jn; ++j)
                    ci[j] += av * bp[j];
            }
        }
    }
}

// C[m x n] += A[m x k] * B^T with B stored [n x k]
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c)
{
    auto row = [](const T* base, int r, int k) { return base + static_cast<std::size_t>(r) * k; };
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = row(a, i, k);
        const T* a1 = row(a, i + 1, k);
        const T* a2 = row(a, i + 2, k);
        const T* a3 = row(a, i + 3, k);
        int j = 0;
        for (; j + 2 <= n; j += 2) {
            const T* b0 = row(b, j, k);
            const T* b1 = row(b, j + 1, k);
            T s00 = 0, s01 = 0, s10 = 0, s11 = 0, s20 = 0, s21 = 0, s30 = 0, s31 = 0;
#pragma omp simd reduction(+ : s00, s01, s10, s11, s20, s21, s30, s31)
            for (int p = 0; p < k; ++p) {
                const T x0 = b0[p];
                const T x1 = b1[p];
                s00 += a0[p] * x0;
                s01 += a0[p] * x1;
                s10 += a1[p] * x0;
                s11 += a1[p] * x1;
                s20 += a2[p] * x0;
                s21 += a2[p] * x1;
                s30 += a3[p] * x0;
                s31 += a3[p] * x1;
            }
            T* ci = c + static_cast<std::size_t>(i) * n + j;
            ci[0] += s00;
            ci[1] += s01;
            ci[n] += s10;
            ci[n + 1] += s11;
            ci[2 * n] += s20;
            ci[2 * n + 1] += s21;
            ci[3 * n] += s30;
            ci[3 * n + 1] += s31;
        }
        for (; j < n; ++j) {
            const T* bj = row(b, j, k);
            T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
            for (int p = 0; p < k; ++p) {
                s0 += a0[p] * bj[p];
                s1 += a1[p] * bj[p];
                s2 += a2[p] * bj[p];
                s3 += a3[p] * bj[p];
            }
            T* ci = c + static_cast<std::size_t>(i) * n + j;
            ci[0] += s0;
            ci[n] += s1;
            ci[2 * n] += s2;
            ci[3 * n] += s3;
        }
    }
    for (; i < m; ++i) {
        const T* ai = row(a, i, k);
        for (int j = 0; j < n; ++j) {
            const T* bj = row(b, j, k);
            T s = 0;
#pragma omp simd reduction(+ : s)
            for (int p = 0; p < k; ++p)
                s += ai[p] * bj[p];
            c[static_cast<std::size_t>(i) * n + j] += s;
        }
    }
}

}  // namespace arfc::detail
