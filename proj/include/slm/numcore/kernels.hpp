#pragma once

// Raw dense kernels shared by the autodiff ops and the tape-free inference
// paths. All matrices are row-major; `ld` arguments are not supported, every
// operand is contiguous.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace slm::kernels {

/// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T{0}) continue;
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc{0};
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T{0}) continue;
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <typename T>
T sigmoid(T x) {
    return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <typename T>
T swish(T x) {
    return x * sigmoid(x);
}

/// Numerically safe log(sum(exp(x))).
template <typename T>
T log_sum_exp(const T* x, std::size_t n) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
    if (!std::isfinite(mx)) return mx;
    T s{0};
    for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
    return mx + std::log(s);
}

/// log(exp(a) + exp(b)) with -inf as the additive identity.
template <typename T>
T log_add(T a, T b) {
    if (a == -std::numeric_limits<T>::infinity()) return b;
    if (b == -std::numeric_limits<T>::infinity()) return a;
    const T mx = std::max(a, b);
    return mx + std::log1p(std::exp(-std::abs(a - b)));
}

template <typename T>
void softmax_inplace(T* x, std::size_t n) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
    T s{0};
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        s += x[i];
    }
    const T inv = T{1} / s;
    for (std::size_t i = 0; i < n; ++i) x[i] *= inv;
}

/// y = (x - mean) / sqrt(var + eps) * gamma + beta; returns 1/sqrt(var+eps).
template <typename T>
T layer_norm_row(const T* x, const T* gamma, const T* beta, T* y, std::size_t n, T eps) {
    T mean{0};
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<T>(n);
    const T rstd = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    return rstd;
}

template <typename T>
std::size_t argmax(const T* x, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(x, x + n) - x);
}

} // namespace slm::kernels
