#pragma once

// Dense kernels used by the autodiff tape and k-means. Each kernel has a
// straight-line serial reference (`*_serial`) and an OpenMP version that
// partitions output rows across threads. Every output element is accumulated
// by one thread in the same order as the serial loop, so both versions are
// bitwise identical.

#include <cstddef>
#include <span>

namespace slasd::kernels {

// Work below this many multiply-adds stays on the calling thread.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <class T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn_serial(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    T* cp = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aip = a[i * k + p];
      const T* bi = b + i * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const bool par = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t pp = 0; pp < static_cast<std::ptrdiff_t>(k); ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    T* cp = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aip = a[i * k + p];
      const T* bi = b + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// out[i * k + c] = ||x_i - center_c||^2 for x: n x d, centers: k x d
inline void sq_distances_serial(std::size_t n, std::size_t k, std::size_t d, const float* x, const float* centers,
                                double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(x[i * d + j]) - centers[c * d + j];
        s += diff * diff;
      }
      out[i * k + c] = s;
    }
}

inline void sq_distances(std::size_t n, std::size_t k, std::size_t d, const float* x, const float* centers,
                         double* out) {
  const bool par = n * k * d >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(x[i * d + j]) - centers[c * d + j];
        s += diff * diff;
      }
      out[i * k + c] = s;
    }
  }
}

}  // namespace slasd::kernels
