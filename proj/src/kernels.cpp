// SPDX-License-Identifier: Apache-2.0
#include "mlnet/kernels.hpp"

namespace mlnet::kernels {
namespace {

template <class Real>
inline void axpy(std::size_t n, Real alpha, const Real* x, Real* y) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

// Eight interleaved partial sums, combined pairwise: vectorizes without
// reassociation flags and fixes the summation order.
template <class Real>
inline Real dot(const Real* x, const Real* y, std::size_t n) {
  Real acc[8] = {};
  std::size_t p = 0;
  for (; p + 8 <= n; p += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += x[p + j] * y[p + j];
  }
  Real s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; p < n; ++p) s += x[p] * y[p];
  return s;
}

// Row i of C[m,n] += A[m,k] * B[n,k]^T.
template <class Real>
inline void gemm_nt_row(GemmDims d, const Real* a, const Real* b, Real* c, std::size_t i) {
  const Real* arow = a + i * d.k;
  for (std::size_t j = 0; j < d.n; ++j) c[i * d.n + j] += dot(arow, b + j * d.k, d.k);
}

}  // namespace

template <class Real>
void gemm_nn_serial(GemmDims d, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t p = 0; p < d.k; ++p) axpy(d.n, a[i * d.k + p], b + p * d.n, c + i * d.n);
  }
}

template <class Real>
void gemm_nn_parallel(GemmDims d, const Real* a, const Real* b, Real* c) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < d.k; ++p) axpy(d.n, a[i * d.k + p], b + p * d.n, c + i * d.n);
  }
}

template <class Real>
void gemm_tn_serial(GemmDims d, const Real* a, const Real* b, Real* c) {
  for (std::size_t p = 0; p < d.k; ++p) {
    for (std::size_t i = 0; i < d.m; ++i) axpy(d.n, a[p * d.m + i], b + p * d.n, c + i * d.n);
  }
}

template <class Real>
void gemm_tn_parallel(GemmDims d, const Real* a, const Real* b, Real* c) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < d.k; ++p) axpy(d.n, a[p * d.m + i], b + p * d.n, c + i * d.n);
  }
}

template <class Real>
void gemm_nt_serial(GemmDims d, const Real* a, const Real* b, Real* c) {
  for (std::size_t i = 0; i < d.m; ++i) gemm_nt_row(d, a, b, c, i);
}

template <class Real>
void gemm_nt_parallel(GemmDims d, const Real* a, const Real* b, Real* c) {
  const auto m = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_nt_row(d, a, b, c, static_cast<std::size_t>(i));
}

namespace {
inline bool go_parallel(GemmDims d) { return d.m > 1 && d.m * d.n * d.k >= kParallelWork; }
}  // namespace

template <class Real>
void gemm_nn(GemmDims d, const Real* a, const Real* b, Real* c) {
  go_parallel(d) ? gemm_nn_parallel(d, a, b, c) : gemm_nn_serial(d, a, b, c);
}

template <class Real>
void gemm_tn(GemmDims d, const Real* a, const Real* b, Real* c) {
  go_parallel(d) ? gemm_tn_parallel(d, a, b, c) : gemm_tn_serial(d, a, b, c);
}

template <class Real>
void gemm_nt(GemmDims d, const Real* a, const Real* b, Real* c) {
  go_parallel(d) ? gemm_nt_parallel(d, a, b, c) : gemm_nt_serial(d, a, b, c);
}

#define MLNET_INSTANTIATE_GEMM(R)                                    \
  template void gemm_nn_serial<R>(GemmDims, const R*, const R*, R*);   \
  template void gemm_nn_parallel<R>(GemmDims, const R*, const R*, R*); \
  template void gemm_tn_serial<R>(GemmDims, const R*, const R*, R*);   \
  template void gemm_tn_parallel<R>(GemmDims, const R*, const R*, R*); \
  template void gemm_nt_serial<R>(GemmDims, const R*, const R*, R*);   \
  template void gemm_nt_parallel<R>(GemmDims, const R*, const R*, R*); \
  template void gemm_nn<R>(GemmDims, const R*, const R*, R*);          \
  template void gemm_tn<R>(GemmDims, const R*, const R*, R*);          \
  template void gemm_nt<R>(GemmDims, const R*, const R*, R*);

MLNET_INSTANTIATE_GEMM(float)
MLNET_INSTANTIATE_GEMM(double)

#undef MLNET_INSTANTIATE_GEMM

}  // namespace mlnet::kernels
