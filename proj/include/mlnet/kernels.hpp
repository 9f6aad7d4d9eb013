// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

// Dense kernels used by the autodiff engine. Each kernel has a serial
// reference and an OpenMP version. Both compute every output element with
// the same summation order, so they agree bit-for-bit.
namespace mlnet::kernels {

/// Row-major matrix view dimensions for C[m,n] (+)= op(A) * op(B).
struct GemmDims {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void gemm_nn_serial(GemmDims d, const Real* a, const Real* b, Real* c);
template <class Real>
void gemm_nn_parallel(GemmDims d, const Real* a, const Real* b, Real* c);

// C[m,n] += A[k,m]^T * B[k,n]
template <class Real>
void gemm_tn_serial(GemmDims d, const Real* a, const Real* b, Real* c);
template <class Real>
void gemm_tn_parallel(GemmDims d, const Real* a, const Real* b, Real* c);

// C[m,n] += A[m,k] * B[n,k]^T
template <class Real>
void gemm_nt_serial(GemmDims d, const Real* a, const Real* b, Real* c);
template <class Real>
void gemm_nt_parallel(GemmDims d, const Real* a, const Real* b, Real* c);

/// Dispatch: parallel above a work threshold, serial otherwise.
template <class Real>
void gemm_nn(GemmDims d, const Real* a, const Real* b, Real* c);
template <class Real>
void gemm_tn(GemmDims d, const Real* a, const Real* b, Real* c);
template <class Real>
void gemm_nt(GemmDims d, const Real* a, const Real* b, Real* c);

/// Work (m*n*k) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelWork = std::size_t{1} << 18;

}  // namespace mlnet::kernels
