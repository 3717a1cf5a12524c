#pragma once

#include <Eigen/Core>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

// Row-major GEMM wrappers over Eigen. Everything above this header works on
// plain Tensor<T>; this is the only place that touches Eigen.

template <class T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<EigenRowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const EigenRowMat<T>>;

/// C[m,n] = A[m,k] * B[k,n], optionally accumulating into C.
template <class T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    CMapMat<T> A(a, m, k);
    CMapMat<T> B(b, k, n);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

/// C[m,n] = A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    CMapMat<T> A(a, k, m);
    CMapMat<T> B(b, k, n);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

/// C[m,n] = A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    CMapMat<T> A(a, m, k);
    CMapMat<T> B(b, n, k);
    MapMat<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

} // namespace robcaps
