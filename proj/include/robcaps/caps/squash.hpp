#pragma once

#include <cmath>

#include "robcaps/core/ops.hpp"

namespace robcaps {

// Capsule nonlinearity over the last axis: v = (|s|^2 / (1 + |s|^2)) * s/|s|,
// with |s| = sqrt(|s|^2 + 1e-7) so the zero vector maps to zero instead of NaN.
// Norm of the output is |s|^2/(1+|s|^2), always < 1.

namespace detail {
template <class T> constexpr T kSquashEps = T(1e-7);
}

template <class T>
Var<T> squash_last(Var<T> s) {
    Tape<T>& t = *s.tape;
    const Tensor<T>& v = t.val(s.id);
    int64_t D = v.shape().back();
    int64_t M = v.numel() / D;
    const T eps = detail::kSquashEps<T>;
    Tensor<T> out(v.shape());
    for (int64_t i = 0; i < M; ++i) {
        const T* row = v.data() + i * D;
        T n2 = T(0);
        for (int64_t d = 0; d < D; ++d) n2 += row[d] * row[d];
        T n = std::sqrt(n2 + eps);
        T f = n2 / ((T(1) + n2) * n);
        for (int64_t d = 0; d < D; ++d) out[i * D + d] = f * row[d];
    }
    int id = t.push(std::move(out), {s.id}, [ps = s.id, M, D, eps](Tape<T>& tp, int self) {
        if (!tp.wants(ps)) return;
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& in = tp.val(ps);
        Tensor<T>& gx = tp.grad_buf(ps);
        // v_i = f(n2) s_i with f(u) = u / ((1+u) sqrt(u+eps)):
        //   ds = f*dv + 2 (dv.s) f'(n2) s,
        //   f'(u) = (u + 2 eps - u^2) / (2 (1+u)^2 (u+eps)^(3/2))
        for (int64_t i = 0; i < M; ++i) {
            const T* row = in.data() + i * D;
            const T* gr = g.data() + i * D;
            T n2 = T(0), dot = T(0);
            for (int64_t d = 0; d < D; ++d) {
                n2 += row[d] * row[d];
                dot += gr[d] * row[d];
            }
            T r = std::sqrt(n2 + eps);
            T f = n2 / ((T(1) + n2) * r);
            T fp = (n2 + T(2) * eps - n2 * n2) / (T(2) * (T(1) + n2) * (T(1) + n2) * r * r * r);
            for (int64_t d = 0; d < D; ++d) gx[i * D + d] += f * gr[d] + T(2) * dot * fp * row[d];
        }
    });
    return {s.tape, id};
}

/// L2 norm over the last axis: [..., D] -> [...]. Shares squash's epsilon so
/// the zero capsule has a finite gradient.
template <class T>
Var<T> caps_length(Var<T> s) {
    Tape<T>& t = *s.tape;
    const Tensor<T>& v = t.val(s.id);
    int64_t D = v.shape().back();
    int64_t M = v.numel() / D;
    const T eps = detail::kSquashEps<T>;
    Shape os(v.shape().begin(), v.shape().end() - 1);
    if (os.empty()) os.push_back(1);
    Tensor<T> out(os);
    for (int64_t i = 0; i < M; ++i) {
        const T* row = v.data() + i * D;
        T n2 = T(0);
        for (int64_t d = 0; d < D; ++d) n2 += row[d] * row[d];
        out[i] = std::sqrt(n2 + eps);
    }
    int id = t.push(std::move(out), {s.id}, [ps = s.id, M, D](Tape<T>& tp, int self) {
        if (!tp.wants(ps)) return;
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& in = tp.val(ps);
        const Tensor<T>& len = tp.val(self);
        Tensor<T>& gx = tp.grad_buf(ps);
        for (int64_t i = 0; i < M; ++i)
            for (int64_t d = 0; d < D; ++d) gx[i * D + d] += g[i] * in[i * D + d] / len[i];
    });
    return {s.tape, id};
}

} // namespace robcaps
