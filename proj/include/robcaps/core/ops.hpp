#pragma once

#include <algorithm>
#include <cmath>

#include "robcaps/core/tape.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class FwdF, class BackA, class BackB>
Var<T> binary_op(Var<T> a, Var<T> b, FwdF f, BackA da, BackB db) {
    Tape<T>& t = *a.tape;
    Tensor<T> out = bcast_map(t.val(a.id), t.val(b.id), f);
    int id = t.push(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id, da, db](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& va = tp.val(pa);
        const Tensor<T>& vb = tp.val(pb);
        if (tp.wants(pa)) {
            // build the output-shaped partial then reduce onto a's shape
            Tensor<T> part(g.shape());
            auto sa = broadcast_strides(va.shape(), g.shape());
            auto sb = broadcast_strides(vb.shape(), g.shape());
            size_t r = g.shape().size();
            std::vector<int64_t> idx(r, 0);
            int64_t ia = 0, ib = 0;
            for (int64_t o = 0; o < g.numel(); ++o) {
                part[o] = g[o] * da(va[ia], vb[ib]);
                for (size_t k = r; k-- > 0;) {
                    ++idx[k]; ia += sa[k]; ib += sb[k];
                    if (idx[k] < g.shape()[k]) break;
                    ia -= sa[k] * g.shape()[k]; ib -= sb[k] * g.shape()[k]; idx[k] = 0;
                }
            }
            reduce_into_shape(part, tp.grad_buf(pa));
        }
        if (tp.wants(pb)) {
            Tensor<T> part(g.shape());
            auto sa = broadcast_strides(va.shape(), g.shape());
            auto sb = broadcast_strides(vb.shape(), g.shape());
            size_t r = g.shape().size();
            std::vector<int64_t> idx(r, 0);
            int64_t ia = 0, ib = 0;
            for (int64_t o = 0; o < g.numel(); ++o) {
                part[o] = g[o] * db(va[ia], vb[ib]);
                for (size_t k = r; k-- > 0;) {
                    ++idx[k]; ia += sa[k]; ib += sb[k];
                    if (idx[k] < g.shape()[k]) break;
                    ia -= sa[k] * g.shape()[k]; ib -= sb[k] * g.shape()[k]; idx[k] = 0;
                }
            }
            reduce_into_shape(part, tp.grad_buf(pb));
        }
    });
    return {a.tape, id};
}

template <class T, class FwdF, class BackF>
Var<T> unary_op(Var<T> x, FwdF f, BackF dfdx_from_in_out) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    Tensor<T> out(v.shape());
    for (int64_t i = 0; i < v.numel(); ++i) out[i] = f(v[i]);
    int id = t.push(std::move(out), {x.id}, [px = x.id, dfdx_from_in_out](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& in = tp.val(px);
        const Tensor<T>& outv = tp.val(self);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * dfdx_from_in_out(in[i], outv[i]);
    });
    return {x.tape, id};
}

} // namespace detail

template <class T> Var<T> add(Var<T> a, Var<T> b) {
    return detail::binary_op(a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}
template <class T> Var<T> sub(Var<T> a, Var<T> b) {
    return detail::binary_op(a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}
template <class T> Var<T> mul(Var<T> a, Var<T> b) {
    return detail::binary_op(a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}
template <class T> Var<T> div_(Var<T> a, Var<T> b) {
    return detail::binary_op(a, b, [](T x, T y) { return x / y; },
                             [](T, T y) { return T(1) / y; },
                             [](T x, T y) { return -x / (y * y); });
}

template <class T> Var<T> scale(Var<T> x, T s) {
    return detail::unary_op(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <class T> Var<T> add_scalar(Var<T> x, T s) {
    return detail::unary_op(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <class T> Var<T> neg(Var<T> x) { return scale(x, T(-1)); }

template <class T> Var<T> relu(Var<T> x) {
    return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                            [](T in, T) { return in > T(0) ? T(1) : T(0); });
}
template <class T> Var<T> sigmoid(Var<T> x) {
    return detail::unary_op(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                            [](T, T out) { return out * (T(1) - out); });
}
template <class T> Var<T> tanh_(Var<T> x) {
    return detail::unary_op(x, [](T v) { return std::tanh(v); },
                            [](T, T out) { return T(1) - out * out; });
}
template <class T> Var<T> exp_(Var<T> x) {
    return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}
template <class T> Var<T> log_(Var<T> x) {
    return detail::unary_op(x, [](T v) { return std::log(v); }, [](T in, T) { return T(1) / in; });
}
template <class T> Var<T> square(Var<T> x) {
    return detail::unary_op(x, [](T v) { return v * v; }, [](T in, T) { return T(2) * in; });
}
template <class T> Var<T> sqrt_(Var<T> x) {
    return detail::unary_op(x, [](T v) { return std::sqrt(v); },
                            [](T, T out) { return T(1) / (T(2) * out); });
}
/// max(x, s) elementwise against a constant; subgradient 0 at the kink.
template <class T> Var<T> maximum_scalar(Var<T> x, T s) {
    return detail::unary_op(x, [s](T v) { return v > s ? v : s; },
                            [s](T in, T) { return in > s ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> x, Shape dims) {
    Tape<T>& t = *x.tape;
    Tensor<T> out = t.val(x.id).reshaped(dims);
    int id = t.push(std::move(out), {x.id}, [px = x.id](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        const Tensor<T>& g = tp.grad(self);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
    return {x.tape, id};
}

namespace detail {
template <class T>
Tensor<T> permute_tensor(const Tensor<T>& v, const std::vector<int>& axes) {
    const Shape& s = v.shape();
    size_t r = s.size();
    Shape os(r);
    for (size_t i = 0; i < r; ++i) os[i] = s[static_cast<size_t>(axes[i])];
    std::vector<int64_t> in_stride(r, 1);
    for (size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
    std::vector<int64_t> step(r);
    for (size_t i = 0; i < r; ++i) step[i] = in_stride[static_cast<size_t>(axes[i])];
    Tensor<T> out(os);
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t o = 0; o < out.numel(); ++o) {
        out[o] = v[src];
        for (size_t k = r; k-- > 0;) {
            ++idx[k]; src += step[k];
            if (idx[k] < os[k]) break;
            src -= step[k] * os[k]; idx[k] = 0;
        }
    }
    return out;
}
} // namespace detail

template <class T>
Var<T> permute(Var<T> x, std::vector<int> axes) {
    Tape<T>& t = *x.tape;
    Tensor<T> out = detail::permute_tensor(t.val(x.id), axes);
    int id = t.push(std::move(out), {x.id}, [px = x.id, axes](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        std::vector<int> inv(axes.size());
        for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
        Tensor<T> g = detail::permute_tensor(tp.grad(self), inv);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
    return {x.tape, id};
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
    Tape<T>& t = *xs.at(0).tape;
    const Shape& s0 = t.val(xs[0].id).shape();
    size_t r = s0.size();
    size_t ax = static_cast<size_t>(axis);
    Shape os = s0;
    os[ax] = 0;
    for (const auto& x : xs) os[ax] += t.val(x.id).shape()[ax];
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= os[i];
    for (size_t i = ax + 1; i < r; ++i) inner *= os[i];

    Tensor<T> out(os);
    std::vector<int> pids;
    std::vector<int64_t> widths;
    int64_t off = 0;
    for (const auto& x : xs) {
        const Tensor<T>& v = t.val(x.id);
        int64_t w = v.shape()[ax] * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy(v.data() + o * w, v.data() + (o + 1) * w, out.data() + o * os[ax] * inner + off);
        pids.push_back(x.id);
        widths.push_back(w);
        off += w;
    }
    int id = t.push(std::move(out), pids, [pids, widths, outer, inner, os, ax](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        int64_t off2 = 0;
        for (size_t k = 0; k < pids.size(); ++k) {
            if (tp.wants(pids[k])) {
                Tensor<T>& gx = tp.grad_buf(pids[k]);
                for (int64_t o = 0; o < outer; ++o) {
                    const T* src = g.data() + o * os[ax] * inner + off2;
                    T* dst = gx.data() + o * widths[k];
                    for (int64_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                }
            }
            off2 += widths[k];
        }
    });
    return {xs[0].tape, id};
}

template <class T>
Var<T> slice(Var<T> x, int axis, int64_t start, int64_t len) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    const Shape& s = v.shape();
    size_t ax = static_cast<size_t>(axis);
    Shape os = s;
    os[ax] = len;
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= s[i];
    for (size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    Tensor<T> out(os);
    for (int64_t o = 0; o < outer; ++o)
        std::copy(v.data() + (o * s[ax] + start) * inner, v.data() + (o * s[ax] + start + len) * inner,
                  out.data() + o * len * inner);
    int id = t.push(std::move(out), {x.id}, [px = x.id, s, ax, start, len, outer, inner](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        const Tensor<T>& g = tp.grad(self);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t o = 0; o < outer; ++o) {
            const T* src = g.data() + o * len * inner;
            T* dst = gx.data() + (o * s[ax] + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return {x.tape, id};
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> reduce_sum(Var<T> x, int axis, bool keepdim = false) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    const Shape& s = v.shape();
    size_t ax = static_cast<size_t>(axis);
    int64_t outer = 1, inner = 1, m = s[ax];
    for (size_t i = 0; i < ax; ++i) outer *= s[i];
    for (size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    Shape os;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i == ax) {
            if (keepdim) os.push_back(1);
        } else {
            os.push_back(s[i]);
        }
    }
    if (os.empty()) os.push_back(1);
    Tensor<T> out(os);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < m; ++k)
            for (int64_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * m + k) * inner + i];
    int id = t.push(std::move(out), {x.id}, [px = x.id, outer, m, inner](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        const Tensor<T>& g = tp.grad(self);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < m; ++k)
                for (int64_t i = 0; i < inner; ++i) gx[(o * m + k) * inner + i] += g[o * inner + i];
    });
    return {x.tape, id};
}

template <class T>
Var<T> reduce_sum_all(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    T acc = T(0);
    for (int64_t i = 0; i < v.numel(); ++i) acc += v[i];
    int id = t.push(Tensor<T>::scalar(acc), {x.id}, [px = x.id](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        T g = tp.grad(self)[0];
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
    return {x.tape, id};
}

template <class T>
Var<T> reduce_mean_all(Var<T> x) {
    int64_t n = x.val().numel();
    return scale(reduce_sum_all(x), T(1) / static_cast<T>(n));
}

} // namespace robcaps
