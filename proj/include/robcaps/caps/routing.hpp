#pragma once

#include <stdexcept>
#include <vector>

#include "robcaps/caps/squash.hpp"
#include "robcaps/core/gemm.hpp"
#include "robcaps/core/nn_ops.hpp"

namespace robcaps {

// Routing works on a vote tensor shaped [N, P, I, J, D]:
//   N batch, P spatial positions (1 for fully connected couplings),
//   I input capsules, J output capsules, D output capsule dimension.
// Coupling coefficients are [N, I, J] and shared across the P axis.

// ---------------------------------------------------------------------------
// Vote computation
// ---------------------------------------------------------------------------

/// u [N,I,E] x W [I,J,D,E] -> votes [N,I,J,D], one learned matrix per (i,j).
template <class T>
Var<T> caps_votes(Var<T> u, Var<T> w) {
    Tape<T>& t = *u.tape;
    const Tensor<T>& vu = t.val(u.id);
    const Tensor<T>& vw = t.val(w.id);
    if (vu.rank() != 3 || vw.rank() != 4 || vu.dim(1) != vw.dim(0) || vu.dim(2) != vw.dim(3))
        throw std::invalid_argument("caps_votes: bad shapes " + shape_str(vu.shape()) + " x " + shape_str(vw.shape()));
    int64_t N = vu.dim(0), I = vu.dim(1), E = vu.dim(2);
    int64_t J = vw.dim(1), D = vw.dim(2);
    int64_t JD = J * D;
    Tensor<T> out({N, I, J, D});
    std::vector<T> ubuf(static_cast<size_t>(N * E)), obuf(static_cast<size_t>(N * JD));
    for (int64_t i = 0; i < I; ++i) {
        for (int64_t n = 0; n < N; ++n)
            std::copy(vu.data() + (n * I + i) * E, vu.data() + (n * I + i) * E + E, ubuf.data() + n * E);
        gemm_nt(ubuf.data(), vw.data() + i * JD * E, obuf.data(), N, E, JD);
        for (int64_t n = 0; n < N; ++n)
            std::copy(obuf.data() + n * JD, obuf.data() + (n + 1) * JD, out.data() + (n * I + i) * JD);
    }
    int id = t.push(std::move(out), {u.id, w.id}, [pu = u.id, pw = w.id, N, I, E, JD](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vu2 = tp.val(pu);
        const Tensor<T>& vw2 = tp.val(pw);
        std::vector<T> gbuf(static_cast<size_t>(N * JD)), ubuf2(static_cast<size_t>(N * E)),
            gubuf(static_cast<size_t>(N * E));
        for (int64_t i = 0; i < I; ++i) {
            for (int64_t n = 0; n < N; ++n)
                std::copy(g.data() + (n * I + i) * JD, g.data() + (n * I + i) * JD + JD, gbuf.data() + n * JD);
            if (tp.wants(pu)) {
                gemm(gbuf.data(), vw2.data() + i * JD * E, gubuf.data(), N, JD, E);
                Tensor<T>& gu = tp.grad_buf(pu);
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t e = 0; e < E; ++e) gu[(n * I + i) * E + e] += gubuf[n * E + e];
            }
            if (tp.wants(pw)) {
                for (int64_t n = 0; n < N; ++n)
                    std::copy(vu2.data() + (n * I + i) * E, vu2.data() + (n * I + i) * E + E, ubuf2.data() + n * E);
                gemm_tn(gbuf.data(), ubuf2.data(), tp.grad_buf(pw).data() + i * JD * E, JD, N, E, true);
            }
        }
    });
    return {u.tape, id};
}

/// x [N,I,E] x w [I,E,M] -> [N,I,M]: an independent linear map per input capsule.
template <class T>
Var<T> per_capsule_matmul(Var<T> x, Var<T> w) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const Tensor<T>& vw = t.val(w.id);
    if (vx.rank() != 3 || vw.rank() != 3 || vx.dim(1) != vw.dim(0) || vx.dim(2) != vw.dim(1))
        throw std::invalid_argument("per_capsule_matmul: bad shapes " + shape_str(vx.shape()) + " x " +
                                    shape_str(vw.shape()));
    int64_t N = vx.dim(0), I = vx.dim(1), E = vx.dim(2), M = vw.dim(2);
    Tensor<T> out({N, I, M});
    std::vector<T> xbuf(static_cast<size_t>(N * E)), obuf(static_cast<size_t>(N * M));
    for (int64_t i = 0; i < I; ++i) {
        for (int64_t n = 0; n < N; ++n)
            std::copy(vx.data() + (n * I + i) * E, vx.data() + (n * I + i) * E + E, xbuf.data() + n * E);
        gemm(xbuf.data(), vw.data() + i * E * M, obuf.data(), N, E, M);
        for (int64_t n = 0; n < N; ++n)
            std::copy(obuf.data() + n * M, obuf.data() + (n + 1) * M, out.data() + (n * I + i) * M);
    }
    int id = t.push(std::move(out), {x.id, w.id}, [px = x.id, pw = w.id, N, I, E, M](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vx2 = tp.val(px);
        const Tensor<T>& vw2 = tp.val(pw);
        std::vector<T> gbuf(static_cast<size_t>(N * M)), xbuf2(static_cast<size_t>(N * E)),
            gxbuf(static_cast<size_t>(N * E));
        for (int64_t i = 0; i < I; ++i) {
            for (int64_t n = 0; n < N; ++n)
                std::copy(g.data() + (n * I + i) * M, g.data() + (n * I + i) * M + M, gbuf.data() + n * M);
            if (tp.wants(px)) {
                gemm_nt(gbuf.data(), vw2.data() + i * E * M, gxbuf.data(), N, M, E);
                Tensor<T>& gx = tp.grad_buf(px);
                for (int64_t n = 0; n < N; ++n)
                    for (int64_t e = 0; e < E; ++e) gx[(n * I + i) * E + e] += gxbuf[n * E + e];
            }
            if (tp.wants(pw)) {
                for (int64_t n = 0; n < N; ++n)
                    std::copy(vx2.data() + (n * I + i) * E, vx2.data() + (n * I + i) * E + E, xbuf2.data() + n * E);
                gemm_tn(xbuf2.data(), gbuf.data(), tp.grad_buf(pw).data() + i * E * M, E, N, M, true);
            }
        }
    });
    return {x.tape, id};
}

// ---------------------------------------------------------------------------
// Routing primitives
// ---------------------------------------------------------------------------

/// s[n,p,j,:] = sum_i c[n,i,j] * votes[n,p,i,j,:]
template <class T>
Var<T> route_weighted_sum(Var<T> votes, Var<T> coupling) {
    Tape<T>& t = *votes.tape;
    const Tensor<T>& vv = t.val(votes.id);
    const Tensor<T>& vc = t.val(coupling.id);
    if (vv.rank() != 5 || vc.rank() != 3 || vv.dim(0) != vc.dim(0) || vv.dim(2) != vc.dim(1) ||
        vv.dim(3) != vc.dim(2))
        throw std::invalid_argument("route_weighted_sum: bad shapes " + shape_str(vv.shape()) + " x " +
                                    shape_str(vc.shape()));
    int64_t N = vv.dim(0), P = vv.dim(1), I = vv.dim(2), J = vv.dim(3), D = vv.dim(4);
    Tensor<T> out({N, P, J, D});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < P; ++p)
            for (int64_t i = 0; i < I; ++i) {
                const T* vrow = vv.data() + (((n * P + p) * I + i) * J) * D;
                const T* crow = vc.data() + (n * I + i) * J;
                T* orow = out.data() + ((n * P + p) * J) * D;
                for (int64_t j = 0; j < J; ++j) {
                    T c = crow[j];
                    for (int64_t d = 0; d < D; ++d) orow[j * D + d] += c * vrow[j * D + d];
                }
            }
    int id = t.push(std::move(out), {votes.id, coupling.id},
                    [pv = votes.id, pc = coupling.id, N, P, I, J, D](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vv2 = tp.val(pv);
        const Tensor<T>& vc2 = tp.val(pc);
        bool wv = tp.wants(pv), wc = tp.wants(pc);
        if (!wv && !wc) return;
        Tensor<T>* gv = wv ? &tp.grad_buf(pv) : nullptr;
        Tensor<T>* gc = wc ? &tp.grad_buf(pc) : nullptr;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t p = 0; p < P; ++p)
                for (int64_t i = 0; i < I; ++i) {
                    const T* vrow = vv2.data() + (((n * P + p) * I + i) * J) * D;
                    const T* crow = vc2.data() + (n * I + i) * J;
                    const T* grow = g.data() + ((n * P + p) * J) * D;
                    for (int64_t j = 0; j < J; ++j) {
                        if (wv) {
                            T c = crow[j];
                            T* gvrow = gv->data() + (((n * P + p) * I + i) * J + j) * D;
                            for (int64_t d = 0; d < D; ++d) gvrow[d] += c * grow[j * D + d];
                        }
                        if (wc) {
                            T acc = T(0);
                            for (int64_t d = 0; d < D; ++d) acc += vrow[j * D + d] * grow[j * D + d];
                            (*gc)[(n * I + i) * J + j] += acc;
                        }
                    }
                }
    });
    return {votes.tape, id};
}

/// a[n,i,j] = sum_{p,d} votes[n,p,i,j,d] * v[n,p,j,d]
template <class T>
Var<T> route_agreement(Var<T> votes, Var<T> v) {
    Tape<T>& t = *votes.tape;
    const Tensor<T>& vv = t.val(votes.id);
    const Tensor<T>& vo = t.val(v.id);
    if (vv.rank() != 5 || vo.rank() != 4 || vv.dim(0) != vo.dim(0) || vv.dim(1) != vo.dim(1) ||
        vv.dim(3) != vo.dim(2) || vv.dim(4) != vo.dim(3))
        throw std::invalid_argument("route_agreement: bad shapes " + shape_str(vv.shape()) + " x " +
                                    shape_str(vo.shape()));
    int64_t N = vv.dim(0), P = vv.dim(1), I = vv.dim(2), J = vv.dim(3), D = vv.dim(4);
    Tensor<T> out({N, I, J});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < P; ++p)
            for (int64_t i = 0; i < I; ++i) {
                const T* vrow = vv.data() + (((n * P + p) * I + i) * J) * D;
                const T* orow = vo.data() + ((n * P + p) * J) * D;
                T* arow = out.data() + (n * I + i) * J;
                for (int64_t j = 0; j < J; ++j) {
                    T acc = T(0);
                    for (int64_t d = 0; d < D; ++d) acc += vrow[j * D + d] * orow[j * D + d];
                    arow[j] += acc;
                }
            }
    int id = t.push(std::move(out), {votes.id, v.id},
                    [pv = votes.id, po = v.id, N, P, I, J, D](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vv2 = tp.val(pv);
        const Tensor<T>& vo2 = tp.val(po);
        bool wv = tp.wants(pv), wo = tp.wants(po);
        if (!wv && !wo) return;
        Tensor<T>* gv = wv ? &tp.grad_buf(pv) : nullptr;
        Tensor<T>* go = wo ? &tp.grad_buf(po) : nullptr;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t p = 0; p < P; ++p)
                for (int64_t i = 0; i < I; ++i) {
                    const T* vrow = vv2.data() + (((n * P + p) * I + i) * J) * D;
                    const T* orow = vo2.data() + ((n * P + p) * J) * D;
                    const T* grow = g.data() + (n * I + i) * J;
                    for (int64_t j = 0; j < J; ++j) {
                        T gij = grow[j];
                        if (wv) {
                            T* gvrow = gv->data() + (((n * P + p) * I + i) * J + j) * D;
                            for (int64_t d = 0; d < D; ++d) gvrow[d] += gij * orow[j * D + d];
                        }
                        if (wo) {
                            T* gorow = go->data() + (((n * P + p) * J + j) * D);
                            for (int64_t d = 0; d < D; ++d) gorow[d] += gij * vrow[j * D + d];
                        }
                    }
                }
    });
    return {votes.tape, id};
}

// ---------------------------------------------------------------------------
// Routing strategies
// ---------------------------------------------------------------------------

template <class T>
struct RoutingResult {
    Var<T> poses;    // [N,P,J,D]
    Var<T> coupling; // [N,I,J], rows over J sum to 1
};

/// Routing-by-agreement, unrolled on the tape so gradients flow through every
/// iteration. b starts at zero; the agreement update is skipped on the last pass.
template <class T>
RoutingResult<T> dynamic_route(Var<T> votes, int iterations) {
    if (iterations < 1) throw std::invalid_argument("dynamic_route: iterations must be >= 1");
    Tape<T>& t = *votes.tape;
    const Tensor<T>& vv = t.val(votes.id);
    int64_t N = vv.dim(0), I = vv.dim(2), J = vv.dim(3);
    Var<T> b{&t, t.input(Tensor<T>({N, I, J}), false)};
    Var<T> c{&t, -1}, v{&t, -1};
    for (int r = 0; r < iterations; ++r) {
        c = softmax_last(b);
        Var<T> s = route_weighted_sum(votes, c);
        v = squash_last(s);
        if (r + 1 < iterations) b = add(b, route_agreement(votes, v));
    }
    return {v, c};
}

/// Single-pass uniform coupling; by definition dynamic routing with one iteration.
template <class T>
RoutingResult<T> unit_route(Var<T> votes) {
    return dynamic_route(votes, 1);
}

template <class T>
struct SelfRouteResult {
    Var<T> poses;    // [N,J,D]
    Var<T> coupling; // [N,I,J]
};

/// Non-iterative routing: each input capsule derives its coupling row from its
/// own pose (softmax of a per-capsule linear map) and votes with a second
/// per-capsule map; outputs are the coupling-and-activation-weighted average
///   out[n,j,:] = sum_i c[n,i,j] a[n,i] vote[n,i,j,:] / sum_i c[n,i,j].
template <class T>
SelfRouteResult<T> self_route(Var<T> pose, Var<T> routing_weights, Var<T> output_weights, int64_t out_dim) {
    Tape<T>& t = *pose.tape;
    const Tensor<T>& vp = t.val(pose.id);
    const Tensor<T>& vr = t.val(routing_weights.id);
    const Tensor<T>& vo = t.val(output_weights.id);
    if (vp.rank() != 3 || vr.rank() != 3 || vo.rank() != 3)
        throw std::invalid_argument("self_route: rank mismatch");
    int64_t N = vp.dim(0), I = vp.dim(1), E = vp.dim(2);
    int64_t J = vr.dim(2);
    if (vr.dim(0) != I || vr.dim(1) != E || vo.dim(0) != I || vo.dim(1) != E || vo.dim(2) != J * out_dim)
        throw std::invalid_argument("self_route: weight shapes inconsistent with pose " + shape_str(vp.shape()));

    Var<T> logits = per_capsule_matmul(pose, routing_weights); // [N,I,J]
    Var<T> c = softmax_last(logits);
    Var<T> act = reshape(caps_length(pose), {N, I, 1}); // [N,I,1]
    Var<T> weights = mul(c, act);                       // [N,I,J]

    Var<T> votes = reshape(per_capsule_matmul(pose, output_weights), {N, int64_t(1), I, J, out_dim});
    Var<T> num = reshape(route_weighted_sum(votes, weights), {N, J, out_dim});
    Var<T> den = reshape(reduce_sum(c, 1), {N, J, int64_t(1)});
    Var<T> out = div_(num, den);
    return {out, c};
}

} // namespace robcaps
