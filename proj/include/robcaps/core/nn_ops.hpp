#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "robcaps/core/gemm.hpp"
#include "robcaps/core/ops.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// a [M,K] x b [K,N] -> [M,N]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& va = t.val(a.id);
    const Tensor<T>& vb = t.val(b.id);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
        throw std::invalid_argument("matmul: bad shapes " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
    int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor<T> out({m, n});
    gemm(va.data(), vb.data(), out.data(), m, k, n);
    int id = t.push(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id, m, k, n](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        if (tp.wants(pa)) gemm_nt(g.data(), tp.val(pb).data(), tp.grad_buf(pa).data(), m, n, k, true);
        if (tp.wants(pb)) gemm_tn(tp.val(pa).data(), g.data(), tp.grad_buf(pb).data(), k, m, n, true);
    });
    return {a.tape, id};
}

/// x [N,in] * w [in,out] + b [out]
template <class T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
    return add(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Convolution (NHWC activations, HWIO weights), im2col + GEMM.
// The column matrix is recomputed in the backward pass instead of being
// captured, trading FLOPs for a much smaller live set.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* col) {
    // col: [Ho*Wo, kh*kw*C]
    for (int64_t oy = 0; oy < Ho; ++oy) {
        for (int64_t ox = 0; ox < Wo; ++ox) {
            T* dst = col + (oy * Wo + ox) * kh * kw * C;
            for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) {
                    std::fill(dst + ky * kw * C, dst + (ky + 1) * kw * C, T(0));
                    continue;
                }
                for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t ix = ox * stride + kx - pad;
                    T* d = dst + (ky * kw + kx) * C;
                    if (ix < 0 || ix >= W) {
                        std::fill(d, d + C, T(0));
                    } else {
                        const T* s = x + (iy * W + ix) * C;
                        std::copy(s, s + C, d);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_accum(const T* col, int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* gx) {
    for (int64_t oy = 0; oy < Ho; ++oy) {
        for (int64_t ox = 0; ox < Wo; ++ox) {
            const T* src = col + (oy * Wo + ox) * kh * kw * C;
            for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= H) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= W) continue;
                    const T* s = src + (ky * kw + kx) * C;
                    T* d = gx + (iy * W + ix) * C;
                    for (int64_t c = 0; c < C; ++c) d[c] += s[c];
                }
            }
        }
    }
}

} // namespace detail

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// "same" padding for odd kernels at stride 1; for stride>1 keeps ceil(in/stride).
inline int64_t same_pad(int64_t k) { return (k - 1) / 2; }

/// x [N,H,W,Cin], w [kh,kw,Cin,Cout], optional bias [Cout] added by caller via add().
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, int64_t stride, int64_t pad) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const Tensor<T>& vw = t.val(w.id);
    if (vx.rank() != 4 || vw.rank() != 4 || vx.dim(3) != vw.dim(2))
        throw std::invalid_argument("conv2d: bad shapes " + shape_str(vx.shape()) + " * " + shape_str(vw.shape()));
    int64_t N = vx.dim(0), H = vx.dim(1), W = vx.dim(2), C = vx.dim(3);
    int64_t kh = vw.dim(0), kw = vw.dim(1), Cout = vw.dim(3);
    int64_t Ho = conv_out_size(H, kh, stride, pad), Wo = conv_out_size(W, kw, stride, pad);
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

    int64_t K = kh * kw * C;
    Tensor<T> out({N, Ho, Wo, Cout});
    std::vector<T> col(static_cast<size_t>(Ho * Wo * K));
    for (int64_t n = 0; n < N; ++n) {
        detail::im2col(vx.data() + n * H * W * C, H, W, C, kh, kw, stride, pad, Ho, Wo, col.data());
        gemm(col.data(), vw.data(), out.data() + n * Ho * Wo * Cout, Ho * Wo, K, Cout);
    }
    int id = t.push(std::move(out), {x.id, w.id},
                    [px = x.id, pw = w.id, N, H, W, C, kh, kw, Cout, Ho, Wo, K, stride, pad](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vx2 = tp.val(px);
        const Tensor<T>& vw2 = tp.val(pw);
        std::vector<T> col2(static_cast<size_t>(Ho * Wo * K));
        for (int64_t n = 0; n < N; ++n) {
            const T* gn = g.data() + n * Ho * Wo * Cout;
            if (tp.wants(pw)) {
                detail::im2col(vx2.data() + n * H * W * C, H, W, C, kh, kw, stride, pad, Ho, Wo, col2.data());
                gemm_tn(col2.data(), gn, tp.grad_buf(pw).data(), K, Ho * Wo, Cout, true);
            }
            if (tp.wants(px)) {
                gemm_nt(gn, vw2.data(), col2.data(), Ho * Wo, Cout, K, false);
                detail::col2im_accum(col2.data(), H, W, C, kh, kw, stride, pad, Ho, Wo,
                                     tp.grad_buf(px).data() + n * H * W * C);
            }
        }
    });
    return {x.tape, id};
}

/// Adds a per-channel bias [C] to a channel-last activation.
template <class T>
Var<T> bias_add(Var<T> x, Var<T> b) { return add(x, b); }

// ---------------------------------------------------------------------------
// Batch normalization over the last (channel) axis.
// Training mode normalizes with batch statistics and refreshes the caller's
// running buffers in place; eval mode reads the running buffers and is a
// plain affine map as far as the tape is concerned.
// ---------------------------------------------------------------------------

template <class T>
struct BatchNormBuffers {
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
    T update = T(0.1); // fraction of the batch statistic blended in per step
};

template <class T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormBuffers<T> bufs, bool training, T eps = T(1e-5)) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    int64_t C = vx.shape().back();
    int64_t M = vx.numel() / C; // samples per channel
    const Tensor<T>& vg = t.val(gamma.id);
    const Tensor<T>& vb = t.val(beta.id);

    Tensor<T> mean({C}), var({C});
    if (training) {
        for (int64_t i = 0; i < M; ++i)
            for (int64_t c = 0; c < C; ++c) mean[c] += vx[i * C + c];
        for (int64_t c = 0; c < C; ++c) mean[c] /= static_cast<T>(M);
        for (int64_t i = 0; i < M; ++i)
            for (int64_t c = 0; c < C; ++c) {
                T d = vx[i * C + c] - mean[c];
                var[c] += d * d;
            }
        for (int64_t c = 0; c < C; ++c) var[c] /= static_cast<T>(M);
        if (bufs.running_mean) {
            Tensor<T>& rm = *bufs.running_mean;
            Tensor<T>& rv = *bufs.running_var;
            for (int64_t c = 0; c < C; ++c) {
                rm[c] = (T(1) - bufs.update) * rm[c] + bufs.update * mean[c];
                rv[c] = (T(1) - bufs.update) * rv[c] + bufs.update * var[c];
            }
        }
    } else {
        mean = *bufs.running_mean;
        var = *bufs.running_var;
    }

    Tensor<T> inv_std({C});
    for (int64_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);

    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < M; ++i)
        for (int64_t c = 0; c < C; ++c)
            out[i * C + c] = (vx[i * C + c] - mean[c]) * inv_std[c] * vg[c] + vb[c];

    int id = t.push(std::move(out), {x.id, gamma.id, beta.id},
                    [px = x.id, pg = gamma.id, pb = beta.id, mean, inv_std, M, C, training](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& vx2 = tp.val(px);
        const Tensor<T>& vg2 = tp.val(pg);
        // per-channel reductions of g and g*xhat
        Tensor<T> sum_g({C}), sum_gx({C});
        for (int64_t i = 0; i < M; ++i)
            for (int64_t c = 0; c < C; ++c) {
                T xh = (vx2[i * C + c] - mean[c]) * inv_std[c];
                sum_g[c] += g[i * C + c];
                sum_gx[c] += g[i * C + c] * xh;
            }
        if (tp.wants(pg)) {
            Tensor<T>& gg = tp.grad_buf(pg);
            for (int64_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (tp.wants(pb)) {
            Tensor<T>& gb = tp.grad_buf(pb);
            for (int64_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (tp.wants(px)) {
            Tensor<T>& gx = tp.grad_buf(px);
            T m = static_cast<T>(M);
            for (int64_t i = 0; i < M; ++i)
                for (int64_t c = 0; c < C; ++c) {
                    T xh = (vx2[i * C + c] - mean[c]) * inv_std[c];
                    T go = g[i * C + c];
                    if (training)
                        gx[i * C + c] += vg2[c] * inv_std[c] * (go - sum_g[c] / m - xh * sum_gx[c] / m);
                    else
                        gx[i * C + c] += vg2[c] * inv_std[c] * go;
                }
        }
    });
    return {x.tape, id};
}

// ---------------------------------------------------------------------------
// Softmax / gathers / losses
// ---------------------------------------------------------------------------

/// Softmax over the last axis, stabilized by the row max.
template <class T>
Var<T> softmax_last(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    int64_t C = v.shape().back();
    int64_t M = v.numel() / C;
    Tensor<T> out(v.shape());
    for (int64_t i = 0; i < M; ++i) {
        const T* row = v.data() + i * C;
        T mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T z = T(0);
        for (int64_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        for (int64_t c = 0; c < C; ++c) out[i * C + c] = std::exp(row[c] - mx) / z;
    }
    int id = t.push(std::move(out), {x.id}, [px = x.id, M, C](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        const Tensor<T>& g = tp.grad(self);
        const Tensor<T>& y = tp.val(self);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < M; ++i) {
            T dot = T(0);
            for (int64_t c = 0; c < C; ++c) dot += g[i * C + c] * y[i * C + c];
            for (int64_t c = 0; c < C; ++c) gx[i * C + c] += y[i * C + c] * (g[i * C + c] - dot);
        }
    });
    return {x.tape, id};
}

/// scores [N,C], labels [N] -> [N]: the score at each row's label.
template <class T>
Var<T> take_label(Var<T> scores, const std::vector<int>& labels) {
    Tape<T>& t = *scores.tape;
    const Tensor<T>& v = t.val(scores.id);
    int64_t N = v.dim(0), C = v.dim(1);
    Tensor<T> out({N});
    for (int64_t n = 0; n < N; ++n) out[n] = v[n * C + labels[static_cast<size_t>(n)]];
    int id = t.push(std::move(out), {scores.id}, [ps = scores.id, labels, N, C](Tape<T>& tp, int self) {
        if (!tp.wants(ps)) return;
        const Tensor<T>& g = tp.grad(self);
        Tensor<T>& gx = tp.grad_buf(ps);
        for (int64_t n = 0; n < N; ++n) gx[n * C + labels[static_cast<size_t>(n)]] += g[n];
    });
    return {scores.tape, id};
}

/// scores [N,C], labels [N] -> [N]: max over classes other than the label.
/// Gradient flows to the (first) argmax entry.
template <class T>
Var<T> max_excluding(Var<T> scores, const std::vector<int>& labels) {
    Tape<T>& t = *scores.tape;
    const Tensor<T>& v = t.val(scores.id);
    int64_t N = v.dim(0), C = v.dim(1);
    Tensor<T> out({N});
    std::vector<int64_t> arg(static_cast<size_t>(N));
    for (int64_t n = 0; n < N; ++n) {
        int lab = labels[static_cast<size_t>(n)];
        T best = -std::numeric_limits<T>::infinity();
        int64_t bi = -1;
        for (int64_t c = 0; c < C; ++c) {
            if (c == lab) continue;
            if (v[n * C + c] > best) { best = v[n * C + c]; bi = c; }
        }
        out[n] = best;
        arg[static_cast<size_t>(n)] = bi;
    }
    int id = t.push(std::move(out), {scores.id}, [ps = scores.id, arg, N, C](Tape<T>& tp, int self) {
        if (!tp.wants(ps)) return;
        const Tensor<T>& g = tp.grad(self);
        Tensor<T>& gx = tp.grad_buf(ps);
        for (int64_t n = 0; n < N; ++n) gx[n * C + arg[static_cast<size_t>(n)]] += g[n];
    });
    return {scores.tape, id};
}

/// Mean cross-entropy of logits [N,C] against integer labels, log-sum-exp stabilized.
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, const std::vector<int>& labels) {
    Tape<T>& t = *logits.tape;
    const Tensor<T>& v = t.val(logits.id);
    int64_t N = v.dim(0), C = v.dim(1);
    T loss = T(0);
    for (int64_t n = 0; n < N; ++n) {
        const T* row = v.data() + n * C;
        T mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T z = T(0);
        for (int64_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        loss += std::log(z) + mx - row[labels[static_cast<size_t>(n)]];
    }
    loss /= static_cast<T>(N);
    int id = t.push(Tensor<T>::scalar(loss), {logits.id}, [pl = logits.id, labels, N, C](Tape<T>& tp, int self) {
        if (!tp.wants(pl)) return;
        T g = tp.grad(self)[0];
        const Tensor<T>& v2 = tp.val(pl);
        Tensor<T>& gx = tp.grad_buf(pl);
        for (int64_t n = 0; n < N; ++n) {
            const T* row = v2.data() + n * C;
            T mx = row[0];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
            T z = T(0);
            for (int64_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
            for (int64_t c = 0; c < C; ++c) {
                T p = std::exp(row[c] - mx) / z;
                T onehot = (c == labels[static_cast<size_t>(n)]) ? T(1) : T(0);
                gx[n * C + c] += g * (p - onehot) / static_cast<T>(N);
            }
        }
    });
    return {logits.tape, id};
}

struct MarginLossCfg {
    double m_pos = 0.9;
    double m_neg = 0.1;
    double lambda = 0.5;
};

/// Margin loss on per-class confidences [N,C] in [0,1]; summed over classes,
/// averaged over the batch. The present class pays max(0, m_pos - v)^2, the
/// absent ones pay lambda * max(0, v - m_neg)^2.
template <class T>
Var<T> margin_loss(Var<T> conf, const std::vector<int>& labels, MarginLossCfg cfg = {}) {
    Tape<T>& t = *conf.tape;
    const Tensor<T>& v = t.val(conf.id);
    int64_t N = v.dim(0), C = v.dim(1);
    T mp = static_cast<T>(cfg.m_pos), mn = static_cast<T>(cfg.m_neg), lam = static_cast<T>(cfg.lambda);
    T loss = T(0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T x = v[n * C + c];
            if (c == labels[static_cast<size_t>(n)]) {
                T d = std::max(T(0), mp - x);
                loss += d * d;
            } else {
                T d = std::max(T(0), x - mn);
                loss += lam * d * d;
            }
        }
    loss /= static_cast<T>(N);
    int id = t.push(Tensor<T>::scalar(loss), {conf.id}, [pc = conf.id, labels, N, C, mp, mn, lam](Tape<T>& tp, int self) {
        if (!tp.wants(pc)) return;
        T g = tp.grad(self)[0] / static_cast<T>(N);
        const Tensor<T>& v2 = tp.val(pc);
        Tensor<T>& gx = tp.grad_buf(pc);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                T x = v2[n * C + c];
                if (c == labels[static_cast<size_t>(n)]) {
                    T d = mp - x;
                    if (d > T(0)) gx[n * C + c] += g * T(-2) * d;
                } else {
                    T d = x - mn;
                    if (d > T(0)) gx[n * C + c] += g * lam * T(2) * d;
                }
            }
    });
    return {conf.tape, id};
}

/// Mean squared error of x against a fixed target, averaged over every element.
template <class T>
Var<T> mse_vs_const(Var<T> x, const Tensor<T>& target) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.val(x.id);
    if (v.numel() != target.numel()) throw std::invalid_argument("mse_vs_const: size mismatch");
    int64_t n = v.numel();
    T loss = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = v[i] - target[i];
        loss += d * d;
    }
    loss /= static_cast<T>(n);
    int id = t.push(Tensor<T>::scalar(loss), {x.id}, [px = x.id, target, n](Tape<T>& tp, int self) {
        if (!tp.wants(px)) return;
        T g = tp.grad(self)[0];
        const Tensor<T>& v2 = tp.val(px);
        Tensor<T>& gx = tp.grad_buf(px);
        for (int64_t i = 0; i < n; ++i) gx[i] += g * T(2) * (v2[i] - target[i]) / static_cast<T>(n);
    });
    return {x.tape, id};
}

/// Global average pool of [N,H,W,C] -> [N,C].
template <class T>
Var<T> global_avg_pool(Var<T> x) {
    const Shape& s = x.val().shape();
    int64_t N = s[0], H = s[1], W = s[2], C = s[3];
    Var<T> r = reshape(x, {N, H * W, C});
    Var<T> summed = reduce_sum(r, 1);
    return scale(summed, T(1) / static_cast<T>(H * W));
}

} // namespace robcaps
