#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

// Reverse-mode autodiff over a define-by-run tape. A forward pass appends
// nodes in topological order; backward() walks the tape in reverse once.
// Routing iterations, attack losses and training losses are all built as
// ordinary tape graphs, so gradients always reflect the unrolled computation.

template <class T>
class Tape {
public:
    struct Node {
        Tensor<T> val;
        bool needs_grad = false;
        std::function<void(Tape&, int)> back; // empty for leaves
    };

    int input(Tensor<T> v, bool needs_grad = false) {
        nodes_.push_back(Node{std::move(v), needs_grad, nullptr});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push(Tensor<T> v, std::initializer_list<int> parents, std::function<void(Tape&, int)> back) {
        bool needs = false;
        for (int p : parents) needs = needs || nodes_[static_cast<size_t>(p)].needs_grad;
        nodes_.push_back(Node{std::move(v), needs, needs ? std::move(back) : nullptr});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push(Tensor<T> v, const std::vector<int>& parents, std::function<void(Tape&, int)> back) {
        bool needs = false;
        for (int p : parents) needs = needs || nodes_[static_cast<size_t>(p)].needs_grad;
        nodes_.push_back(Node{std::move(v), needs, needs ? std::move(back) : nullptr});
        grads_.emplace_back();
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    bool wants(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    /// Gradient buffer for a node, allocated as zeros on first touch.
    Tensor<T>& grad_buf(int id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty() && nodes_[static_cast<size_t>(id)].val.numel() > 0) g = Tensor<T>(val(id).shape());
        return g;
    }
    bool has_grad(int id) const { return !grads_[static_cast<size_t>(id)].empty(); }
    const Tensor<T>& grad(int id) const {
        if (grads_[static_cast<size_t>(id)].empty()) throw std::runtime_error("tape: gradient not computed for node");
        return grads_[static_cast<size_t>(id)];
    }

    /// Reverse sweep from a scalar root.
    void backward(int root) {
        if (val(root).numel() != 1) throw std::invalid_argument("tape: backward root must be scalar");
        grad_buf(root)[0] = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.needs_grad || !n.back || grads_[static_cast<size_t>(i)].empty()) continue;
            n.back(*this, i);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
};

/// Lightweight handle to a tape node.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& val() const { return tape->val(id); }
    const Shape& shape() const { return tape->val(id).shape(); }
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy rules, right-aligned)
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

/// Row-major strides of `s`, with zero stride on axes broadcast up to `out`.
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t stride = 1;
    for (size_t k = 0; k < s.size(); ++k) {
        size_t i = s.size() - 1 - k;
        size_t oi = out.size() - 1 - k;
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : stride;
        stride *= s[i];
    }
    return st;
}

/// Elementwise map over the broadcast of two tensors.
template <class T, class F>
Tensor<T> bcast_map(const Tensor<T>& a, const Tensor<T>& b, F f) {
    if (a.shape() == b.shape()) { // fast path
        Tensor<T> out(a.shape());
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor<T> out(os);
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t o = 0; o < out.numel(); ++o) {
        out[o] = f(a[ia], b[ib]);
        for (size_t k = r; k-- > 0;) {
            ++idx[k];
            ia += sa[k];
            ib += sb[k];
            if (idx[k] < os[k]) break;
            ia -= sa[k] * os[k];
            ib -= sb[k] * os[k];
            idx[k] = 0;
        }
    }
    return out;
}

/// Scatter-add an output-shaped gradient back onto an operand's shape,
/// summing over axes the operand was broadcast along.
template <class T>
void reduce_into_shape(const Tensor<T>& g, Tensor<T>& dst) {
    if (g.shape() == dst.shape()) {
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
        return;
    }
    const Shape& os = g.shape();
    auto sd = broadcast_strides(dst.shape(), os);
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t id = 0;
    for (int64_t o = 0; o < g.numel(); ++o) {
        dst[id] += g[o];
        for (size_t k = r; k-- > 0;) {
            ++idx[k];
            id += sd[k];
            if (idx[k] < os[k]) break;
            id -= sd[k] * os[k];
            idx[k] = 0;
        }
    }
}

} // namespace robcaps
