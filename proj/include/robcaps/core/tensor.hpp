#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace robcaps {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
    os << ']';
    return os.str();
}

/// Dense row-major n-d array with value semantics.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape dims) : dims_(std::move(dims)), v_(shape_numel(dims_), T(0)) {}
    Tensor(Shape dims, std::vector<T> values) : dims_(std::move(dims)), v_(std::move(values)) {
        if (static_cast<int64_t>(v_.size()) != shape_numel(dims_))
            throw std::invalid_argument("tensor: value count does not match shape " + shape_str(dims_));
    }

    static Tensor full(Shape dims, T value) {
        Tensor t(std::move(dims));
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return dims_; }
    int64_t dim(size_t i) const { return dims_.at(i); }
    size_t rank() const { return dims_.size(); }
    int64_t numel() const { return static_cast<int64_t>(v_.size()); }
    bool empty() const { return v_.empty(); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    std::vector<T>& vec() { return v_; }
    const std::vector<T>& vec() const { return v_; }

    T& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int64_t> idx) { return v_[offset(idx)]; }
    const T& at(std::initializer_list<int64_t> idx) const { return v_[offset(idx)]; }

    /// Same storage, new shape; element count must match.
    Tensor reshaped(Shape dims) const {
        if (shape_numel(dims) != numel())
            throw std::invalid_argument("reshape: numel mismatch " + shape_str(dims_) + " -> " + shape_str(dims));
        Tensor t;
        t.dims_ = std::move(dims);
        t.v_ = v_;
        return t;
    }

    void fill(T value) { std::fill(v_.begin(), v_.end(), value); }

    bool all_finite() const {
        for (const T& x : v_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t = Tensor<U>(dims_);
        for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<U>(v_[static_cast<size_t>(i)]);
        return t;
    }

private:
    size_t offset(std::initializer_list<int64_t> idx) const {
        assert(idx.size() == dims_.size());
        size_t off = 0, k = 0;
        for (int64_t i : idx) {
            assert(i >= 0 && i < dims_[k]);
            off = off * static_cast<size_t>(dims_[k]) + static_cast<size_t>(i);
            ++k;
        }
        return off;
    }

    Shape dims_;
    std::vector<T> v_;
};

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (!(a[i] == b[i]) && !(std::isnan(double(a[i])) && std::isnan(double(b[i])))) return false;
    return true;
}

} // namespace robcaps
