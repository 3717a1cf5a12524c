#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "robcaps/core/tensor.hpp"

namespace robcaps {

/// Adam with bias correction. Slots are keyed by position: call step() with
/// the same tensor list every time (first call sizes the moment buffers).
template <class T>
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

    void step(const std::vector<std::pair<Tensor<T>*, const Tensor<T>*>>& params_and_grads) {
        if (m_.empty()) {
            for (auto& [p, g] : params_and_grads) {
                (void)g;
                m_.emplace_back(p->shape());
                v_.emplace_back(p->shape());
            }
        }
        if (m_.size() != params_and_grads.size())
            throw std::logic_error("adam: parameter list changed between steps");
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t k = 0; k < params_and_grads.size(); ++k) {
            Tensor<T>& p = *params_and_grads[k].first;
            const Tensor<T>& g = *params_and_grads[k].second;
            if (p.numel() != m_[k].numel()) throw std::logic_error("adam: shape changed between steps");
            Tensor<T>& m = m_[k];
            Tensor<T>& v = v_[k];
            for (int64_t i = 0; i < p.numel(); ++i) {
                double gi = static_cast<double>(g[i]);
                double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
                double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace robcaps
