#pragma once

// Tiny hand-weighted scorer used by the attack tests: Z = flatten(x) * W + b.
// Differentiable end to end, cheap enough for exhaustive fuzzing.

#include "robcaps/models/common.hpp"

namespace robcaps {

template <class T>
class LinearScoreModel : public ModelBase<T> {
public:
    LinearScoreModel(Tensor<T> w, Tensor<T> b)
        : ModelBase<T>(ModelConfig{ArchitectureId::CNN_BASELINE, RoutingVariant::DYNAMIC, DatasetId::MNIST40, {}, 0}),
          w_(std::move(w)),
          b_(std::move(b)) {}

    bool is_capsule() const override { return false; }

    ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts&) override {
        int64_t n = x.val().dim(0);
        Var<T> flat = reshape(x, {n, w_.dim(0)});
        Var<T> wv{&t, t.input(w_, false)};
        Var<T> bv{&t, t.input(b_, false)};
        Var<T> z = add(matmul(flat, wv), bv);
        return {softmax_last(z), z, std::nullopt};
    }

private:
    Tensor<T> w_; // [pixels, classes]
    Tensor<T> b_; // [classes]
};

} // namespace robcaps
