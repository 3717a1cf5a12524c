#pragma once

#include "robcaps/models/common.hpp"

namespace robcaps {

// Reconstruction decoder shared by the capsule models: the class poses are
// masked to the selected label's capsule, flattened, and passed through
// 512 -> 1024 -> H*W*C fully connected layers with a sigmoid output.

template <class T>
void register_decoder(ParamStore<T>& s, int64_t num_classes, int64_t caps_dim, int64_t out_pixels, Rng& rng,
                      int64_t hidden1 = 512, int64_t hidden2 = 1024) {
    layers::register_dense(s, "decoder/fc1", num_classes * caps_dim, hidden1, rng);
    layers::register_dense(s, "decoder/fc2", hidden1, hidden2, rng);
    layers::register_dense(s, "decoder/fc3", hidden2, out_pixels, rng);
}

/// class_poses [N, num_classes, caps_dim] -> reconstructed pixels [N, H*W*C].
template <class T>
Var<T> apply_decoder(Tape<T>& t, const BoundParams<T>& b, Var<T> class_poses, const std::vector<int>& labels,
                     int num_classes) {
    const Shape& s = class_poses.val().shape();
    int64_t N = s[0], D = s[2];
    Var<T> mask = layers::label_mask<T>(t, labels, num_classes);
    Var<T> masked = mul(class_poses, mask);
    Var<T> flat = reshape(masked, {N, static_cast<int64_t>(num_classes) * D});
    Var<T> h1 = relu(layers::apply_dense(b, "decoder/fc1", flat));
    Var<T> h2 = relu(layers::apply_dense(b, "decoder/fc2", h1));
    return sigmoid(layers::apply_dense(b, "decoder/fc3", h2));
}

} // namespace robcaps
