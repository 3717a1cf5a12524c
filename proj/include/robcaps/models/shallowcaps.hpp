#pragma once

#include "robcaps/models/common.hpp"
#include "robcaps/models/decoder.hpp"

namespace robcaps {

// Single-capsule-layer network: 9x9 conv stem (stride 1, valid), 9x9 primary
// capsule conv (stride 2, valid) into 32 groups of 8-D capsules, then one
// routed class-capsule layer of num_classes 16-D capsules plus the
// reconstruction decoder. Every width is an arch override.

template <class T>
class ShallowCapsModel : public ModelBase<T> {
public:
    explicit ShallowCapsModel(ModelConfig cfg) : ModelBase<T>(std::move(cfg)) {
        const auto& c = this->cfg_;
        const auto& g = this->geom_;
        conv1_ch_ = c.knob("conv1_channels", 256);
        conv1_k_ = c.knob("conv1_kernel", 9);
        conv1_s_ = c.knob("conv1_stride", 1);
        prim_k_ = c.knob("primary_kernel", 9);
        prim_s_ = c.knob("primary_stride", 2);
        prim_types_ = c.knob("primary_caps_types", 32);
        prim_dim_ = c.knob("primary_caps_dim", 8);
        class_dim_ = c.knob("class_caps_dim", 16);
        routing_iters_ = static_cast<int>(c.knob("routing_iters", 3));

        h1_ = conv_out_size(g.height, conv1_k_, conv1_s_, 0);
        w1_ = conv_out_size(g.width, conv1_k_, conv1_s_, 0);
        h2_ = conv_out_size(h1_, prim_k_, prim_s_, 0);
        w2_ = conv_out_size(w1_, prim_k_, prim_s_, 0);
        if (h2_ <= 0 || w2_ <= 0) throw std::invalid_argument("shallowcaps: input too small for the capsule stem");
        in_caps_ = h2_ * w2_ * prim_types_;

        Rng rng(c.seed);
        Rng conv_rng = rng.fork(1), caps_rng = rng.fork(2), dec_rng = rng.fork(3);
        auto& s = this->store_;
        layers::register_conv(s, "conv1", conv1_k_, conv1_k_, g.channels, conv1_ch_, conv_rng);
        layers::register_conv(s, "primary", prim_k_, prim_k_, conv1_ch_, prim_types_ * prim_dim_, conv_rng);
        int64_t J = g.num_classes;
        if (c.routing == RoutingVariant::SELF) {
            s.add_param("class/route_w", init_trunc_normal<T>({in_caps_, prim_dim_, J}, caps_rng));
            s.add_param("class/out_w", init_trunc_normal<T>({in_caps_, prim_dim_, J * class_dim_}, caps_rng));
        } else {
            s.add_param("class/w", init_trunc_normal<T>({in_caps_, J, class_dim_, prim_dim_}, caps_rng));
        }
        register_decoder(s, J, class_dim_, g.height * g.width * g.channels, dec_rng,
                         c.knob("decoder_hidden1", 512), c.knob("decoder_hidden2", 1024));
    }

    bool is_capsule() const override { return true; }

    ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts& opts) override {
        const BoundParams<T>& b = this->bind(t, opts.params_need_grad);
        int64_t N = x.val().dim(0);
        int64_t J = this->geom_.num_classes;

        Var<T> c1 = relu(layers::apply_conv(b, "conv1", x, conv1_s_, 0));
        Var<T> p = layers::apply_conv(b, "primary", c1, prim_s_, 0); // [N,h2,w2,types*dim]
        Var<T> u = squash_last(reshape(p, {N, in_caps_, prim_dim_}));

        Var<T> poses{&t, -1};
        if (this->cfg_.routing == RoutingVariant::SELF) {
            SelfRouteResult<T> r = self_route(u, b.at("class/route_w"), b.at("class/out_w"), class_dim_);
            poses = squash_last(r.poses);
        } else {
            Var<T> votes = caps_votes(u, b.at("class/w")); // [N,I,J,D]
            Var<T> v5 = reshape(votes, {N, int64_t(1), in_caps_, J, class_dim_});
            int iters = this->cfg_.routing == RoutingVariant::UNIT ? 1 : routing_iters_;
            RoutingResult<T> r = dynamic_route(v5, iters);
            poses = reshape(r.poses, {N, J, class_dim_});
        }
        Var<T> conf = caps_length(poses);
        return {conf, conf, poses};
    }

    Var<T> decode(Tape<T>& t, Var<T> class_poses, const std::vector<int>& labels) override {
        return apply_decoder(t, this->bound_, class_poses, labels, this->geom_.num_classes);
    }

private:
    int64_t conv1_ch_, conv1_k_, conv1_s_, prim_k_, prim_s_, prim_types_, prim_dim_, class_dim_;
    int routing_iters_;
    int64_t h1_, w1_, h2_, w2_, in_caps_;
};

} // namespace robcaps
