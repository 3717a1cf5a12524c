#pragma once

#include "robcaps/models/common.hpp"
#include "robcaps/models/decoder.hpp"

namespace robcaps {

// Deep capsule network: conv stem with batch norm, four capsule cells (each a
// stride-2 capsule conv A followed by B(A), C(A), D(C) with the residual sum
// D + B), a routed 3D-convolutional capsule block as the last cell's skip
// branch, and a fully connected class-capsule layer over the flattened
// capsules of the last two cells.
//
// The 3D block turns each input capsule type into votes with a shared 3x3
// convolution and routes them with coupling shared across spatial positions.

template <class T>
class DeepCapsModel : public ModelBase<T> {
public:
    explicit DeepCapsModel(ModelConfig cfg) : ModelBase<T>(std::move(cfg)) {
        const auto& c = this->cfg_;
        const auto& g = this->geom_;
        stem_ch_ = c.knob("stem_channels", 128);
        types_ = c.knob("cell_caps_types", 32);
        cell_dim_[0] = c.knob("cell1_dim", 4);
        cell_dim_[1] = c.knob("cell2_dim", 8);
        cell_dim_[2] = c.knob("cell3_dim", 8);
        cell_dim_[3] = c.knob("cell4_dim", 8);
        class_dim_ = c.knob("class_caps_dim", 32);
        routing_iters_ = static_cast<int>(c.knob("routing_iters", 3));

        // spatial sizes: stem keeps size; each cell halves it (stride-2 A conv, same padding)
        int64_t h = g.height, w = g.width;
        for (int i = 0; i < 4; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            cell_h_[i] = h;
            cell_w_[i] = w;
        }
        in_caps_ = cell_h_[2] * cell_w_[2] * types_ + cell_h_[3] * cell_w_[3] * types_;

        Rng rng(c.seed);
        Rng conv_rng = rng.fork(1), caps_rng = rng.fork(2), dec_rng = rng.fork(3);
        auto& s = this->store_;
        layers::register_conv(s, "stem", 3, 3, g.channels, stem_ch_, conv_rng);
        layers::register_bn(s, "stem_bn", stem_ch_);
        int64_t in_ch = stem_ch_;
        for (int i = 0; i < 4; ++i) {
            int64_t out_ch = types_ * cell_dim_[i];
            std::string cell = "cell" + std::to_string(i + 1);
            layers::register_conv(s, cell + "/a", 3, 3, in_ch, out_ch, conv_rng);
            if (i == 3) {
                // 3D routed skip: one shared vote conv per input capsule type
                s.add_param(cell + "/b_vote/w",
                            init_fanin_uniform<T>({3, 3, cell_dim_[i], types_ * cell_dim_[i]},
                                                  3 * 3 * cell_dim_[i], conv_rng));
                if (c.routing == RoutingVariant::SELF)
                    s.add_param(cell + "/b_route_w", init_trunc_normal<T>({types_, cell_dim_[i], types_}, caps_rng));
            } else {
                layers::register_conv(s, cell + "/b", 3, 3, out_ch, out_ch, conv_rng);
            }
            layers::register_conv(s, cell + "/c", 3, 3, out_ch, out_ch, conv_rng);
            layers::register_conv(s, cell + "/d", 3, 3, out_ch, out_ch, conv_rng);
            in_ch = out_ch;
        }
        int64_t J = g.num_classes;
        int64_t E = cell_dim_[3];
        if (c.routing == RoutingVariant::SELF) {
            s.add_param("class/route_w", init_trunc_normal<T>({in_caps_, E, J}, caps_rng));
            s.add_param("class/out_w", init_trunc_normal<T>({in_caps_, E, J * class_dim_}, caps_rng));
        } else {
            s.add_param("class/w", init_trunc_normal<T>({in_caps_, J, class_dim_, E}, caps_rng));
        }
        register_decoder(s, J, class_dim_, g.height * g.width * g.channels, dec_rng,
                         c.knob("decoder_hidden1", 512), c.knob("decoder_hidden2", 1024));
    }

    bool is_capsule() const override { return true; }

    ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts& opts) override {
        const BoundParams<T>& b = this->bind(t, opts.params_need_grad);
        int64_t N = x.val().dim(0);
        int64_t J = this->geom_.num_classes;

        Var<T> h = relu(layers::apply_bn(this->store_, b, "stem_bn",
                                         layers::apply_conv(b, "stem", x, 1, 1), opts.training));
        Var<T> cell3_out{&t, -1}, cell4_out{&t, -1};
        for (int i = 0; i < 4; ++i) {
            std::string cell = "cell" + std::to_string(i + 1);
            int64_t d = cell_dim_[i];
            Var<T> a = conv_caps(b, cell + "/a", h, 2, d);
            Var<T> skip{&t, -1};
            if (i == 3) {
                skip = routed_3d_block(t, b, a, d);
            } else {
                skip = conv_caps(b, cell + "/b", a, 1, d);
            }
            Var<T> cc = conv_caps(b, cell + "/c", a, 1, d);
            Var<T> dd = conv_caps(b, cell + "/d", cc, 1, d);
            h = add(dd, skip);
            if (i == 2) cell3_out = h;
            if (i == 3) cell4_out = h;
        }

        // flatten both tails into one capsule set [N, I, E]
        int64_t E = cell_dim_[3];
        Var<T> f3 = reshape(cell3_out, {N, cell_h_[2] * cell_w_[2] * types_, cell_dim_[2]});
        Var<T> f4 = reshape(cell4_out, {N, cell_h_[3] * cell_w_[3] * types_, E});
        Var<T> u = concat(std::vector<Var<T>>{f3, f4}, 1);

        Var<T> poses{&t, -1};
        if (this->cfg_.routing == RoutingVariant::SELF) {
            SelfRouteResult<T> r = self_route(u, b.at("class/route_w"), b.at("class/out_w"), class_dim_);
            poses = squash_last(r.poses);
        } else {
            Var<T> votes = caps_votes(u, b.at("class/w"));
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
    /// Capsule conv: conv + bias on flattened channels, then squash per capsule.
    Var<T> conv_caps(const BoundParams<T>& b, const std::string& name, Var<T> x, int64_t stride, int64_t dim) {
        Var<T> y = layers::apply_conv(b, name, x, stride, 1);
        Shape s = y.val().shape(); // copy: tape pushes below may reallocate node storage
        Var<T> caps = reshape(y, {s[0], s[1], s[2], s[3] / dim, dim});
        return reshape(squash_last(caps), {s[0], s[1], s[2], s[3]});
    }

    /// Last cell's skip branch: shared vote conv per input capsule type, then
    /// routing with positionwise-shared coupling.
    Var<T> routed_3d_block(Tape<T>& t, const BoundParams<T>& b, Var<T> a, int64_t d) {
        const Shape& s = a.val().shape(); // [N,h,w,types*d]
        int64_t N = s[0], h = s[1], w = s[2];
        int64_t I = types_, Jc = types_, Jd = d;
        int64_t P = h * w;
        // [N,h,w,I,d] -> [N,I,h,w,d] -> [N*I,h,w,d]
        Var<T> per_type = reshape(permute(reshape(a, {N, h, w, I, d}), {0, 3, 1, 2, 4}), {N * I, h, w, d});
        Var<T> vote_maps = conv2d(per_type, b.at("cell4/b_vote/w"), 1, 1); // [N*I,h,w,Jc*Jd]
        // -> [N,I,P,Jc,Jd] -> votes [N,P,I,Jc,Jd]
        Var<T> votes = permute(reshape(vote_maps, {N, I, P, Jc, Jd}), {0, 2, 1, 3, 4});

        Var<T> routed{&t, -1};
        if (this->cfg_.routing == RoutingVariant::SELF) {
            // coupling from the spatially pooled pose of each input type
            Var<T> pooled = scale(reduce_sum(reshape(a, {N, P, I, d}), 1), T(1) / static_cast<T>(P)); // [N,I,d]
            Var<T> logits = per_capsule_matmul(pooled, b.at("cell4/b_route_w"));                      // [N,I,Jc]
            Var<T> c = softmax_last(logits);
            Var<T> act = reshape(caps_length(pooled), {N, I, int64_t(1)});
            Var<T> weights = mul(c, act);
            Var<T> num = route_weighted_sum(votes, weights); // [N,P,Jc,Jd]
            Var<T> den = reshape(reduce_sum(c, 1), {N, int64_t(1), Jc, int64_t(1)});
            routed = squash_last(div_(num, den));
        } else {
            int iters = this->cfg_.routing == RoutingVariant::UNIT ? 1 : routing_iters_;
            RoutingResult<T> r = dynamic_route(votes, iters);
            routed = r.poses; // [N,P,Jc,Jd]
        }
        return reshape(routed, {N, h, w, Jc * Jd});
    }

    int64_t stem_ch_, types_, class_dim_;
    int64_t cell_dim_[4], cell_h_[4], cell_w_[4];
    int64_t in_caps_;
    int routing_iters_;
};

} // namespace robcaps
