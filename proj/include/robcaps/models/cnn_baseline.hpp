#pragma once

#include "robcaps/models/common.hpp"

namespace robcaps {

// Depth-matched CNN: the deep capsule network's layout with every capsule
// convolution replaced by a plain convolution of the same output width
// (num_caps x caps_dim channels) followed by batch norm + ReLU, and the
// class-capsule layer replaced by flatten + fully connected logits. Weight
// layer count matches the capsule model it mirrors (18).

template <class T>
class CnnBaselineModel : public ModelBase<T> {
public:
    explicit CnnBaselineModel(ModelConfig cfg) : ModelBase<T>(std::move(cfg)) {
        if (this->cfg_.routing != RoutingVariant::DYNAMIC)
            throw std::invalid_argument("routing variants apply to capsule models only");
        const auto& c = this->cfg_;
        const auto& g = this->geom_;
        stem_ch_ = c.knob("stem_channels", 128);
        types_ = c.knob("cell_caps_types", 32);
        cell_dim_[0] = c.knob("cell1_dim", 4);
        cell_dim_[1] = c.knob("cell2_dim", 8);
        cell_dim_[2] = c.knob("cell3_dim", 8);
        cell_dim_[3] = c.knob("cell4_dim", 8);

        int64_t h = g.height, w = g.width;
        for (int i = 0; i < 4; ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            cell_h_[i] = h;
            cell_w_[i] = w;
        }
        flat_dim_ = cell_h_[2] * cell_w_[2] * types_ * cell_dim_[2] + cell_h_[3] * cell_w_[3] * types_ * cell_dim_[3];

        Rng rng(c.seed);
        Rng conv_rng = rng.fork(1), fc_rng = rng.fork(2);
        auto& s = this->store_;
        layers::register_conv(s, "stem", 3, 3, g.channels, stem_ch_, conv_rng);
        layers::register_bn(s, "stem_bn", stem_ch_);
        int64_t in_ch = stem_ch_;
        for (int i = 0; i < 4; ++i) {
            int64_t out_ch = types_ * cell_dim_[i];
            std::string cell = "cell" + std::to_string(i + 1);
            for (const char* leg : {"a", "b", "c", "d"}) {
                int64_t cin = (std::string(leg) == "a") ? in_ch : out_ch;
                layers::register_conv(s, cell + "/" + leg, 3, 3, cin, out_ch, conv_rng);
                layers::register_bn(s, cell + "/" + leg + "_bn", out_ch);
            }
            in_ch = out_ch;
        }
        layers::register_dense(s, "fc", flat_dim_, g.num_classes, fc_rng);
    }

    bool is_capsule() const override { return false; }
    bool has_decoder() const override { return false; }

    ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts& opts) override {
        const BoundParams<T>& b = this->bind(t, opts.params_need_grad);
        int64_t N = x.val().dim(0);

        auto block = [&](const std::string& name, Var<T> in, int64_t stride) {
            return relu(layers::apply_bn(this->store_, b, name + "_bn",
                                         layers::apply_conv(b, name, in, stride, 1), opts.training));
        };

        Var<T> h = block("stem", x, 1);
        Var<T> cell3_out{&t, -1}, cell4_out{&t, -1};
        for (int i = 0; i < 4; ++i) {
            std::string cell = "cell" + std::to_string(i + 1);
            Var<T> a = block(cell + "/a", h, 2);
            Var<T> skip = block(cell + "/b", a, 1);
            Var<T> cc = block(cell + "/c", a, 1);
            Var<T> dd = block(cell + "/d", cc, 1);
            h = add(dd, skip);
            if (i == 2) cell3_out = h;
            if (i == 3) cell4_out = h;
        }
        Var<T> f3 = reshape(cell3_out, {N, cell_h_[2] * cell_w_[2] * types_ * cell_dim_[2]});
        Var<T> f4 = reshape(cell4_out, {N, cell_h_[3] * cell_w_[3] * types_ * cell_dim_[3]});
        Var<T> flat = concat(std::vector<Var<T>>{f3, f4}, 1);
        Var<T> logits = layers::apply_dense(b, "fc", flat);
        Var<T> conf = softmax_last(logits);
        return {conf, logits, std::nullopt};
    }

private:
    int64_t stem_ch_, types_;
    int64_t cell_dim_[4], cell_h_[4], cell_w_[4];
    int64_t flat_dim_;
};

} // namespace robcaps
