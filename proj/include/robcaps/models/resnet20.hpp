#pragma once

#include "robcaps/models/common.hpp"

namespace robcaps {

// Canonical 20-layer residual network: 3x3 stem (kept at its native size for
// every input geometry; global average pooling absorbs the difference), three
// stages of three basic blocks at widths 16/32/64 with stride-2 projection
// shortcuts between stages, global average pooling, and a linear classifier.

template <class T>
class ResNet20Model : public ModelBase<T> {
public:
    explicit ResNet20Model(ModelConfig cfg) : ModelBase<T>(std::move(cfg)) {
        if (this->cfg_.routing != RoutingVariant::DYNAMIC)
            throw std::invalid_argument("routing variants apply to capsule models only");
        const auto& c = this->cfg_;
        const auto& g = this->geom_;
        width_ = c.knob("base_width", 16);
        blocks_ = c.knob("blocks_per_stage", 3);

        Rng rng(c.seed);
        Rng conv_rng = rng.fork(1), fc_rng = rng.fork(2);
        auto& s = this->store_;
        layers::register_conv(s, "stem", 3, 3, g.channels, width_, conv_rng);
        layers::register_bn(s, "stem_bn", width_);
        int64_t in_ch = width_;
        for (int stage = 0; stage < 3; ++stage) {
            int64_t out_ch = width_ << stage;
            for (int64_t blk = 0; blk < blocks_; ++blk) {
                std::string name = "s" + std::to_string(stage) + "b" + std::to_string(blk);
                layers::register_conv(s, name + "/c1", 3, 3, in_ch, out_ch, conv_rng);
                layers::register_bn(s, name + "/bn1", out_ch);
                layers::register_conv(s, name + "/c2", 3, 3, out_ch, out_ch, conv_rng);
                layers::register_bn(s, name + "/bn2", out_ch);
                if (in_ch != out_ch) {
                    layers::register_conv(s, name + "/proj", 1, 1, in_ch, out_ch, conv_rng);
                    layers::register_bn(s, name + "/proj_bn", out_ch);
                }
                in_ch = out_ch;
            }
        }
        layers::register_dense(s, "fc", in_ch, g.num_classes, fc_rng);
    }

    bool is_capsule() const override { return false; }
    bool has_decoder() const override { return false; }

    ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts& opts) override {
        const BoundParams<T>& b = this->bind(t, opts.params_need_grad);
        bool training = opts.training;
        auto& store = this->store_;

        Var<T> h = relu(layers::apply_bn(store, b, "stem_bn", layers::apply_conv(b, "stem", x, 1, 1), training));
        int64_t in_ch = width_;
        for (int stage = 0; stage < 3; ++stage) {
            int64_t out_ch = width_ << stage;
            for (int64_t blk = 0; blk < blocks_; ++blk) {
                std::string name = "s" + std::to_string(stage) + "b" + std::to_string(blk);
                int64_t stride = (stage > 0 && blk == 0) ? 2 : 1;
                Var<T> y = relu(layers::apply_bn(store, b, name + "/bn1",
                                                 layers::apply_conv(b, name + "/c1", h, stride, 1), training));
                y = layers::apply_bn(store, b, name + "/bn2", layers::apply_conv(b, name + "/c2", y, 1, 1),
                                     training);
                Var<T> shortcut = h;
                if (in_ch != out_ch)
                    shortcut = layers::apply_bn(store, b, name + "/proj_bn",
                                                layers::apply_conv(b, name + "/proj", h, stride, 0), training);
                h = relu(add(y, shortcut));
                in_ch = out_ch;
            }
        }
        Var<T> pooled = global_avg_pool(h);
        Var<T> logits = layers::apply_dense(b, "fc", pooled);
        Var<T> conf = softmax_last(logits);
        return {conf, logits, std::nullopt};
    }

private:
    int64_t width_, blocks_;
};

} // namespace robcaps
