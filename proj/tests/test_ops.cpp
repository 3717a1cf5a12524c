#include <catch2/catch_amalgamated.hpp>

#include "robcaps/caps/squash.hpp"
#include "robcaps/core/nn_ops.hpp"
#include "robcaps/core/ops.hpp"
#include "robcaps/core/rng.hpp"
#include "support/gradcheck.hpp"

using namespace robcaps;
using gradcheck::max_rel_err;

namespace {

Tensor<double> rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

constexpr double kTol = 1e-5; // double precision, h=1e-5 central differences

} // namespace

TEST_CASE("elementwise forward values") {
    Tape<float> t;
    Var<float> a{&t, t.input(Tensor<float>({2, 2}, {1, 2, 3, 4}))};
    Var<float> b{&t, t.input(Tensor<float>({2}, {10, 20}))};
    Var<float> c = add(a, b); // broadcast [2,2] + [2]
    REQUIRE(c.val()[0] == 11.0f);
    REQUIRE(c.val()[1] == 22.0f);
    REQUIRE(c.val()[2] == 13.0f);
    REQUIRE(c.val()[3] == 24.0f);

    Var<float> d = mul(a, a);
    REQUIRE(d.val()[3] == 16.0f);
    Var<float> e = relu(Var<float>{&t, t.input(Tensor<float>({3}, {-1, 0, 2}))});
    REQUIRE(e.val()[0] == 0.0f);
    REQUIRE(e.val()[2] == 2.0f);
}

TEST_CASE("binary op gradients with broadcasting") {
    Rng rng(11);
    std::vector<Tensor<double>> in{rand_tensor({2, 3}, rng), rand_tensor({3}, rng, 0.5, 1.5)};

    auto check_both = [&](gradcheck::ScalarFn f) {
        REQUIRE(max_rel_err(f, in, 0) < kTol);
        REQUIRE(max_rel_err(f, in, 1) < kTol);
    };
    check_both([](Tape<double>&, std::vector<Var<double>>& v) { return reduce_sum_all(mul(add(v[0], v[1]), v[0])); });
    check_both([](Tape<double>&, std::vector<Var<double>>& v) { return reduce_sum_all(div_(v[0], v[1])); });
    check_both([](Tape<double>&, std::vector<Var<double>>& v) { return reduce_sum_all(square(sub(v[0], v[1]))); });

    // scalar broadcast up: [1] against [2,3]
    std::vector<Tensor<double>> in2{rand_tensor({1}, rng), rand_tensor({2, 3}, rng)};
    auto f2 = [](Tape<double>&, std::vector<Var<double>>& v) { return reduce_sum_all(mul(v[0], v[1])); };
    REQUIRE(max_rel_err(f2, in2, 0) < kTol);
    REQUIRE(max_rel_err(f2, in2, 1) < kTol);
}

TEST_CASE("unary op gradients") {
    Rng rng(12);
    std::vector<Tensor<double>> pos{rand_tensor({7}, rng, 0.2, 2.0)};
    std::vector<Tensor<double>> any{rand_tensor({7}, rng, -2.0, 2.0)};

    auto g1 = [](auto op) {
        return [op](Tape<double>&, std::vector<Var<double>>& v) { return reduce_sum_all(op(v[0])); };
    };
    REQUIRE(max_rel_err(g1([](Var<double> x) { return sigmoid(x); }), any, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return tanh_(x); }), any, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return exp_(x); }), any, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return log_(x); }), pos, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return sqrt_(x); }), pos, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return square(x); }), any, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return scale(x, 2.5); }), any, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return add_scalar(x, -0.3); }), any, 0) < kTol);
    // keep probes away from the kinks
    std::vector<Tensor<double>> away{Tensor<double>({4}, {-1.5, -0.4, 0.6, 1.2})};
    REQUIRE(max_rel_err(g1([](Var<double> x) { return relu(x); }), away, 0) < kTol);
    REQUIRE(max_rel_err(g1([](Var<double> x) { return maximum_scalar(x, 0.1); }), away, 0) < kTol);
}

TEST_CASE("shape op gradients and round trips") {
    Rng rng(13);
    std::vector<Tensor<double>> in{rand_tensor({2, 3, 4}, rng)};

    auto f_reshape = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(reshape(v[0], {6, 4})));
    };
    REQUIRE(max_rel_err(f_reshape, in, 0) < kTol);

    auto f_permute = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(mul(permute(v[0], {2, 0, 1}), permute(v[0], {2, 0, 1})));
    };
    REQUIRE(max_rel_err(f_permute, in, 0) < kTol);

    // permute forward: explicit value check
    Tape<float> t;
    Var<float> a{&t, t.input(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}))};
    Var<float> p = permute(a, {1, 0});
    REQUIRE(p.val().shape() == Shape{3, 2});
    REQUIRE(p.val().at({0, 1}) == 4.0f);
    REQUIRE(p.val().at({2, 0}) == 3.0f);

    auto f_slice = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(slice(v[0], 1, 1, 2)));
    };
    REQUIRE(max_rel_err(f_slice, in, 0) < kTol);

    auto f_concat = [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> c = concat(std::vector<Var<double>>{v[0], v[1]}, 1);
        return reduce_sum_all(square(c));
    };
    std::vector<Tensor<double>> two{rand_tensor({2, 3}, rng), rand_tensor({2, 2}, rng)};
    REQUIRE(max_rel_err(f_concat, two, 0) < kTol);
    REQUIRE(max_rel_err(f_concat, two, 1) < kTol);

    // concat/slice inverse on values
    Tape<float> t2;
    Var<float> x{&t2, t2.input(Tensor<float>({2, 2}, {1, 2, 3, 4}))};
    Var<float> y{&t2, t2.input(Tensor<float>({2, 1}, {9, 8}))};
    Var<float> cat = concat(std::vector<Var<float>>{x, y}, 1);
    REQUIRE(cat.val().shape() == Shape{2, 3});
    REQUIRE(cat.val().at({0, 2}) == 9.0f);
    Var<float> back = slice(cat, 1, 0, 2);
    REQUIRE(bitwise_equal(back.val(), x.val()));
}

TEST_CASE("reduction gradients") {
    Rng rng(14);
    std::vector<Tensor<double>> in{rand_tensor({3, 4, 2}, rng)};
    auto f0 = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(reduce_sum(v[0], 1)));
    };
    REQUIRE(max_rel_err(f0, in, 0) < kTol);
    auto f1 = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(reduce_sum(v[0], 0, true)));
    };
    REQUIRE(max_rel_err(f1, in, 0) < kTol);
    auto f2 = [](Tape<double>&, std::vector<Var<double>>& v) { return reduce_mean_all(square(v[0])); };
    REQUIRE(max_rel_err(f2, in, 0) < kTol);

    Tape<float> t;
    Var<float> a{&t, t.input(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}))};
    REQUIRE(reduce_sum(a, 0).val()[0] == 5.0f);
    REQUIRE(reduce_sum(a, 1).val()[1] == 15.0f);
    REQUIRE(reduce_sum_all(a).val()[0] == 21.0f);
    REQUIRE(reduce_sum(a, 0, true).val().shape() == Shape{1, 3});
}

TEST_CASE("softmax rows and gradient") {
    Rng rng(15);
    Tape<float> t;
    Tensor<float> logits({4, 5});
    Rng r2(99);
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = static_cast<float>(r2.uniform(-3, 3));
    Var<float> x{&t, t.input(logits)};
    Var<float> y = softmax_last(x);
    for (int64_t n = 0; n < 4; ++n) {
        float s = 0;
        for (int64_t c = 0; c < 5; ++c) s += y.val()[n * 5 + c];
        REQUIRE(std::abs(s - 1.0f) < 1e-6f);
    }
    std::vector<Tensor<double>> in{rand_tensor({3, 4}, rng, -2, 2)};
    auto f = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(softmax_last(v[0])));
    };
    REQUIRE(max_rel_err(f, in, 0) < kTol);
}

TEST_CASE("matmul and dense gradients") {
    Rng rng(16);
    std::vector<Tensor<double>> in{rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng), rand_tensor({2}, rng)};
    auto f = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(dense(v[0], v[1], v[2])));
    };
    REQUIRE(max_rel_err(f, in, 0) < kTol);
    REQUIRE(max_rel_err(f, in, 1) < kTol);
    REQUIRE(max_rel_err(f, in, 2) < kTol);

    Tape<float> t;
    Var<float> a{&t, t.input(Tensor<float>({2, 2}, {1, 2, 3, 4}))};
    Var<float> b{&t, t.input(Tensor<float>({2, 2}, {5, 6, 7, 8}))};
    Tensor<float> expect({2, 2}, {19, 22, 43, 50});
    REQUIRE(max_abs_diff(matmul(a, b).val(), expect) < 1e-6f);
}

TEST_CASE("conv2d matches direct convolution and gradients") {
    // direct 3x3 valid conv on a 1x4x4x1 input, stride 1, no pad
    Tensor<float> img({1, 4, 4, 1});
    for (int64_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
    Tensor<float> ker({3, 3, 1, 1});
    for (int64_t i = 0; i < 9; ++i) ker[i] = 1.0f;
    Tape<float> t;
    Var<float> x{&t, t.input(img)};
    Var<float> w{&t, t.input(ker)};
    Var<float> y = conv2d(x, w, 1, 0);
    REQUIRE(y.val().shape() == Shape{1, 2, 2, 1});
    // each output = sum of the 3x3 window
    REQUIRE(y.val()[0] == 0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10);
    REQUIRE(y.val()[3] == 5 + 6 + 7 + 9 + 10 + 11 + 13 + 14 + 15);

    Rng rng(17);
    std::vector<Tensor<double>> in{rand_tensor({2, 5, 5, 2}, rng), rand_tensor({3, 3, 2, 3}, rng)};
    for (int64_t stride : {1, 2})
        for (int64_t pad : {0, 1}) {
            auto f = [stride, pad](Tape<double>&, std::vector<Var<double>>& v) {
                return reduce_sum_all(square(conv2d(v[0], v[1], stride, pad)));
            };
            REQUIRE(max_rel_err(f, in, 0) < kTol);
            REQUIRE(max_rel_err(f, in, 1) < kTol);
        }
}

TEST_CASE("batchnorm train and eval") {
    Rng rng(18);
    std::vector<Tensor<double>> in{rand_tensor({6, 3}, rng), rand_tensor({3}, rng, 0.5, 1.5),
                                   rand_tensor({3}, rng)};
    auto f_train = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(batchnorm(v[0], v[1], v[2], BatchNormBuffers<double>{}, true)));
    };
    REQUIRE(max_rel_err(f_train, in, 0) < kTol);
    REQUIRE(max_rel_err(f_train, in, 1) < kTol);
    REQUIRE(max_rel_err(f_train, in, 2) < kTol);

    // train-mode output is normalized: per-channel mean 0, var 1 (gamma=1, beta=0)
    Tape<float> t;
    Tensor<float> x({8, 2});
    Rng r2(5);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(r2.uniform(-4, 4));
    Var<float> vx{&t, t.input(x)};
    Var<float> g{&t, t.input(Tensor<float>::full({2}, 1.0f))};
    Var<float> b{&t, t.input(Tensor<float>({2}))};
    Tensor<float> rm({2}), rv({2});
    BatchNormBuffers<float> bufs{&rm, &rv, 0.1f};
    Var<float> y = batchnorm(vx, g, b, bufs, true);
    for (int64_t c = 0; c < 2; ++c) {
        float mean = 0, var = 0;
        for (int64_t n = 0; n < 8; ++n) mean += y.val()[n * 2 + c];
        mean /= 8;
        for (int64_t n = 0; n < 8; ++n) {
            float d = y.val()[n * 2 + c] - mean;
            var += d * d;
        }
        var /= 8;
        REQUIRE(std::abs(mean) < 1e-5f);
        REQUIRE(std::abs(var - 1.0f) < 1e-3f);
    }
    // running buffers moved toward batch stats
    REQUIRE(rm[0] != 0.0f);

    // eval mode gradcheck (affine w.r.t. x)
    Tensor<double> rm2({3}), rv2({3});
    for (int64_t i = 0; i < 3; ++i) {
        rm2[i] = 0.1 * static_cast<double>(i);
        rv2[i] = 1.0 + 0.2 * static_cast<double>(i);
    }
    auto f_eval = [&rm2, &rv2](Tape<double>&, std::vector<Var<double>>& v) {
        BatchNormBuffers<double> bb{&rm2, &rv2, 0.1};
        return reduce_sum_all(square(batchnorm(v[0], v[1], v[2], bb, false)));
    };
    REQUIRE(max_rel_err(f_eval, in, 0) < kTol);
}

TEST_CASE("gather ops and losses") {
    std::vector<int> labels{1, 0};
    Tape<float> t;
    Var<float> s{&t, t.input(Tensor<float>({2, 3}, {0.1f, 0.7f, 0.2f, 0.9f, 0.05f, 0.05f}))};
    Var<float> tl = take_label(s, labels);
    REQUIRE(tl.val()[0] == 0.7f);
    REQUIRE(tl.val()[1] == 0.9f);
    Var<float> mx = max_excluding(s, labels);
    REQUIRE(mx.val()[0] == 0.2f);
    REQUIRE(mx.val()[1] == 0.05f);

    Rng rng(19);
    std::vector<Tensor<double>> in{rand_tensor({4, 5}, rng, -2, 2)};
    std::vector<int> lab{3, 0, 1, 4};
    auto f_ce = [&lab](Tape<double>&, std::vector<Var<double>>& v) { return cross_entropy_logits(v[0], lab); };
    REQUIRE(max_rel_err(f_ce, in, 0) < kTol);
    auto f_take = [&lab](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(take_label(v[0], lab)));
    };
    REQUIRE(max_rel_err(f_take, in, 0) < kTol);
    auto f_maxex = [&lab](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(max_excluding(v[0], lab)));
    };
    REQUIRE(max_rel_err(f_maxex, in, 0) < kTol);

    // cross-entropy value check: uniform logits over C classes -> log(C)
    Tape<double> t3;
    Var<double> z{&t3, t3.input(Tensor<double>({2, 4}))};
    REQUIRE(std::abs(cross_entropy_logits(z, std::vector<int>{0, 3}).val()[0] - std::log(4.0)) < 1e-12);
}

TEST_CASE("margin loss hand values and gradient") {
    // all-zero confidences, correct class included: loss = (0.9 - 0)^2 = 0.81
    Tape<double> t;
    Var<double> zero{&t, t.input(Tensor<double>({1, 10}))};
    REQUIRE(std::abs(margin_loss(zero, std::vector<int>{3}).val()[0] - 0.81) < 1e-12);

    // perfect prediction: correct 1.0, others 0 -> loss 0
    Tensor<double> perfect({1, 10});
    perfect[7] = 1.0;
    Var<double> p{&t, t.input(perfect)};
    REQUIRE(margin_loss(p, std::vector<int>{7}).val()[0] == 0.0);

    // monotone: raising the correct-class confidence never increases the loss
    double prev = 1e9;
    for (double v = 0.0; v <= 1.0; v += 0.05) {
        Tensor<double> conf({1, 3});
        conf[0] = v;
        conf[1] = 0.3;
        conf[2] = 0.2;
        Var<double> cv{&t, t.input(conf)};
        double L = margin_loss(cv, std::vector<int>{0}).val()[0];
        REQUIRE(L <= prev + 1e-12);
        prev = L;
    }

    Rng rng(20);
    std::vector<Tensor<double>> in{rand_tensor({3, 4}, rng, 0.05, 0.95)};
    std::vector<int> lab{1, 3, 0};
    auto f = [&lab](Tape<double>&, std::vector<Var<double>>& v) { return margin_loss(v[0], lab); };
    REQUIRE(max_rel_err(f, in, 0) < kTol);
}

TEST_CASE("mse and pooling") {
    Rng rng(21);
    Tensor<double> target = rand_tensor({2, 3}, rng, 0, 1);
    std::vector<Tensor<double>> in{rand_tensor({2, 3}, rng, 0, 1)};
    auto f = [&target](Tape<double>&, std::vector<Var<double>>& v) { return mse_vs_const(v[0], target); };
    REQUIRE(max_rel_err(f, in, 0) < kTol);

    std::vector<Tensor<double>> img{rand_tensor({2, 3, 3, 4}, rng)};
    auto fp = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(global_avg_pool(v[0])));
    };
    REQUIRE(max_rel_err(fp, img, 0) < kTol);

    Tape<float> t;
    Tensor<float> x({1, 2, 2, 1}, {1, 2, 3, 4});
    Var<float> vx{&t, t.input(x)};
    REQUIRE(global_avg_pool(vx).val()[0] == 2.5f);
}

TEST_CASE("squash frozen values and properties") {
    // s = (3,4): v = (25/26) * (3/5, 4/5) = (0.576923, 0.769231), |v| = 25/26
    Tape<double> t;
    Var<double> s{&t, t.input(Tensor<double>({1, 2}, {3, 4}))};
    Var<double> v = squash_last(s);
    REQUIRE(std::abs(v.val()[0] - 0.576923) < 1e-4);
    REQUIRE(std::abs(v.val()[1] - 0.769231) < 1e-4);
    double norm = std::sqrt(v.val()[0] * v.val()[0] + v.val()[1] * v.val()[1]);
    REQUIRE(std::abs(norm - 25.0 / 26.0) < 1e-4);

    // zero fixed point, exactly
    Var<double> z{&t, t.input(Tensor<double>({1, 3}))};
    Var<double> vz = squash_last(z);
    for (int64_t i = 0; i < 3; ++i) REQUIRE(vz.val()[i] == 0.0);

    // unit norm -> 0.5
    Var<double> u{&t, t.input(Tensor<double>({1, 2}, {1.0, 0.0}))};
    REQUIRE(std::abs(caps_length(squash_last(u)).val()[0] - 0.5) < 1e-4);

    // norm < 1 and scale-monotone under random probes
    Rng rng(22);
    double prev_len = -1.0;
    for (double mag = 0.1; mag < 30.0; mag *= 1.7) {
        Tensor<double> sv({1, 4});
        double n2 = 0;
        for (int64_t i = 0; i < 4; ++i) {
            sv[i] = rng.uniform(-1, 1);
            n2 += sv[i] * sv[i];
        }
        for (int64_t i = 0; i < 4; ++i) sv[i] *= mag / std::sqrt(n2);
        Var<double> vv{&t, t.input(sv)};
        double len = caps_length(squash_last(vv)).val()[0];
        REQUIRE(len < 1.0);
        REQUIRE(len > prev_len);
        prev_len = len;
    }

    // gradients for squash and caps_length
    std::vector<Tensor<double>> in{rand_tensor({2, 3, 4}, rng, -1.5, 1.5)};
    auto fs = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(squash_last(v[0])));
    };
    REQUIRE(max_rel_err(fs, in, 0) < kTol);
    auto fl = [](Tape<double>&, std::vector<Var<double>>& v) {
        return reduce_sum_all(square(caps_length(v[0])));
    };
    REQUIRE(max_rel_err(fl, in, 0) < kTol);
}
