#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "robcaps/attacks/cw.hpp"
#include "robcaps/attacks/pgd.hpp"
#include "robcaps/models/factory.hpp"
#include "support/attack_oracles.hpp"
#include "support/toy_models.hpp"

using namespace robcaps;

namespace {

template <class T>
Tensor<T> tensor_from(std::initializer_list<T> vals, Shape s) {
    Tensor<T> t(std::move(s));
    int64_t i = 0;
    for (T v : vals) t[i++] = v;
    return t;
}

/// x laid out as [N,1,P,1] so it looks like an image batch to the attack API.
template <class T>
ImageBatch<T> toy_batch(const std::vector<T>& flat, int64_t n, int64_t p, std::vector<int> labels) {
    ImageBatch<T> b;
    b.data = Tensor<T>({n, 1, p, 1});
    for (size_t i = 0; i < flat.size(); ++i) b.data[static_cast<int64_t>(i)] = flat[i];
    b.labels = std::move(labels);
    return b;
}

template <class T>
LinearScoreModel<T> random_toy(int64_t pixels, int64_t classes, Rng& rng) {
    Tensor<T> w({pixels, classes}), b({classes});
    rng.fill_uniform(w, -1.0, 1.0);
    rng.fill_uniform(b, -0.5, 0.5);
    return LinearScoreModel<T>(std::move(w), std::move(b));
}

ModelConfig mini_caps_cfg(uint64_t seed = 7) {
    ModelConfig c;
    c.arch = ArchitectureId::SHALLOWCAPS;
    c.dataset = DatasetId::MNIST40;
    c.seed = seed;
    c.overrides = {{"conv1_channels", 8}, {"conv1_kernel", 9},   {"conv1_stride", 2},
                   {"primary_kernel", 7}, {"primary_stride", 2}, {"primary_caps_types", 2},
                   {"primary_caps_dim", 4}, {"class_caps_dim", 8}, {"decoder_hidden1", 16},
                   {"decoder_hidden2", 16}};
    return c;
}

template <class T>
ImageBatch<T> random_images(int64_t n, uint64_t seed) {
    ImageBatch<T> b;
    b.data = Tensor<T>({n, 40, 40, 1});
    Rng rng(seed);
    rng.fill_uniform(b.data, 0.0, 1.0);
    b.labels.resize(static_cast<size_t>(n));
    for (auto& l : b.labels) l = rng.uniform_int(0, 9);
    return b;
}

} // namespace

TEST_CASE("pgd config validation", "[attacks]") {
    PgdConfig c;
    c.epsilon = -0.1;
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
    c.epsilon = 0.05;
    c.alpha = 0.1; // alpha > epsilon
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
    c.epsilon = 1.5;
    c.alpha = 0.1;
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
    c.epsilon = 0.1;
    c.alpha = 0.05;
    c.steps = 0;
    REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
    c.steps = 1;
    REQUIRE_NOTHROW(c.validate());
    c.epsilon = 0.0;
    c.alpha = 0.0;
    REQUIRE_NOTHROW(c.validate());
}

TEST_CASE("pgd one-step hand case projects the accumulated step", "[attacks]") {
    // Loss gradient fixed at (1,-1); targeted step of 0.1 lands on the 0.05 ball.
    auto grad_at = [](const Tensor<double>&) { return tensor_from<double>({1.0, -1.0}, {1, 1, 2, 1}); };
    PgdConfig cfg;
    cfg.epsilon = 0.05;
    cfg.alpha = 0.1;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument); // alpha may not exceed epsilon...
    cfg.alpha = 0.05;                                         // ...so take one epsilon-sized step
    cfg.steps = 2;                                            // second step re-projects to the same point
    cfg.targeted = true;
    Tensor<double> x0 = tensor_from<double>({0.5, 0.5}, {1, 1, 2, 1});
    Tensor<double> xa = pgd_core<double>(grad_at, x0, cfg);
    REQUIRE(xa[0] == 0.45);
    // 0.5 + 0.05 rounds to a double a hair outside the ball, so the exact-ball
    // rule lands one ulp below it.
    REQUIRE(0.55 - 0.5 > 0.05);
    REQUIRE(xa[1] == std::nextafter(0.55, 0.0));
    REQUIRE(xa[1] - 0.5 <= 0.05);
}

TEST_CASE("pgd epsilon zero returns the input bitwise", "[attacks]") {
    Rng rng(5);
    auto toy = random_toy<float>(4, 3, rng);
    auto batch = toy_batch<float>({0.1f, 0.6f, 0.3f, 0.9f, 0.2f, 0.8f, 0.5f, 0.4f}, 2, 4, {0, 2});
    PgdConfig cfg;
    cfg.epsilon = 0.0;
    cfg.alpha = 0.0;
    cfg.steps = 3;
    cfg.random_start = true; // must still be exact at radius zero
    auto adv = pgd_attack(toy, batch, cfg);
    REQUIRE(bitwise_equal(adv.x_adv.data, batch.data));
    REQUIRE(toy.score(batch).predicted == toy.score(adv.x_adv).predicted);
    for (auto d : adv.l2_distortion) REQUIRE(d == 0.0f);
}

TEST_CASE("fgsm equals one-step pgd and the directly coded form", "[attacks]") {
    auto run_for = [](ModelBase<float>& m, const ImageBatch<float>& batch) {
        double eps = 0.07;
        auto a = fgsm_attack(m, batch, eps);
        PgdConfig cfg;
        cfg.epsilon = eps;
        cfg.alpha = eps;
        cfg.steps = 1;
        cfg.random_start = false;
        auto b = pgd_attack(m, batch, cfg);
        REQUIRE(bitwise_equal(a.x_adv.data, b.x_adv.data));
        REQUIRE(a.attack_kind == "fgsm");

        Tensor<float> g = input_gradient(m, batch.data, batch.labels);
        std::vector<float> xv(static_cast<size_t>(batch.data.numel())), gv(xv.size());
        for (int64_t i = 0; i < batch.data.numel(); ++i) {
            xv[static_cast<size_t>(i)] = batch.data[i];
            gv[static_cast<size_t>(i)] = g[i];
        }
        auto ref = oracle::fgsm_reference<float>(xv, gv, eps, +1.0);
        for (int64_t i = 0; i < batch.data.numel(); ++i) REQUIRE(a.x_adv.data[i] == ref[static_cast<size_t>(i)]);
    };

    Rng rng(17);
    auto toy = random_toy<float>(6, 4, rng);
    auto tb = toy_batch<float>({0.2f, 0.4f, 0.6f, 0.8f, 0.1f, 0.9f}, 1, 6, {1});
    run_for(toy, tb);

    auto caps = build_model<float>(mini_caps_cfg());
    auto ib = random_images<float>(2, 23);
    run_for(*caps, ib);
}

TEST_CASE("pgd stays inside the ball and the box under fuzzing", "[attacks]") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        int64_t p = rng.uniform_int(2, 6);
        int64_t cls = rng.uniform_int(2, 5);
        auto toy = random_toy<double>(p, cls, rng);
        int64_t n = rng.uniform_int(1, 3);
        std::vector<double> xs(static_cast<size_t>(n * p));
        for (auto& v : xs) v = rng.uniform(0.0, 1.0);
        std::vector<int> labels(static_cast<size_t>(n));
        for (auto& l : labels) l = rng.uniform_int(0, static_cast<int>(cls) - 1);
        auto batch = toy_batch<double>(xs, n, p, labels);

        PgdConfig cfg;
        cfg.epsilon = rng.uniform(0.0, 0.3);
        cfg.alpha = rng.uniform(0.0, cfg.epsilon);
        cfg.steps = rng.uniform_int(1, 5);
        cfg.targeted = rng.uniform_int(0, 1) == 1;
        cfg.random_start = rng.uniform_int(0, 1) == 1;
        cfg.seed = static_cast<uint64_t>(trial);
        if (cfg.targeted) {
            cfg.target_or_true_label.clear();
            for (auto l : labels) cfg.target_or_true_label.push_back((l + 1) % static_cast<int>(cls));
        }

        auto adv = pgd_attack(toy, batch, cfg);
        for (int64_t i = 0; i < adv.eta.numel(); ++i) {
            REQUIRE(std::abs(adv.eta[i]) <= cfg.epsilon + 1e-12);
            REQUIRE(adv.x_adv.data[i] >= 0.0);
            REQUIRE(adv.x_adv.data[i] <= 1.0);
        }
        if (trial % 10 == 0) {
            auto again = pgd_attack(toy, batch, cfg);
            REQUIRE(bitwise_equal(adv.x_adv.data, again.x_adv.data));
        }
        // The as-printed per-step form keeps the box but not the accumulated ball.
        if (trial % 7 == 0) {
            PgdConfig printed = cfg;
            printed.project_single_step = true;
            auto pv = pgd_attack(toy, batch, printed);
            for (int64_t i = 0; i < pv.eta.numel(); ++i) {
                REQUIRE(pv.x_adv.data[i] >= 0.0);
                REQUIRE(pv.x_adv.data[i] <= 1.0);
            }
        }
    }
}

TEST_CASE("pgd direction: untargeted ascends, targeted descends the loss", "[attacks]") {
    Rng rng(7);
    auto toy = random_toy<double>(4, 3, rng);
    auto batch = toy_batch<double>({0.5, 0.5, 0.5, 0.5}, 1, 4, {0});

    auto loss_at = [&](const Tensor<double>& x, const std::vector<int>& labels) {
        Tape<double> t;
        Var<double> xv{&t, t.input(x, false)};
        auto out = toy.forward(t, xv, FwdOpts{});
        return cross_entropy_logits(out.attack_scores, labels).val()[0];
    };

    PgdConfig up;
    up.epsilon = 0.1;
    up.alpha = 0.05;
    up.steps = 4;
    auto adv = pgd_attack(toy, batch, up);
    REQUIRE(loss_at(adv.x_adv.data, batch.labels) > loss_at(batch.data, batch.labels));

    PgdConfig down = up;
    down.targeted = true;
    down.target_or_true_label = {2};
    auto tadv = pgd_attack(toy, batch, down);
    REQUIRE(loss_at(tadv.x_adv.data, {2}) < loss_at(batch.data, {2}));
}

TEST_CASE("pgd attacked accuracy is monotone in the budget", "[attacks]") {
    Rng rng(31);
    auto toy = random_toy<double>(5, 4, rng);
    int64_t n = 200;
    std::vector<double> xs(static_cast<size_t>(n * 5));
    for (auto& v : xs) v = rng.uniform(0.0, 1.0);
    auto batch = toy_batch<double>(xs, n, 5, std::vector<int>(static_cast<size_t>(n), 0));
    batch.labels = toy.score(batch).predicted; // clean accuracy = 1 by construction

    double prev_acc = 1.1;
    for (double eps : {0.0, 0.02, 0.05, 0.08, 0.12}) {
        PgdConfig cfg;
        cfg.epsilon = eps;
        cfg.alpha = eps / 2;
        cfg.steps = 3;
        auto adv = pgd_attack(toy, batch, cfg);
        auto pred = toy.score(adv.x_adv).predicted;
        int64_t ok = 0;
        for (size_t i = 0; i < pred.size(); ++i)
            if (pred[i] == batch.labels[i]) ++ok;
        double acc = static_cast<double>(ok) / static_cast<double>(n);
        REQUIRE(acc <= prev_acc + 0.02);
        prev_acc = acc;
    }
}

TEST_CASE("cw returns eta zero when the input already satisfies the target", "[attacks]") {
    // Weights chosen so class 1 wins at x with a margin above kappa.
    Tensor<double> w = tensor_from<double>({0.2, 1.0, -0.3, 0.8}, {2, 2});
    Tensor<double> b = tensor_from<double>({0.0, 0.4}, {2});
    LinearScoreModel<double> toy(std::move(w), std::move(b));
    auto batch = toy_batch<double>({0.7, 0.6}, 1, 2, {1});

    CwConfig cfg;
    cfg.target_label = {1};
    cfg.confidence_margin = 0.2;
    cfg.inner_iterations = 50;
    cfg.binary_search_steps = 3;
    auto adv = cw_attack(toy, batch, cfg);
    REQUIRE(adv.success[0] == 1);
    REQUIRE(adv.l2_distortion[0] == 0.0);
    REQUIRE(bitwise_equal(adv.x_adv.data, batch.data));
}

TEST_CASE("cw matches the grid-search oracle on the two-pixel model", "[attacks]") {
    const double wo[2][2] = {{2.0, -1.0}, {-1.0, 1.0}};
    const double bo[2] = {0.1, -0.2};
    auto grid = oracle::cw_grid_search(wo, bo, 0.6, 0.4, 1, 0.05, 1e-3);
    REQUIRE(grid.found);

    Tensor<double> w = tensor_from<double>({2.0, -1.0, -1.0, 1.0}, {2, 2}); // [pixel][class]
    Tensor<double> b = tensor_from<double>({0.1, -0.2}, {2});
    LinearScoreModel<double> toy(std::move(w), std::move(b));
    auto batch = toy_batch<double>({0.6, 0.4}, 1, 2, {0});

    CwConfig cfg;
    cfg.target_label = {1};
    cfg.confidence_margin = 0.05;
    cfg.learning_rate = 2e-3;
    cfg.inner_iterations = 2000;
    cfg.binary_search_steps = 12;
    auto adv = cw_attack(toy, batch, cfg);
    REQUIRE(adv.success[0] == 1);
    REQUIRE(std::abs(static_cast<double>(adv.l2_distortion[0]) - grid.best_dist) <= 2e-3);
}

TEST_CASE("cw successes honor the confidence margin", "[attacks]") {
    Rng rng(61);
    int successes = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto toy = random_toy<double>(3, 3, rng);
        std::vector<double> xs = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
        auto batch = toy_batch<double>(xs, 1, 3, {0});
        CwConfig cfg;
        cfg.target_label = {static_cast<int>(rng.uniform_int(0, 2))};
        cfg.confidence_margin = 0.5;
        cfg.inner_iterations = 200;
        cfg.binary_search_steps = 6;
        auto adv = cw_attack(toy, batch, cfg);
        if (!adv.success[0]) continue;
        ++successes;

        Tape<double> t;
        Var<double> xv{&t, t.input(adv.x_adv.data, false)};
        auto out = toy.forward(t, xv, FwdOpts{});
        const Tensor<double>& z = out.attack_scores.val();
        int tgt = cfg.target_label[0];
        double other = -1e300;
        for (int64_t j = 0; j < 3; ++j)
            if (j != tgt) other = std::max(other, z[j]);
        REQUIRE(z[tgt] - other >= 0.5 - 1e-9);
        REQUIRE(adv.x_adv.data[0] >= 0.0);
        REQUIRE(adv.x_adv.data[0] <= 1.0);
    }
    REQUIRE(successes > 0);
}

TEST_CASE("cw is deterministic and boxes its output", "[attacks]") {
    auto caps = build_model<float>(mini_caps_cfg());
    auto batch = random_images<float>(2, 77);
    CwConfig cfg;
    cfg.target_label = random_targets(batch.labels, 10, 3);
    cfg.inner_iterations = 25;
    cfg.binary_search_steps = 2;
    auto a = cw_attack(*caps, batch, cfg);
    auto b = cw_attack(*caps, batch, cfg);
    REQUIRE(bitwise_equal(a.x_adv.data, b.x_adv.data));
    REQUIRE(a.success == b.success);
    for (int64_t i = 0; i < a.x_adv.data.numel(); ++i) {
        REQUIRE(a.x_adv.data[i] >= 0.0f);
        REQUIRE(a.x_adv.data[i] <= 1.0f);
    }
}

TEST_CASE("cw aborts an image on non-finite loss and keeps the original", "[attacks]") {
    // Each class score sums two products of ~1.7e308, overflowing double, so
    // the first objective evaluation is non-finite.
    Tensor<double> w = tensor_from<double>({1.7e308, -1.7e308, 1.7e308, -1.7e308}, {2, 2});
    Tensor<double> b = tensor_from<double>({0.0, 0.0}, {2});
    LinearScoreModel<double> toy(std::move(w), std::move(b));
    auto batch = toy_batch<double>({1.0, 1.0}, 1, 2, {0});

    CwConfig cfg;
    cfg.target_label = {1};
    cfg.inner_iterations = 10;
    cfg.binary_search_steps = 2;
    auto adv = cw_attack(toy, batch, cfg);
    REQUIRE(adv.aborted[0] == 1);
    REQUIRE(adv.success[0] == 0);
    REQUIRE(bitwise_equal(adv.x_adv.data, batch.data));
}

TEST_CASE("attack metrics follow their definitions", "[attacks]") {
    AdversarialBatch<float> b;
    b.x = Tensor<float>({3, 1, 1, 1});
    b.x_adv.data = b.x;
    b.eta = Tensor<float>({3, 1, 1, 1});
    b.success = {1, 1, 0};
    b.l2_distortion = {1.0f, 2.0f, 9.0f};
    b.linf_distortion = {0, 0, 0};
    auto m = attack_metrics(b);
    REQUIRE(m.fooling_rate == Catch::Approx(2.0 / 3.0));
    REQUIRE(m.mean_distortion.has_value());
    REQUIRE(*m.mean_distortion == Catch::Approx(1.5));

    b.success = {1, 1, 1};
    REQUIRE(attack_metrics(b).fooling_rate == 1.0);

    b.success = {0, 0, 0};
    REQUIRE_FALSE(attack_metrics(b).mean_distortion.has_value());

    AdversarialBatch<float> empty;
    REQUIRE_THROWS_AS(attack_metrics(empty), std::invalid_argument);
}

TEST_CASE("adversarial batches round-trip through disk", "[attacks]") {
    Rng rng(13);
    auto toy = random_toy<float>(4, 3, rng);
    auto batch = toy_batch<float>({0.3f, 0.6f, 0.2f, 0.9f, 0.8f, 0.1f, 0.7f, 0.4f}, 2, 4, {0, 1});
    PgdConfig cfg;
    cfg.epsilon = 0.1;
    cfg.alpha = 0.05;
    cfg.steps = 2;
    cfg.seed = 42;
    auto adv = pgd_attack(toy, batch, cfg, "model-hash-123");

    auto dir = (std::filesystem::temp_directory_path() / "robcaps_test_advbatch").string();
    std::filesystem::remove_all(dir);
    save_adversarial_batch(adv, dir, pgd_config_json(cfg));
    auto back = load_adversarial_batch<float>(dir);

    REQUIRE(bitwise_equal(back.x, adv.x));
    REQUIRE(bitwise_equal(back.x_adv.data, adv.x_adv.data));
    REQUIRE(bitwise_equal(back.eta, adv.eta));
    REQUIRE(back.x_adv.labels == adv.x_adv.labels);
    REQUIRE(back.targets == adv.targets);
    REQUIRE(back.success == adv.success);
    REQUIRE(back.l2_distortion == adv.l2_distortion);
    REQUIRE(back.source_model_id == "model-hash-123");
    REQUIRE(back.attack_kind == "pgd");
    REQUIRE(back.seed == 42);

    nlohmann::json m = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
    REQUIRE(m["config"]["epsilon"].get<double>() == 0.1);
    std::filesystem::remove_all(dir);
}

TEST_CASE("random target draw avoids the true label and is seeded", "[attacks]") {
    std::vector<int> labels = {0, 3, 9, 5, 5, 1};
    auto a = random_targets(labels, 10, 7);
    auto b = random_targets(labels, 10, 7);
    auto c = random_targets(labels, 10, 8);
    REQUIRE(a == b);
    REQUIRE(a != c);
    for (size_t i = 0; i < labels.size(); ++i) {
        REQUIRE(a[i] != labels[i]);
        REQUIRE(a[i] >= 0);
        REQUIRE(a[i] <= 9);
    }
}
