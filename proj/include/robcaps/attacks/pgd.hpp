#pragma once

#include "robcaps/attacks/adversarial.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Projected gradient descent in the L-inf ball: step by alpha * sign(grad),
// project the accumulated perturbation back into the epsilon ball around the
// original image, clip to the pixel box. One step without a random start is
// exactly FGSM.
// ---------------------------------------------------------------------------

struct PgdConfig {
    double epsilon = 0.0; // L-inf radius in pixel units
    double alpha = 0.0;   // per-step size
    int steps = 1;
    bool targeted = false;
    std::vector<int> target_or_true_label; // per image; defaults to batch labels when untargeted
    bool random_start = false;
    uint64_t seed = 0;
    // Compatibility mode: project each step in isolation instead of the
    // accumulated perturbation (the looser one-step-at-a-time reading).
    bool project_single_step = false;

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("pgd: epsilon must be in [0,1]");
        if (!(alpha >= 0.0 && alpha <= epsilon)) throw std::invalid_argument("pgd: need 0 <= alpha <= epsilon");
        if (steps < 1) throw std::invalid_argument("pgd: steps must be >= 1");
    }
};

inline nlohmann::json pgd_config_json(const PgdConfig& c) {
    nlohmann::json j;
    j["epsilon"] = c.epsilon;
    j["alpha"] = c.alpha;
    j["steps"] = c.steps;
    j["targeted"] = c.targeted;
    j["random_start"] = c.random_start;
    j["project_single_step"] = c.project_single_step;
    return j;
}

namespace detail {

template <class T>
T sign_of(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

} // namespace detail

/// The iterate/project/clip engine, independent of any model: `grad_at`
/// returns d(loss)/dx at the given point. Targeted mode descends the loss,
/// untargeted mode ascends it.
template <class T>
Tensor<T> pgd_core(const std::function<Tensor<T>(const Tensor<T>&)>& grad_at, const Tensor<T>& x0,
                   const PgdConfig& cfg) {
    cfg.validate();
    if (cfg.epsilon == 0.0) return x0;
    const double eps = cfg.epsilon;
    const double alpha = cfg.alpha;
    const double dir = cfg.targeted ? -1.0 : 1.0;

    // Update arithmetic runs in double with one rounding to T per step. That
    // rounding can land up to half a T-ulp outside the ball, so the result is
    // nudged back toward the anchor pixel until the perturbation, measured in
    // double, fits the radius exactly.
    auto settle = [eps](double xn, T anchor) {
        T out = static_cast<T>(std::clamp(xn, 0.0, 1.0));
        double x0d = static_cast<double>(anchor);
        while (std::abs(static_cast<double>(out) - x0d) > eps) out = std::nextafter(out, anchor);
        return out;
    };

    Tensor<T> x = x0;
    if (cfg.random_start) {
        Rng rng(cfg.seed);
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] = settle(static_cast<double>(x0[i]) + rng.uniform(-eps, eps), x0[i]);
    }
    for (int step = 0; step < cfg.steps; ++step) {
        Tensor<T> g = grad_at(x);
        if (cfg.project_single_step) {
            for (int64_t i = 0; i < x.numel(); ++i) {
                double delta = std::clamp(alpha * dir * static_cast<double>(detail::sign_of(g[i])), -eps, eps);
                x[i] = static_cast<T>(std::clamp(static_cast<double>(x[i]) + delta, 0.0, 1.0));
            }
        } else {
            for (int64_t i = 0; i < x.numel(); ++i) {
                double x0d = static_cast<double>(x0[i]);
                double moved = static_cast<double>(x[i]) + alpha * dir * static_cast<double>(detail::sign_of(g[i]));
                double diff = moved - x0d;
                // Keep the stepped point bit-exact when the ball does not bind.
                double xn = diff > eps ? x0d + eps : (diff < -eps ? x0d - eps : moved);
                x[i] = settle(xn, x0[i]);
            }
        }
    }
    return x;
}

template <class T>
AdversarialBatch<T> pgd_attack(ModelBase<T>& model, const ImageBatch<T>& batch, const PgdConfig& cfg,
                               const std::string& source_model_id = "") {
    cfg.validate();
    int64_t n = batch.size();
    std::vector<int> attacked = cfg.target_or_true_label;
    if (attacked.empty()) {
        if (cfg.targeted) throw std::invalid_argument("pgd: targeted attack needs target labels");
        attacked = batch.labels;
    }
    if (static_cast<int64_t>(attacked.size()) != n)
        throw std::invalid_argument("pgd: one attacked label per image required");

    auto grad_at = [&](const Tensor<T>& x) { return input_gradient(model, x, attacked); };

    AdversarialBatch<T> out;
    out.x = batch.data;
    out.x_adv.data = cfg.epsilon == 0.0 ? batch.data : pgd_core<T>(grad_at, batch.data, cfg);
    out.x_adv.labels = batch.labels;
    out.x_adv.dataset_id = batch.dataset_id;
    out.eta = Tensor<T>(batch.data.shape());
    for (int64_t i = 0; i < out.eta.numel(); ++i) out.eta[i] = out.x_adv.data[i] - out.x[i];
    out.targets = attacked;
    out.aborted.assign(static_cast<size_t>(n), 0);
    out.seed = cfg.seed;
    out.source_model_id = source_model_id;
    out.attack_kind = cfg.steps == 1 && !cfg.random_start ? "fgsm" : "pgd";
    detail::fill_distortions(out);

    ClassScores scores = model.score(out.x_adv);
    out.success.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int pred = scores.predicted[static_cast<size_t>(i)];
        bool hit = cfg.targeted ? pred == attacked[static_cast<size_t>(i)]
                                : pred != batch.labels[static_cast<size_t>(i)];
        out.success[static_cast<size_t>(i)] = hit ? 1 : 0;
    }
    return out;
}

/// FGSM is the one-step degenerate case of the same code path.
template <class T>
AdversarialBatch<T> fgsm_attack(ModelBase<T>& model, const ImageBatch<T>& batch, double epsilon,
                                const std::string& source_model_id = "") {
    PgdConfig cfg;
    cfg.epsilon = epsilon;
    cfg.alpha = epsilon;
    cfg.steps = 1;
    cfg.random_start = false;
    return pgd_attack(model, batch, cfg, source_model_id);
}

} // namespace robcaps
