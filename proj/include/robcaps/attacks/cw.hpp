#pragma once

#include "robcaps/attacks/adversarial.hpp"
#include "robcaps/core/optim.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Carlini-Wagner L2, targeted. Minimizes ||eta||^2 + c * max(G - Z_t, -kappa)
// where Z are the model's attack scores (logits for CNNs, capsule lengths for
// capsule models) and G is the best non-target score, both at x + eta. The
// pixel box is kept by optimizing in tanh space; c is tuned per image by a
// double-on-failure / bisect-on-success search, and the least-distorted
// successful candidate seen anywhere in the search is returned.
// ---------------------------------------------------------------------------

struct CwConfig {
    double initial_c = 1e-2;
    int binary_search_steps = 10;
    int inner_iterations = 1000;
    double confidence_margin = 0.0; // kappa, in score units
    double learning_rate = 1e-2;
    std::vector<int> target_label; // per image, required
    // The distance term as optimized; the true L2 norm is always what is
    // reported and compared for candidate selection.
    bool squared_distance_term = true;
    uint64_t seed = 0; // recorded in outputs; the optimizer itself is deterministic

    void validate() const {
        if (!(initial_c > 0.0)) throw std::invalid_argument("cw: initial_c must be > 0");
        if (binary_search_steps < 1) throw std::invalid_argument("cw: binary_search_steps must be >= 1");
        if (inner_iterations < 1) throw std::invalid_argument("cw: inner_iterations must be >= 1");
        if (!(confidence_margin >= 0.0)) throw std::invalid_argument("cw: confidence_margin must be >= 0");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("cw: learning_rate must be > 0");
    }
};

inline nlohmann::json cw_config_json(const CwConfig& c) {
    nlohmann::json j;
    j["initial_c"] = c.initial_c;
    j["binary_search_steps"] = c.binary_search_steps;
    j["inner_iterations"] = c.inner_iterations;
    j["confidence_margin"] = c.confidence_margin;
    j["learning_rate"] = c.learning_rate;
    j["squared_distance_term"] = c.squared_distance_term;
    return j;
}

template <class T>
AdversarialBatch<T> cw_attack(ModelBase<T>& model, const ImageBatch<T>& batch, const CwConfig& cfg,
                              const std::string& source_model_id = "") {
    cfg.validate();
    const int64_t n = batch.size();
    if (static_cast<int64_t>(cfg.target_label.size()) != n)
        throw std::invalid_argument("cw: one target label per image required");
    const int64_t px = n ? batch.data.numel() / n : 0;
    const T kappa = static_cast<T>(cfg.confidence_margin);

    std::vector<uint8_t> active(static_cast<size_t>(n), 1), aborted(static_cast<size_t>(n), 0);
    std::vector<uint8_t> have_best(static_cast<size_t>(n), 0);
    std::vector<double> best_dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    Tensor<T> best_x = batch.data; // failures fall back to the original image

    // eta = 0 first: images already scored as the target with margin kappa
    // are their own optimum.
    {
        Tape<T> t;
        Var<T> xv{&t, t.input(batch.data, false)};
        ForwardOut<T> out = model.forward(t, xv, FwdOpts{});
        const Tensor<T>& z = out.attack_scores.val();
        int64_t C = z.dim(1);
        for (int64_t i = 0; i < n; ++i) {
            int tgt = cfg.target_label[static_cast<size_t>(i)];
            T zt = z[i * C + tgt];
            T g = -std::numeric_limits<T>::infinity();
            for (int64_t j = 0; j < C; ++j)
                if (j != tgt) g = std::max(g, z[i * C + j]);
            if (zt - g >= kappa) {
                have_best[static_cast<size_t>(i)] = 1;
                best_dist[static_cast<size_t>(i)] = 0.0;
                active[static_cast<size_t>(i)] = 0;
            }
        }
    }

    // tanh-space start point mapping back to (a clamped copy of) x.
    Tensor<T> w0(batch.data.shape());
    constexpr double kBoxGuard = 1e-6;
    for (int64_t i = 0; i < w0.numel(); ++i) {
        double v = std::clamp(static_cast<double>(batch.data[i]), kBoxGuard, 1.0 - kBoxGuard);
        w0[i] = static_cast<T>(std::atanh(2.0 * v - 1.0));
    }

    std::vector<double> c(static_cast<size_t>(n), cfg.initial_c);
    std::vector<double> last_fail(static_cast<size_t>(n), 0.0);

    for (int bs = 0; bs < cfg.binary_search_steps; ++bs) {
        bool any = false;
        for (auto a : active) any = any || a;
        if (!any) break;

        Tensor<T> w = w0;
        Adam<T> adam(cfg.learning_rate);
        std::vector<uint8_t> found(static_cast<size_t>(n), 0);
        Tensor<T> c_t({n});
        for (int64_t i = 0; i < n; ++i) c_t[i] = static_cast<T>(c[static_cast<size_t>(i)]);

        for (int it = 0; it < cfg.inner_iterations; ++it) {
            Tape<T> t;
            Var<T> wv{&t, t.input(w, true)};
            Var<T> xa = scale(add_scalar(tanh_(wv), T(1)), T(0.5));
            ForwardOut<T> out = model.forward(t, xa, FwdOpts{});
            Var<T> zt = take_label(out.attack_scores, cfg.target_label);
            Var<T> g = max_excluding(out.attack_scores, cfg.target_label);
            Var<T> hinge = maximum_scalar(sub(g, zt), -kappa);
            Var<T> xc{&t, t.input(batch.data, false)};
            Var<T> eta = sub(xa, xc);
            Var<T> l2sq = reduce_sum(square(reshape(eta, {n, px})), 1);
            Var<T> dist_term = cfg.squared_distance_term ? l2sq : sqrt_(add_scalar(l2sq, T(1e-12)));
            Var<T> cc{&t, t.input(c_t, false)};
            Var<T> obj = add(dist_term, mul(cc, hinge));
            Var<T> total = reduce_sum_all(obj);
            t.backward(total.id);

            const Tensor<T>& xa_v = xa.val();
            const Tensor<T>& zt_v = zt.val();
            const Tensor<T>& g_v = g.val();
            const Tensor<T>& l2_v = l2sq.val();
            const Tensor<T>& obj_v = obj.val();
            for (int64_t i = 0; i < n; ++i) {
                if (!active[static_cast<size_t>(i)]) continue;
                if (!std::isfinite(static_cast<double>(obj_v[i]))) {
                    aborted[static_cast<size_t>(i)] = 1;
                    active[static_cast<size_t>(i)] = 0;
                    continue;
                }
                if (zt_v[i] - g_v[i] >= kappa) {
                    found[static_cast<size_t>(i)] = 1;
                    double dist = std::sqrt(static_cast<double>(l2_v[i]));
                    if (dist < best_dist[static_cast<size_t>(i)]) {
                        best_dist[static_cast<size_t>(i)] = dist;
                        have_best[static_cast<size_t>(i)] = 1;
                        for (int64_t p = 0; p < px; ++p) best_x[i * px + p] = xa_v[i * px + p];
                    }
                }
            }

            Tensor<T> grad = t.grad(wv.id);
            for (int64_t i = 0; i < n; ++i)
                if (!active[static_cast<size_t>(i)])
                    for (int64_t p = 0; p < px; ++p) grad[i * px + p] = T(0);
            adam.step({{&w, &grad}});
            for (int64_t i = 0; i < n; ++i)
                if (!active[static_cast<size_t>(i)])
                    for (int64_t p = 0; p < px; ++p) w[i * px + p] = w0[i * px + p];
        }

        for (int64_t i = 0; i < n; ++i) {
            size_t s = static_cast<size_t>(i);
            if (!active[s]) continue;
            if (found[s]) {
                c[s] = 0.5 * (c[s] + last_fail[s]);
            } else {
                last_fail[s] = c[s];
                c[s] *= 2.0;
            }
        }
    }

    AdversarialBatch<T> out;
    out.x = batch.data;
    out.x_adv.data = Tensor<T>(batch.data.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t p = 0; p < px; ++p)
            out.x_adv.data[i * px + p] = have_best[static_cast<size_t>(i)] ? best_x[i * px + p]
                                                                           : batch.data[i * px + p];
    out.x_adv.labels = batch.labels;
    out.x_adv.dataset_id = batch.dataset_id;
    out.eta = Tensor<T>(batch.data.shape());
    for (int64_t i = 0; i < out.eta.numel(); ++i) out.eta[i] = out.x_adv.data[i] - out.x[i];
    out.targets = cfg.target_label;
    out.success.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.success[static_cast<size_t>(i)] = have_best[static_cast<size_t>(i)];
    out.aborted = aborted;
    out.seed = cfg.seed;
    out.source_model_id = source_model_id;
    out.attack_kind = "cw";
    detail::fill_distortions(out);
    return out;
}

} // namespace robcaps
