#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "robcaps/core/io.hpp"
#include "robcaps/models/common.hpp"

namespace robcaps {

// ---------------------------------------------------------------------------
// Adversarial batch: originals, perturbed images, and per-image outcome.
// This is the unit exchanged between attack runs and transferability
// evaluation, so it round-trips through the array container bit-exactly.
// ---------------------------------------------------------------------------

template <class T>
struct AdversarialBatch {
    Tensor<T> x;          // originals [N,H,W,C]
    ImageBatch<T> x_adv;  // perturbed images; labels stay the true labels
    Tensor<T> eta;        // x_adv.data - x
    std::vector<int> targets;          // attacked label per image (true label when untargeted)
    std::vector<uint8_t> success;      // the attack's misclassification criterion held
    std::vector<T> l2_distortion;      // ||eta||_2 over all pixels of the image
    std::vector<T> linf_distortion;
    std::vector<uint8_t> aborted;      // optimizer hit a non-finite loss for this image
    std::string source_model_id;       // checkpoint hash of the attacked model
    std::string attack_kind;           // "pgd" | "fgsm" | "cw"
    uint64_t seed = 0;

    int64_t size() const { return x.rank() ? x.dim(0) : 0; }
};

struct AttackMetrics {
    double fooling_rate = 0.0;
    std::optional<double> mean_distortion; // over successful images; absent if none
};

template <class T>
AttackMetrics attack_metrics(const AdversarialBatch<T>& b) {
    int64_t n = b.size();
    if (n == 0) throw std::invalid_argument("attack_metrics: empty batch");
    int64_t hits = 0;
    double dist = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (!b.success[static_cast<size_t>(i)]) continue;
        ++hits;
        dist += static_cast<double>(b.l2_distortion[static_cast<size_t>(i)]);
    }
    AttackMetrics m;
    m.fooling_rate = static_cast<double>(hits) / static_cast<double>(n);
    if (hits > 0) m.mean_distortion = dist / static_cast<double>(hits);
    return m;
}

/// Uniform target draw over the classes other than each image's true label.
inline std::vector<int> random_targets(const std::vector<int>& labels, int num_classes, uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("random_targets: need at least two classes");
    Rng rng(seed);
    std::vector<int> t(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        int draw = rng.uniform_int(0, num_classes - 2);
        t[i] = draw >= labels[i] ? draw + 1 : draw;
    }
    return t;
}

// ---------------------------------------------------------------------------
// The white-box loss both gradient attacks differentiate: margin loss on
// capsule confidences, cross-entropy on CNN logits.
// ---------------------------------------------------------------------------

template <class T>
Var<T> classification_loss(ModelBase<T>& m, ForwardOut<T>& out, const std::vector<int>& labels) {
    if (m.is_capsule()) return margin_loss(out.confidences, labels);
    return cross_entropy_logits(out.attack_scores, labels);
}

/// d(loss)/d(pixels) for one batch, at eval-mode statistics.
template <class T>
Tensor<T> input_gradient(ModelBase<T>& m, const Tensor<T>& x, const std::vector<int>& labels) {
    Tape<T> t;
    Var<T> xv{&t, t.input(x, true)};
    ForwardOut<T> out = m.forward(t, xv, FwdOpts{});
    Var<T> loss = classification_loss(m, out, labels);
    t.backward(loss.id);
    return t.grad(xv.id);
}

// ---------------------------------------------------------------------------
// Serialization: arrays.rcat + manifest.json in one directory.
// ---------------------------------------------------------------------------

template <class T>
void save_adversarial_batch(const AdversarialBatch<T>& b, const std::string& dir,
                            const nlohmann::json& config = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    int64_t n = b.size();

    auto ints = [](const std::vector<int>& v) {
        Tensor<int32_t> t({static_cast<int64_t>(v.size())});
        for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
        return t;
    };
    auto bytes = [](const std::vector<uint8_t>& v) {
        Tensor<uint8_t> t({static_cast<int64_t>(v.size())});
        for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
        return t;
    };
    auto reals = [](const std::vector<T>& v) {
        Tensor<T> t({static_cast<int64_t>(v.size())});
        for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
        return t;
    };

    ArrayContainer c;
    c.put("x", b.x);
    c.put("x_adv", b.x_adv.data);
    c.put("eta", b.eta);
    c.put("labels", ints(b.x_adv.labels));
    c.put("targets", ints(b.targets));
    c.put("success", bytes(b.success));
    c.put("l2_distortion", reals(b.l2_distortion));
    c.put("linf_distortion", reals(b.linf_distortion));
    c.put("aborted", bytes(b.aborted));
    std::vector<uint8_t> raw = c.serialize();
    write_file_bytes_atomic((fs::path(dir) / "arrays.rcat").string(), raw.data(), raw.size());

    nlohmann::json m;
    m["format_version"] = 1;
    m["attack_kind"] = b.attack_kind;
    m["source_model_id"] = b.source_model_id;
    m["dataset"] = to_string(b.x_adv.dataset_id);
    m["seed"] = b.seed;
    m["image_count"] = n;
    m["config"] = config;
    m["arrays_hash"] = hash_hex(fnv1a(raw.data(), raw.size()));
    AttackMetrics metrics = n ? attack_metrics(b) : AttackMetrics{};
    m["fooling_rate"] = metrics.fooling_rate;
    if (metrics.mean_distortion) m["mean_distortion"] = *metrics.mean_distortion;
    write_text_file_atomic((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

template <class T>
AdversarialBatch<T> load_adversarial_batch(const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json m = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
    ArrayContainer c = ArrayContainer::load((fs::path(dir) / "arrays.rcat").string());

    AdversarialBatch<T> b;
    b.x = c.get<T>("x");
    b.x_adv.data = c.get<T>("x_adv");
    b.x_adv.dataset_id = dataset_from_string(m.at("dataset").get<std::string>());
    b.eta = c.get<T>("eta");
    Tensor<int32_t> labels = c.get<int32_t>("labels");
    Tensor<int32_t> targets = c.get<int32_t>("targets");
    for (int64_t i = 0; i < labels.numel(); ++i) b.x_adv.labels.push_back(labels[i]);
    for (int64_t i = 0; i < targets.numel(); ++i) b.targets.push_back(targets[i]);
    Tensor<uint8_t> success = c.get<uint8_t>("success");
    Tensor<uint8_t> aborted = c.get<uint8_t>("aborted");
    for (int64_t i = 0; i < success.numel(); ++i) b.success.push_back(success[i]);
    for (int64_t i = 0; i < aborted.numel(); ++i) b.aborted.push_back(aborted[i]);
    Tensor<T> l2 = c.get<T>("l2_distortion");
    Tensor<T> linf = c.get<T>("linf_distortion");
    for (int64_t i = 0; i < l2.numel(); ++i) b.l2_distortion.push_back(l2[i]);
    for (int64_t i = 0; i < linf.numel(); ++i) b.linf_distortion.push_back(linf[i]);
    b.source_model_id = m.at("source_model_id").get<std::string>();
    b.attack_kind = m.at("attack_kind").get<std::string>();
    b.seed = m.at("seed").get<uint64_t>();
    return b;
}

namespace detail {

template <class T>
void fill_distortions(AdversarialBatch<T>& b) {
    int64_t n = b.size();
    int64_t px = n ? b.x.numel() / n : 0;
    b.l2_distortion.assign(static_cast<size_t>(n), T(0));
    b.linf_distortion.assign(static_cast<size_t>(n), T(0));
    for (int64_t i = 0; i < n; ++i) {
        double s2 = 0.0, mx = 0.0;
        for (int64_t p = 0; p < px; ++p) {
            double d = static_cast<double>(b.eta[i * px + p]);
            s2 += d * d;
            mx = std::max(mx, std::abs(d));
        }
        b.l2_distortion[static_cast<size_t>(i)] = static_cast<T>(std::sqrt(s2));
        b.linf_distortion[static_cast<size_t>(i)] = static_cast<T>(mx);
    }
}

} // namespace detail

} // namespace robcaps
