#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "robcaps/caps/routing.hpp"
#include "robcaps/caps/squash.hpp"
#include "robcaps/core/nn_ops.hpp"
#include "robcaps/core/rng.hpp"

namespace robcaps {

enum class ArchitectureId { SHALLOWCAPS, DEEPCAPS, CNN_BASELINE, RESNET20 };
enum class RoutingVariant { DYNAMIC, UNIT, SELF };
enum class DatasetId { MNIST40, GTSRB, CIFAR10, AFFNIST, AFFGTSRB, AFFCIFAR };

inline std::string to_string(ArchitectureId a) {
    switch (a) {
        case ArchitectureId::SHALLOWCAPS: return "shallowcaps";
        case ArchitectureId::DEEPCAPS: return "deepcaps";
        case ArchitectureId::CNN_BASELINE: return "cnn_baseline";
        case ArchitectureId::RESNET20: return "resnet20";
    }
    return "?";
}
inline std::string to_string(RoutingVariant r) {
    switch (r) {
        case RoutingVariant::DYNAMIC: return "dynamic";
        case RoutingVariant::UNIT: return "unit";
        case RoutingVariant::SELF: return "self";
    }
    return "?";
}
inline std::string to_string(DatasetId d) {
    switch (d) {
        case DatasetId::MNIST40: return "mnist40";
        case DatasetId::GTSRB: return "gtsrb";
        case DatasetId::CIFAR10: return "cifar10";
        case DatasetId::AFFNIST: return "affnist";
        case DatasetId::AFFGTSRB: return "affgtsrb";
        case DatasetId::AFFCIFAR: return "affcifar";
    }
    return "?";
}

inline ArchitectureId architecture_from_string(const std::string& s) {
    if (s == "shallowcaps") return ArchitectureId::SHALLOWCAPS;
    if (s == "deepcaps") return ArchitectureId::DEEPCAPS;
    if (s == "cnn_baseline") return ArchitectureId::CNN_BASELINE;
    if (s == "resnet20") return ArchitectureId::RESNET20;
    throw std::invalid_argument("unknown architecture: " + s);
}
inline RoutingVariant routing_from_string(const std::string& s) {
    if (s == "dynamic") return RoutingVariant::DYNAMIC;
    if (s == "unit") return RoutingVariant::UNIT;
    if (s == "self") return RoutingVariant::SELF;
    throw std::invalid_argument("unknown routing variant: " + s);
}
inline DatasetId dataset_from_string(const std::string& s) {
    if (s == "mnist40") return DatasetId::MNIST40;
    if (s == "gtsrb") return DatasetId::GTSRB;
    if (s == "cifar10") return DatasetId::CIFAR10;
    if (s == "affnist") return DatasetId::AFFNIST;
    if (s == "affgtsrb") return DatasetId::AFFGTSRB;
    if (s == "affcifar") return DatasetId::AFFCIFAR;
    throw std::invalid_argument("unknown dataset: " + s);
}

struct DatasetGeometry {
    int64_t height, width, channels;
    int num_classes;
};

inline DatasetGeometry dataset_geometry(DatasetId d) {
    switch (d) {
        case DatasetId::MNIST40:
        case DatasetId::AFFNIST: return {40, 40, 1, 10};
        case DatasetId::GTSRB:
        case DatasetId::AFFGTSRB: return {32, 32, 3, 43};
        case DatasetId::CIFAR10:
        case DatasetId::AFFCIFAR: return {64, 64, 3, 10};
    }
    throw std::invalid_argument("unknown dataset id");
}

/// A batch of images [N,H,W,C] with values in [0,1] and integer labels.
template <class T>
struct ImageBatch {
    Tensor<T> data;
    std::vector<int> labels;
    DatasetId dataset_id = DatasetId::MNIST40;

    int64_t size() const { return data.rank() ? data.dim(0) : 0; }

    void validate() const {
        if (data.rank() != 4) throw std::invalid_argument("ImageBatch: data must be [N,H,W,C]");
        if (static_cast<int64_t>(labels.size()) != data.dim(0))
            throw std::invalid_argument("ImageBatch: label count mismatch");
        DatasetGeometry g = dataset_geometry(dataset_id);
        if (data.dim(1) != g.height || data.dim(2) != g.width || data.dim(3) != g.channels)
            throw std::invalid_argument("ImageBatch: geometry mismatch for " + to_string(dataset_id));
        for (int64_t i = 0; i < data.numel(); ++i)
            if (!(data[i] >= T(0) && data[i] <= T(1)))
                throw std::invalid_argument("ImageBatch: pixel outside [0,1]");
    }
};

struct ClassScores {
    Tensor<float> confidences; // [N, num_classes]
    std::vector<int> predicted;
};

inline std::vector<int> argmax_rows(const Tensor<float>& conf) {
    int64_t n = conf.dim(0), c = conf.dim(1);
    std::vector<int> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (conf[i * c + j] > conf[i * c + best]) best = static_cast<int>(j);
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

/// Named parameters (trained) and buffers (running statistics), in stable
/// registration order. Checkpoints serialize both by name.
template <class T>
struct ParamStore {
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>>> buffers;

    Tensor<T>& add_param(const std::string& name, Tensor<T> init) {
        for (auto& [n, _] : params)
            if (n == name) throw std::logic_error("duplicate param: " + name);
        params.emplace_back(name, std::move(init));
        return params.back().second;
    }
    Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
        for (auto& [n, _] : buffers)
            if (n == name) throw std::logic_error("duplicate buffer: " + name);
        buffers.emplace_back(name, std::move(init));
        return buffers.back().second;
    }
    Tensor<T>* find_param(const std::string& name) {
        for (auto& [n, v] : params)
            if (n == name) return &v;
        return nullptr;
    }
    Tensor<T>* find_buffer(const std::string& name) {
        for (auto& [n, v] : buffers)
            if (n == name) return &v;
        return nullptr;
    }
    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [_, v] : params) n += v.numel();
        return n;
    }
};

/// Initializers fixed by the experiment seed: truncated normal (std 0.02) for
/// capsule transformation matrices, fan-in-scaled uniform for conv/dense.
template <class T>
Tensor<T> init_trunc_normal(Shape s, Rng& rng, double std_dev = 0.02) {
    Tensor<T> t(std::move(s));
    rng.fill_truncated_normal(t, 0.0, std_dev);
    return t;
}

template <class T>
Tensor<T> init_fanin_uniform(Shape s, int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(s));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng.fill_uniform(t, -bound, bound);
    return t;
}

// ---------------------------------------------------------------------------
// Model contract
// ---------------------------------------------------------------------------

struct ModelConfig {
    ArchitectureId arch = ArchitectureId::SHALLOWCAPS;
    RoutingVariant routing = RoutingVariant::DYNAMIC;
    DatasetId dataset = DatasetId::MNIST40;
    std::map<std::string, int64_t> overrides; // named width/kernel knobs
    uint64_t seed = 0;

    int64_t knob(const std::string& name, int64_t fallback) const {
        auto it = overrides.find(name);
        return it == overrides.end() ? fallback : it->second;
    }
};

struct FwdOpts {
    bool training = false;         // batch-norm mode and buffer refresh
    bool params_need_grad = false; // bind parameters as differentiable inputs
};

template <class T>
struct ForwardOut {
    Var<T> confidences;                 // [N, num_classes]; in [0,1] per class
    Var<T> attack_scores;               // pre-softmax logits for CNNs, capsule lengths for capsule models
    std::optional<Var<T>> class_poses;  // [N, num_classes, caps_dim] for capsule models
};

/// Map from parameter name to its bound tape input for one forward pass.
template <class T>
struct BoundParams {
    std::vector<std::pair<std::string, Var<T>>> vars; // store order
    std::unordered_map<std::string, size_t> index;

    Var<T> at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("unbound param: " + name);
        return vars[it->second].second;
    }
};

template <class T>
class ModelBase {
public:
    explicit ModelBase(ModelConfig cfg) : cfg_(std::move(cfg)), geom_(dataset_geometry(cfg_.dataset)) {}
    virtual ~ModelBase() = default;

    const ModelConfig& config() const { return cfg_; }
    const DatasetGeometry& geometry() const { return geom_; }
    int num_classes() const { return geom_.num_classes; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }

    virtual bool is_capsule() const = 0;
    virtual bool has_decoder() const { return is_capsule(); }

    /// Builds the scoring graph on the tape. Also binds every parameter as a
    /// tape input (differentiable iff opts.params_need_grad); the binding used
    /// by the most recent forward is kept for the optimizer to read gradients.
    virtual ForwardOut<T> forward(Tape<T>& t, Var<T> x, const FwdOpts& opts) = 0;

    /// Reconstruction decoder on masked class poses; capsule models only.
    virtual Var<T> decode(Tape<T>& t, Var<T> class_poses, const std::vector<int>& labels) {
        (void)t;
        (void)class_poses;
        (void)labels;
        throw std::logic_error(to_string(cfg_.arch) + " has no decoder");
    }

    const BoundParams<T>& last_bound() const { return bound_; }

    /// Inference: scores + argmax predictions, no graph retained by the caller.
    ClassScores score(const ImageBatch<T>& batch) {
        Tape<T> tape;
        Var<T> x{&tape, tape.input(batch.data, false)};
        ForwardOut<T> out = forward(tape, x, FwdOpts{});
        Tensor<float> conf = out.confidences.val().template cast<float>();
        std::vector<int> pred = argmax_rows(conf);
        return {std::move(conf), std::move(pred)};
    }

protected:
    BoundParams<T>& bind(Tape<T>& t, bool needs_grad) {
        bound_.vars.clear();
        bound_.index.clear();
        bound_.vars.reserve(store_.params.size());
        for (auto& [name, tensor] : store_.params) {
            Var<T> v{&t, t.input(tensor, needs_grad)};
            bound_.index[name] = bound_.vars.size();
            bound_.vars.emplace_back(name, v);
        }
        return bound_;
    }

    ModelConfig cfg_;
    DatasetGeometry geom_;
    ParamStore<T> store_;
    BoundParams<T> bound_;
};

// ---------------------------------------------------------------------------
// Shared layer builders
// ---------------------------------------------------------------------------

namespace layers {

/// Registers conv weights (+bias) under `name/w`, `name/b`.
template <class T>
void register_conv(ParamStore<T>& s, const std::string& name, int64_t kh, int64_t kw, int64_t cin,
                   int64_t cout, Rng& rng) {
    s.add_param(name + "/w", init_fanin_uniform<T>({kh, kw, cin, cout}, kh * kw * cin, rng));
    s.add_param(name + "/b", Tensor<T>({cout}));
}

template <class T>
Var<T> apply_conv(const BoundParams<T>& b, const std::string& name, Var<T> x, int64_t stride, int64_t pad) {
    return add(conv2d(x, b.at(name + "/w"), stride, pad), b.at(name + "/b"));
}

template <class T>
void register_dense(ParamStore<T>& s, const std::string& name, int64_t in, int64_t out, Rng& rng) {
    s.add_param(name + "/w", init_fanin_uniform<T>({in, out}, in, rng));
    s.add_param(name + "/b", Tensor<T>({out}));
}

template <class T>
Var<T> apply_dense(const BoundParams<T>& b, const std::string& name, Var<T> x) {
    return dense(x, b.at(name + "/w"), b.at(name + "/b"));
}

template <class T>
void register_bn(ParamStore<T>& s, const std::string& name, int64_t c) {
    s.add_param(name + "/gamma", Tensor<T>::full({c}, T(1)));
    s.add_param(name + "/beta", Tensor<T>({c}));
    s.add_buffer(name + "/running_mean", Tensor<T>({c}));
    s.add_buffer(name + "/running_var", Tensor<T>::full({c}, T(1)));
}

template <class T>
Var<T> apply_bn(ParamStore<T>& s, const BoundParams<T>& b, const std::string& name, Var<T> x, bool training) {
    BatchNormBuffers<T> bufs{s.find_buffer(name + "/running_mean"), s.find_buffer(name + "/running_var"), T(0.1)};
    return batchnorm(x, b.at(name + "/gamma"), b.at(name + "/beta"), bufs, training);
}

/// One-hot mask [N, num_classes, 1] for decoder label masking.
template <class T>
Var<T> label_mask(Tape<T>& t, const std::vector<int>& labels, int num_classes) {
    Tensor<T> m({static_cast<int64_t>(labels.size()), num_classes, 1});
    for (size_t n = 0; n < labels.size(); ++n) m[static_cast<int64_t>(n) * num_classes + labels[n]] = T(1);
    return {&t, t.input(std::move(m), false)};
}

} // namespace layers

} // namespace robcaps
