#pragma once

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "robcaps/core/io.hpp"
#include "robcaps/models/cnn_baseline.hpp"
#include "robcaps/models/deepcaps.hpp"
#include "robcaps/models/resnet20.hpp"
#include "robcaps/models/shallowcaps.hpp"

namespace robcaps {

template <class T>
std::unique_ptr<ModelBase<T>> build_model(const ModelConfig& cfg) {
    switch (cfg.arch) {
        case ArchitectureId::SHALLOWCAPS: return std::make_unique<ShallowCapsModel<T>>(cfg);
        case ArchitectureId::DEEPCAPS: return std::make_unique<DeepCapsModel<T>>(cfg);
        case ArchitectureId::CNN_BASELINE: return std::make_unique<CnnBaselineModel<T>>(cfg);
        case ArchitectureId::RESNET20: return std::make_unique<ResNet20Model<T>>(cfg);
    }
    throw std::invalid_argument("unknown architecture id");
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding manifest.json (configuration + provenance)
// and params.rcat (every parameter and buffer by name). Round-trips bit-exactly.
// ---------------------------------------------------------------------------

template <class T>
void save_checkpoint(const ModelBase<T>& model, const std::string& dir,
                     const nlohmann::json& provenance = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    ArrayContainer c;
    for (const auto& [name, tensor] : model.store().params) c.put("param/" + name, tensor);
    for (const auto& [name, tensor] : model.store().buffers) c.put("buffer/" + name, tensor);
    std::vector<uint8_t> bytes = c.serialize();
    std::string params_path = (fs::path(dir) / "params.rcat").string();
    write_file_bytes_atomic(params_path, bytes.data(), bytes.size());

    const ModelConfig& cfg = model.config();
    nlohmann::json m;
    m["format_version"] = 1;
    m["architecture"] = to_string(cfg.arch);
    m["routing"] = to_string(cfg.routing);
    m["dataset"] = to_string(cfg.dataset);
    m["num_classes"] = model.num_classes();
    m["has_decoder"] = model.has_decoder();
    m["seed"] = cfg.seed;
    m["param_count"] = model.store().total_params();
    m["params_file"] = "params.rcat";
    m["params_hash"] = hash_hex(fnv1a(bytes.data(), bytes.size()));
    nlohmann::json ov = nlohmann::json::object();
    for (const auto& [k, v] : cfg.overrides) ov[k] = v;
    m["overrides"] = ov;
    m["provenance"] = provenance;
    write_text_file_atomic((fs::path(dir) / "manifest.json").string(), m.dump(2) + "\n");
}

inline nlohmann::json read_checkpoint_manifest(const std::string& dir) {
    std::string text = read_text_file((std::filesystem::path(dir) / "manifest.json").string());
    return nlohmann::json::parse(text);
}

inline ModelConfig model_config_from_manifest(const nlohmann::json& m) {
    ModelConfig cfg;
    cfg.arch = architecture_from_string(m.at("architecture").get<std::string>());
    cfg.routing = routing_from_string(m.at("routing").get<std::string>());
    cfg.dataset = dataset_from_string(m.at("dataset").get<std::string>());
    cfg.seed = m.at("seed").get<uint64_t>();
    for (const auto& [k, v] : m.at("overrides").items()) cfg.overrides[k] = v.get<int64_t>();
    return cfg;
}

/// Hash of the checkpoint's parameter file, the identity used in provenance records.
inline std::string checkpoint_hash(const std::string& dir) {
    return read_checkpoint_manifest(dir).at("params_hash").get<std::string>();
}

template <class T>
std::unique_ptr<ModelBase<T>> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json m = read_checkpoint_manifest(dir);
    if (m.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint format in " + dir);
    ModelConfig cfg = model_config_from_manifest(m);
    std::unique_ptr<ModelBase<T>> model = build_model<T>(cfg);

    ArrayContainer c = ArrayContainer::load((fs::path(dir) / m.at("params_file").get<std::string>()).string());
    for (auto& [name, tensor] : model->store().params) {
        Tensor<T> loaded = c.get<T>("param/" + name);
        if (loaded.shape() != tensor.shape())
            throw std::runtime_error("checkpoint shape mismatch for param " + name);
        tensor = std::move(loaded);
    }
    for (auto& [name, tensor] : model->store().buffers) {
        Tensor<T> loaded = c.get<T>("buffer/" + name);
        if (loaded.shape() != tensor.shape())
            throw std::runtime_error("checkpoint shape mismatch for buffer " + name);
        tensor = std::move(loaded);
    }
    return model;
}

} // namespace robcaps
