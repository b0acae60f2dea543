#pragma once

#include <opera/attention.hpp>
#include <opera/io.hpp>

#include <json.hpp>

#include <stdexcept>
#include <string>

namespace opera {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, input_dim, dim, layers, classes, use_pe, ln_eps)

// Checkpoint container:
//   {"format": "opera-checkpoint", "version": 1,
//    "model_config": {...},
//    "parameters": [{"name": "layer0.w_qkv", "shape": [in, 3d], "values": [...]}, ...],
//    "meta": {...}}
// Parameter order is OperaModel::parameters() order. Values use shortest
// round-trip decimal form, so a reload reproduces every double exactly.
inline constexpr const char* kCheckpointFormat = "opera-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const OperaModel& model, const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["model_config"] = model.config();
    auto& params = j["parameters"] = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        params.push_back({{"name", p.name},
                          {"shape", p.tensor.shape()},
                          {"values", std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())}});
    }
    j["meta"] = meta;
    return j;
}

inline OperaModel checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kCheckpointFormat) throw std::runtime_error("checkpoint: unrecognized format tag");
    if (j.value("version", 0) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    const auto cfg = j.at("model_config").get<ModelConfig>();
    OperaModel model = OperaModel::initialize(cfg, 0);
    const auto expected = model.parameters();
    const auto& stored = j.at("parameters");
    if (stored.size() != expected.size()) {
        throw std::runtime_error("checkpoint: " + std::to_string(stored.size()) + " parameter blocks, model has " +
                                 std::to_string(expected.size()));
    }
    std::vector<double> flat;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto name = stored[i].at("name").get<std::string>();
        const auto shape = stored[i].at("shape").get<Shape>();
        if (name != expected[i].name || shape != expected[i].tensor.shape()) {
            throw std::runtime_error("checkpoint: block " + std::to_string(i) + " is " + name + shape_string(shape) +
                                     ", expected " + expected[i].name + shape_string(expected[i].tensor.shape()));
        }
        const auto values = stored[i].at("values").get<std::vector<double>>();
        if (values.size() != shape_numel(shape)) throw std::runtime_error("checkpoint: block " + name + " size mismatch");
        flat.insert(flat.end(), values.begin(), values.end());
    }
    model.set_flat_parameters(flat);
    return model;
}

inline void save_checkpoint(const std::string& path, const OperaModel& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    write_json_file(path, checkpoint_to_json(model, meta), false);
}

inline OperaModel load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace opera
