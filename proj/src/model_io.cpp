#include "mixquant/model_io.hpp"

#include <bit>
#include <fstream>
#include <set>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace mixquant {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string_view layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Linear: return "linear";
        case LayerKind::ActivationFn: return "activation-fn";
    }
    throw DataError("layer_kind_name: invalid kind");
}

LayerKind layer_kind_from_name(std::string_view name) {
    if (name == "linear") return LayerKind::Linear;
    if (name == "activation-fn") return LayerKind::ActivationFn;
    throw DataError("unknown layer kind '" + std::string(name) + "'");
}

const DenseTensor& Model::tensor(const LayerSpec& layer, const std::string& role) const {
    auto ref = layer.tensors.find(role);
    if (ref == layer.tensors.end()) {
        throw DataError("layer '" + layer.name + "' has no tensor '" + role + "'");
    }
    auto it = tensors.find(ref->second.file);
    if (it == tensors.end()) {
        throw DataError("missing tensor '" + ref->second.file + "' for layer '" +
                        layer.name + "'");
    }
    return it->second;
}

void validate_manifest(const ModelManifest& manifest) {
    std::set<std::string> files;
    const LayerSpec* prev_linear = nullptr;
    for (const LayerSpec& layer : manifest.layers) {
        if (layer.in_features < 1 || layer.out_features < 1) {
            throw DataError("layer '" + layer.name + "' has non-positive feature counts");
        }
        if (layer.kind == LayerKind::Linear) {
            if (prev_linear && prev_linear->out_features != layer.in_features) {
                throw DataError("layer '" + layer.name + "' expects " +
                                std::to_string(layer.in_features) +
                                " inputs but '" + prev_linear->name + "' produces " +
                                std::to_string(prev_linear->out_features));
            }
            prev_linear = &layer;
        }
        for (const auto& [role, ref] : layer.tensors) {
            if (!files.insert(ref.file).second) {
                throw DataError("tensor file '" + ref.file + "' referenced twice");
            }
            for (std::int64_t dim : ref.shape) {
                if (dim < 1) {
                    throw DataError("tensor '" + ref.file + "' declares dimension < 1");
                }
            }
        }
    }
}

namespace {

ordered_json tensor_ref_to_json(const TensorRef& ref) {
    return ordered_json{{"file", ref.file},
                        {"dtype", dtype_name(ref.dtype)},
                        {"shape", ref.shape}};
}

TensorRef tensor_ref_from_json(const ordered_json& j) {
    TensorRef ref;
    ref.file = j.at("file").get<std::string>();
    ref.dtype = dtype_from_name(j.at("dtype").get<std::string>());
    ref.shape = j.at("shape").get<std::vector<std::int64_t>>();
    return ref;
}

} // namespace

void save_tensor_file(const fs::path& path, const DenseTensor& tensor) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<std::uint8_t> load_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw DataError("read failed for '" + path.string() + "'");
    return bytes;
}

void save_model(const Model& model, const fs::path& dir) {
    validate_manifest(model.manifest);
    fs::create_directories(dir);

    ordered_json j;
    j["format"] = "mixquant-model-v1";
    j["model"] = model.manifest.model;
    j["metadata"] = model.manifest.metadata;
    j["layers"] = ordered_json::array();
    for (const LayerSpec& layer : model.manifest.layers) {
        ordered_json jl;
        jl["name"] = layer.name;
        jl["kind"] = layer_kind_name(layer.kind);
        jl["in_features"] = layer.in_features;
        jl["out_features"] = layer.out_features;
        jl["tensors"] = ordered_json::object();
        for (const auto& [role, ref] : layer.tensors) {
            jl["tensors"][role] = tensor_ref_to_json(ref);
            auto it = model.tensors.find(ref.file);
            if (it == model.tensors.end()) {
                throw DataError("missing tensor '" + ref.file + "' for layer '" +
                                layer.name + "'");
            }
            if (it->second.shape != ref.shape || it->second.dtype != ref.dtype) {
                throw DataError("tensor '" + ref.file +
                                "' disagrees with its manifest declaration");
            }
            save_tensor_file(dir / ref.file, it->second);
        }
        j["layers"].push_back(std::move(jl));
    }

    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in '" + dir.string() + "'");
    out << j.dump(2) << "\n";
}

Model load_model(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open '" + manifest_path.string() + "'");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest '" + manifest_path.string() + "': " + e.what());
    }

    Model model;
    try {
        model.manifest.model = j.at("model").get<std::string>();
        if (j.contains("metadata")) {
            model.manifest.metadata =
                j.at("metadata").get<std::map<std::string, std::string>>();
        }
        for (const auto& jl : j.at("layers")) {
            LayerSpec layer;
            layer.name = jl.at("name").get<std::string>();
            layer.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
            layer.in_features = jl.at("in_features").get<std::int64_t>();
            layer.out_features = jl.at("out_features").get<std::int64_t>();
            if (jl.contains("tensors")) {
                for (const auto& [role, jref] : jl.at("tensors").items()) {
                    layer.tensors[role] = tensor_ref_from_json(jref);
                }
            }
            model.manifest.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest '" + manifest_path.string() + "': " + e.what());
    }
    validate_manifest(model.manifest);

    for (const LayerSpec& layer : model.manifest.layers) {
        for (const auto& [role, ref] : layer.tensors) {
            const fs::path file = dir / ref.file;
            if (!fs::exists(file)) {
                throw DataError("missing tensor '" + ref.file + "' for layer '" +
                                layer.name + "'");
            }
            auto bytes = load_file_bytes(file);
            std::int64_t count = 1;
            for (std::int64_t dim : ref.shape) count *= dim;
            const std::int64_t expected = dtype_payload_bytes(ref.dtype, count);
            if (static_cast<std::int64_t>(bytes.size()) != expected) {
                throw DataError("tensor '" + ref.file + "' for layer '" + layer.name +
                                "' is " + std::to_string(bytes.size()) +
                                " bytes but its declared shape needs " +
                                std::to_string(expected));
            }
            model.tensors[ref.file] = make_tensor(ref.shape, ref.dtype, std::move(bytes));
        }
    }
    return model;
}

} // namespace mixquant
