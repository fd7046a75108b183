#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mixquant/tensor.hpp"

namespace mixquant {

enum class LayerKind { Linear, ActivationFn };

std::string_view layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(std::string_view name);

struct TensorRef {
    std::string file;
    Dtype dtype = Dtype::F32;
    std::vector<std::int64_t> shape;
};

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Linear;
    std::int64_t in_features = 0;
    std::int64_t out_features = 0;
    std::map<std::string, TensorRef> tensors; // tensor role -> file reference
};

// On-disk model: one UTF-8 JSON manifest plus one raw little-endian binary
// file per tensor, all in a single directory.
struct ModelManifest {
    std::string model;
    std::vector<LayerSpec> layers;
    std::map<std::string, std::string> metadata;
};

struct Model {
    ModelManifest manifest;
    std::map<std::string, DenseTensor> tensors; // keyed by file name

    const DenseTensor& tensor(const LayerSpec& layer, const std::string& role) const;
};

// Checks manifest invariants: consecutive linear layers chain (out feeds in),
// tensor file names are unique, declared shapes are sane.
void validate_manifest(const ModelManifest& manifest);

// save_model then load_model is the identity on the manifest and on every
// tensor's bytes.
void save_model(const Model& model, const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

// Raw tensor payloads, shape/dtype carried by the caller's manifest entry.
void save_tensor_file(const std::filesystem::path& path, const DenseTensor& tensor);
std::vector<std::uint8_t> load_file_bytes(const std::filesystem::path& path);

} // namespace mixquant
