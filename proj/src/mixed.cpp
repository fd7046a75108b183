#include "mixquant/mixed.hpp"

#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mixquant/model_io.hpp"

namespace mixquant {

using nlohmann::ordered_json;

void validate_mixed_layer(const MixedLinearLayer& layer) {
    if (static_cast<Index>(layer.index_map8.size()) != layer.sub8.rows ||
        static_cast<Index>(layer.index_map4.size()) != layer.sub4.rows) {
        throw DataError("mixed layer '" + layer.name + "': index map sizes disagree with sub-problems");
    }
    std::vector<int> seen(static_cast<std::size_t>(layer.out_features), 0);
    for (const auto* map : {&layer.index_map8, &layer.index_map4}) {
        for (int ch : *map) {
            if (ch < 0 || ch >= layer.out_features) {
                throw DataError("mixed layer '" + layer.name + "': channel index out of range");
            }
            ++seen[static_cast<std::size_t>(ch)];
        }
    }
    for (std::size_t ch = 0; ch < seen.size(); ++ch) {
        if (seen[ch] != 1) {
            throw DataError("mixed layer '" + layer.name + "': output channel " +
                            std::to_string(ch) +
                            (seen[ch] == 0 ? " is unassigned" : " is assigned twice"));
        }
    }
    for (const auto* sub : {&layer.sub8, &layer.sub4}) {
        if (sub->rows > 0 && sub->cols != layer.in_features) {
            throw DataError("mixed layer '" + layer.name + "': sub-problem in_features mismatch");
        }
    }
    if (layer.sub8.rows > 0 && layer.sub4.rows > 0 &&
        layer.sub8.scheme.group_size != layer.sub4.scheme.group_size) {
        throw DataError("mixed layer '" + layer.name + "': sub-problems must share group boundaries");
    }
}

MixedLinearLayer partition_and_quantize(const Eigen::Ref<const MatrixRMd>& weight,
                                        const std::vector<int>& promoted_channels,
                                        const QuantScheme& largebit,
                                        const QuantScheme& smallbit,
                                        const std::string& name) {
    MixedLinearLayer layer;
    layer.name = name;
    layer.out_features = weight.rows();
    layer.in_features = weight.cols();

    std::vector<bool> is_promoted(static_cast<std::size_t>(weight.rows()), false);
    for (int ch : promoted_channels) {
        if (ch < 0 || ch >= weight.rows()) {
            throw UsageError("promoted channel " + std::to_string(ch) +
                             " is out of range for layer '" + name + "'");
        }
        if (is_promoted[static_cast<std::size_t>(ch)]) {
            throw UsageError("promoted channel " + std::to_string(ch) + " listed twice");
        }
        is_promoted[static_cast<std::size_t>(ch)] = true;
    }
    for (Index ch = 0; ch < weight.rows(); ++ch) {
        (is_promoted[static_cast<std::size_t>(ch)] ? layer.index_map8 : layer.index_map4)
            .push_back(static_cast<int>(ch));
    }

    auto gather = [&](const std::vector<int>& map) {
        MatrixRMd sub(static_cast<Index>(map.size()), weight.cols());
        for (std::size_t k = 0; k < map.size(); ++k) sub.row(static_cast<Index>(k)) = weight.row(map[k]);
        return sub;
    };
    layer.sub8 = quantize_tensor<double>(gather(layer.index_map8), largebit);
    layer.sub4 = quantize_tensor<double>(gather(layer.index_map4), smallbit);
    validate_mixed_layer(layer);
    return layer;
}

MatrixRMf reassemble_output(const Eigen::Ref<const MatrixRMf>& y8,
                            const Eigen::Ref<const MatrixRMf>& y4,
                            const std::vector<int>& map8,
                            const std::vector<int>& map4,
                            Index out_features) {
    if (y8.cols() != static_cast<Index>(map8.size()) ||
        y4.cols() != static_cast<Index>(map4.size())) {
        throw UsageError("reassemble_output: column counts do not match index maps");
    }
    if (y8.rows() != y4.rows() && y8.cols() > 0 && y4.cols() > 0) {
        throw UsageError("reassemble_output: sub-problem row counts differ");
    }
    const Index rows = std::max(y8.rows(), y4.rows());
    MatrixRMf out(rows, out_features);
    std::vector<int> written(static_cast<std::size_t>(out_features), 0);
    auto scatter = [&](const Eigen::Ref<const MatrixRMf>& y, const std::vector<int>& map) {
        for (std::size_t k = 0; k < map.size(); ++k) {
            const int ch = map[k];
            if (ch < 0 || ch >= out_features) {
                throw DataError("reassemble_output: channel index out of range");
            }
            if (written[static_cast<std::size_t>(ch)]++) {
                throw DataError("reassemble_output: output channel " + std::to_string(ch) +
                                " written twice");
            }
            out.col(ch) = y.col(static_cast<Index>(k));
        }
    };
    scatter(y8, map8);
    scatter(y4, map4);
    for (Index ch = 0; ch < out_features; ++ch) {
        if (!written[static_cast<std::size_t>(ch)]) {
            throw DataError("reassemble_output: output channel " + std::to_string(ch) +
                            " never written");
        }
    }
    return out;
}

std::vector<LinearShape> linear_shapes(const ToyModel& model) {
    std::vector<LinearShape> shapes;
    for (int i = 0; i < model.num_layers(); ++i) {
        const auto& w = model.weights[static_cast<std::size_t>(i)];
        shapes.push_back(LinearShape{"fc" + std::to_string(i), w.rows(), w.cols()});
    }
    return shapes;
}

FootprintReport memory_footprint(const std::vector<LinearShape>& shapes,
                                 const PrecisionAssignment& assignment,
                                 const QuantScheme& largebit,
                                 const QuantScheme& smallbit) {
    validate_assignment(assignment);
    if (shapes.size() != assignment.layer_channels.size()) {
        throw UsageError("memory_footprint: assignment does not cover the model");
    }
    const auto scale_bits_of = [](const QuantScheme& s) {
        return s.scale_f16_storage ? 16 : 32;
    };
    FootprintReport report;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const LinearShape& shape = shapes[i];
        if (shape.out_features != assignment.layer_channels[i]) {
            throw UsageError("memory_footprint: layer '" + shape.name +
                             "' channel count disagrees with assignment");
        }
        const std::int64_t n8 = static_cast<std::int64_t>(assignment.promoted[i].size());
        const std::int64_t n4 = shape.out_features - n8;
        const std::int64_t groups8 =
            (shape.in_features + largebit.group_size - 1) / largebit.group_size;
        const std::int64_t groups4 =
            (shape.in_features + smallbit.group_size - 1) / smallbit.group_size;

        LayerFootprint lf;
        lf.name = shape.name;
        lf.channels_total = shape.out_features;
        lf.channels_8bit = n8;
        lf.payload_bits = shape.in_features *
                          (n8 * largebit.bit_width + n4 * smallbit.bit_width);
        lf.scale_bits = n8 * groups8 * scale_bits_of(largebit) +
                        n4 * groups4 * scale_bits_of(smallbit);
        lf.zero_point_bits = (largebit.symmetric ? 0 : n8 * groups8 * 8) +
                             (smallbit.symmetric ? 0 : n4 * groups4 * 8);
        lf.effective_bits_payload =
            static_cast<double>(n8 * largebit.bit_width + n4 * smallbit.bit_width) /
            static_cast<double>(shape.out_features);

        report.weights_total += shape.out_features * shape.in_features;
        report.payload_bits += lf.payload_bits;
        report.overhead_bits += lf.scale_bits + lf.zero_point_bits;
        report.layers.push_back(std::move(lf));
    }
    report.effective_bits_payload =
        static_cast<double>(report.payload_bits) / static_cast<double>(report.weights_total);
    report.effective_bits_with_overhead =
        static_cast<double>(report.payload_bits + report.overhead_bits) /
        static_cast<double>(report.weights_total);
    return report;
}

QuantizedModel quantize_model(const ToyModel& model,
                              const PrecisionAssignment& assignment,
                              const QuantScheme& act_scheme,
                              const QuantScheme& largebit,
                              const QuantScheme& smallbit) {
    validate_assignment(assignment);
    if (static_cast<int>(assignment.layer_channels.size()) != model.num_layers()) {
        throw UsageError("assignment does not cover the model's linear layers");
    }
    QuantizedModel qm;
    qm.source_model = model.name;
    qm.percent = assignment.percent;
    qm.act_scheme = act_scheme;
    qm.largebit = largebit;
    qm.smallbit = smallbit;
    for (int i = 0; i < model.num_layers(); ++i) {
        const auto& w = model.weights[static_cast<std::size_t>(i)];
        if (w.rows() != assignment.layer_channels[static_cast<std::size_t>(i)]) {
            throw UsageError("assignment layer " + std::to_string(i) +
                             " channel count disagrees with the model");
        }
        qm.linears.push_back(partition_and_quantize(
            w, assignment.promoted[static_cast<std::size_t>(i)], largebit, smallbit,
            "fc" + std::to_string(i)));
    }
    return qm;
}

namespace {

ordered_json scheme_to_json(const QuantScheme& s) {
    return ordered_json{{"bit_width", s.bit_width},
                        {"symmetric", s.symmetric},
                        {"group_size", s.group_size},
                        {"scale_f16_storage", s.scale_f16_storage}};
}

QuantScheme scheme_from_json(const ordered_json& j) {
    QuantScheme s;
    s.bit_width = j.at("bit_width").get<int>();
    s.symmetric = j.at("symmetric").get<bool>();
    s.group_size = j.at("group_size").get<int>();
    s.scale_f16_storage = j.at("scale_f16_storage").get<bool>();
    validate_scheme(s);
    return s;
}

DenseTensor array_to_tensor_f32(const ArrayRM<float>& a) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(a.size()) * 4);
    std::memcpy(bytes.data(), a.data(), bytes.size());
    return make_tensor({a.rows(), a.cols()}, Dtype::F32, std::move(bytes));
}

DenseTensor array_to_tensor_u8(const ArrayRM<std::uint8_t>& a) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(a.size()));
    std::memcpy(bytes.data(), a.data(), bytes.size());
    return make_tensor({a.rows(), a.cols()}, Dtype::U8, std::move(bytes));
}

template <class T>
ArrayRM<T> tensor_to_array(const DenseTensor& t) {
    ArrayRM<T> a(t.shape.at(0), t.shape.at(1));
    std::memcpy(a.data(), t.data.data(), t.data.size());
    return a;
}

// Tensor roles written per sub-problem; empty sub-problems write nothing and
// are rebuilt from the recorded scheme and shape.
void write_sub(const std::filesystem::path& dir, const std::string& prefix,
               const QuantizedTensor& sub, ordered_json& jtensors) {
    if (sub.rows == 0) return;
    const auto payload_shape = std::vector<std::int64_t>{sub.rows, sub.row_stride_bytes()};
    const auto codes_file = prefix + ".codes.bin";
    save_tensor_file(dir / codes_file,
                     make_tensor(payload_shape, Dtype::U8, sub.payload));
    jtensors[prefix + "_codes"] =
        ordered_json{{"file", codes_file}, {"dtype", "u8"}, {"shape", payload_shape}};

    const auto scales_file = prefix + ".scales.bin";
    save_tensor_file(dir / scales_file, array_to_tensor_f32(sub.scales));
    jtensors[prefix + "_scales"] = ordered_json{
        {"file", scales_file}, {"dtype", "f32"}, {"shape", {sub.scales.rows(), sub.scales.cols()}}};

    if (!sub.scheme.symmetric) {
        const auto zp_file = prefix + ".zero_points.bin";
        save_tensor_file(dir / zp_file, array_to_tensor_u8(sub.zero_points));
        jtensors[prefix + "_zero_points"] = ordered_json{
            {"file", zp_file},
            {"dtype", "u8"},
            {"shape", {sub.zero_points.rows(), sub.zero_points.cols()}}};
    }
}

QuantizedTensor read_sub(const std::filesystem::path& dir, const std::string& prefix,
                         const QuantScheme& scheme, Index rows, Index cols,
                         const ordered_json& jtensors) {
    QuantizedTensor sub;
    sub.scheme = scheme;
    sub.rows = rows;
    sub.cols = cols;
    const Index groups = cols == 0 ? 0 : sub.num_groups();
    if (rows == 0) {
        sub.scales.resize(0, groups);
        if (!scheme.symmetric) sub.zero_points.resize(0, groups);
        return sub;
    }
    auto read_tensor = [&](const std::string& role) {
        const auto& jref = jtensors.at(role);
        auto bytes = load_file_bytes(dir / jref.at("file").get<std::string>());
        return make_tensor(jref.at("shape").get<std::vector<std::int64_t>>(),
                           dtype_from_name(jref.at("dtype").get<std::string>()),
                           std::move(bytes));
    };
    const DenseTensor codes = read_tensor(prefix + "_codes");
    sub.payload = codes.data;
    sub.scales = tensor_to_array<float>(read_tensor(prefix + "_scales"));
    if (!scheme.symmetric) {
        sub.zero_points = tensor_to_array<std::uint8_t>(read_tensor(prefix + "_zero_points"));
    }
    validate_quantized(sub);
    return sub;
}

} // namespace

void save_quantized_model(const QuantizedModel& qm, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ordered_json j;
    j["format"] = "mixquant-quantized-v1";
    j["source_model"] = qm.source_model;
    j["percent"] = qm.percent;
    j["act_scheme"] = scheme_to_json(qm.act_scheme);
    j["largebit"] = scheme_to_json(qm.largebit);
    j["smallbit"] = scheme_to_json(qm.smallbit);
    j["layers"] = ordered_json::array();
    for (const MixedLinearLayer& layer : qm.linears) {
        validate_mixed_layer(layer);
        ordered_json jl;
        jl["name"] = layer.name;
        jl["out_features"] = layer.out_features;
        jl["in_features"] = layer.in_features;
        jl["index_map8"] = layer.index_map8;
        jl["index_map4"] = layer.index_map4;
        jl["tensors"] = ordered_json::object();
        write_sub(dir, layer.name + ".sub8", layer.sub8, jl["tensors"]);
        write_sub(dir, layer.name + ".sub4", layer.sub4, jl["tensors"]);
        j["layers"].push_back(std::move(jl));
    }
    std::ofstream out(dir / "quantized.json", std::ios::trunc);
    if (!out) throw DataError("cannot write quantized manifest in '" + dir.string() + "'");
    out << j.dump(2) << "\n";
}

QuantizedModel load_quantized_model(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "quantized.json";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open '" + manifest_path.string() + "'");
    ordered_json j;
    try {
        in >> j;
        QuantizedModel qm;
        qm.source_model = j.at("source_model").get<std::string>();
        qm.percent = j.at("percent").get<double>();
        qm.act_scheme = scheme_from_json(j.at("act_scheme"));
        qm.largebit = scheme_from_json(j.at("largebit"));
        qm.smallbit = scheme_from_json(j.at("smallbit"));
        for (const auto& jl : j.at("layers")) {
            MixedLinearLayer layer;
            layer.name = jl.at("name").get<std::string>();
            layer.out_features = jl.at("out_features").get<Index>();
            layer.in_features = jl.at("in_features").get<Index>();
            layer.index_map8 = jl.at("index_map8").get<std::vector<int>>();
            layer.index_map4 = jl.at("index_map4").get<std::vector<int>>();
            layer.sub8 = read_sub(dir, layer.name + ".sub8", qm.largebit,
                                  static_cast<Index>(layer.index_map8.size()),
                                  layer.in_features, jl.at("tensors"));
            layer.sub4 = read_sub(dir, layer.name + ".sub4", qm.smallbit,
                                  static_cast<Index>(layer.index_map4.size()),
                                  layer.in_features, jl.at("tensors"));
            validate_mixed_layer(layer);
            qm.linears.push_back(std::move(layer));
        }
        return qm;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed quantized manifest '" + manifest_path.string() +
                        "': " + e.what());
    }
}

} // namespace mixquant
