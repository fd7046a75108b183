#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mixquant/quant.hpp"
#include "mixquant/salience.hpp"

namespace mixquant {

// One linear layer split by output channel into an 8-bit symmetric
// sub-problem and a 4-bit asymmetric sub-problem. index_map8[k] is the
// original output channel produced by row k of sub8 (ascending original
// order; likewise for sub4). Either sub-problem may be empty.
struct MixedLinearLayer {
    std::string name;
    Index out_features = 0;
    Index in_features = 0;
    QuantizedTensor sub8;
    QuantizedTensor sub4;
    std::vector<int> index_map8;
    std::vector<int> index_map4;
};

void validate_mixed_layer(const MixedLinearLayer& layer);

MixedLinearLayer partition_and_quantize(const Eigen::Ref<const MatrixRMd>& weight,
                                        const std::vector<int>& promoted_channels,
                                        const QuantScheme& largebit,
                                        const QuantScheme& smallbit,
                                        const std::string& name = "");

// Scatters sub-problem output columns back to their original channel
// positions: output column maps[k] receives column k. The two maps must
// together cover every output channel exactly once.
MatrixRMf reassemble_output(const Eigen::Ref<const MatrixRMf>& y8,
                            const Eigen::Ref<const MatrixRMf>& y4,
                            const std::vector<int>& map8,
                            const std::vector<int>& map4,
                            Index out_features);

struct LinearShape {
    std::string name;
    Index out_features = 0;
    Index in_features = 0;
};

struct LayerFootprint {
    std::string name;
    std::int64_t channels_total = 0;
    std::int64_t channels_8bit = 0;
    std::int64_t payload_bits = 0;
    std::int64_t scale_bits = 0;
    std::int64_t zero_point_bits = 0;
    double effective_bits_payload = 0.0; // (4 n4 + 8 n8) / (n4 + n8)
};

struct FootprintReport {
    std::vector<LayerFootprint> layers;
    std::int64_t weights_total = 0;
    std::int64_t payload_bits = 0;
    std::int64_t overhead_bits = 0; // scales + zero points
    double effective_bits_payload = 0.0;
    double effective_bits_with_overhead = 0.0;
};

// Bit accounting for a whole-model assignment. Payload-only effective bits
// follow the (4 n4 + 8 n8)/(n4 + n8) convention; scale/zero-point overhead is
// reported separately (one scale per group — 32 bits stored, 16 in the f16
// storage mode — plus one 8-bit zero point per asymmetric group).
FootprintReport memory_footprint(const std::vector<LinearShape>& shapes,
                                 const PrecisionAssignment& assignment,
                                 const QuantScheme& largebit,
                                 const QuantScheme& smallbit);

std::vector<LinearShape> linear_shapes(const ToyModel& model);

// A fully quantized toy model: mixed linear layers with the fixed ReLU
// between them, plus the activation scheme the engine should use.
struct QuantizedModel {
    std::string source_model;
    double percent = 0.0;
    QuantScheme act_scheme;  // 8-bit symmetric group-wise
    QuantScheme largebit;    // 8-bit symmetric
    QuantScheme smallbit;    // 4-bit asymmetric
    std::vector<MixedLinearLayer> linears;
};

QuantizedModel quantize_model(const ToyModel& model,
                              const PrecisionAssignment& assignment,
                              const QuantScheme& act_scheme,
                              const QuantScheme& largebit,
                              const QuantScheme& smallbit);

void save_quantized_model(const QuantizedModel& qm, const std::filesystem::path& dir);
QuantizedModel load_quantized_model(const std::filesystem::path& dir);

} // namespace mixquant
