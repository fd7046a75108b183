#pragma once

#include <map>
#include <string>
#include <vector>

#include "mixquant/calibration.hpp"
#include "mixquant/gemm.hpp"
#include "mixquant/mixed.hpp"

namespace mixquant {

// Arithmetic-intensity query for one linear of m tokens, k in-features and
// n out-features; bytes_* are bytes per element (0.5 for 4-bit payloads).
struct IntensityQuery {
    std::int64_t m = 0;
    std::int64_t n = 0;
    std::int64_t k = 0;
    double bytes_act = 1.0;
    double bytes_weight = 1.0;
};

// I = 2mnk / (m k bytes_act + k n bytes_weight), operations per byte moved.
double compute_intensity(const IntensityQuery& query);

struct LayerDistribution {
    std::string name;
    std::int64_t total_channels = 0;
    std::int64_t promoted_channels = 0;
    double percent = 0.0;
};

struct DistributionReport {
    std::vector<LayerDistribution> layers;
    std::map<std::string, double> class_percent; // layer-name prefix -> avg
    std::int64_t total_channels = 0;
    std::int64_t promoted_channels = 0;
    double global_percent = 0.0;
};

// Per-layer promoted percentages plus averages over layer classes (layer
// names with the trailing index stripped). The channel-weighted mean of the
// per-layer percentages equals the global percentage.
DistributionReport distribution_report(const PrecisionAssignment& assignment,
                                       const std::vector<LinearShape>& shapes);

struct ProxyEvalResult {
    double mean_loss_float = 0.0;
    double mean_loss_quant = 0.0;
    double loss_delta = 0.0; // |quant - float|
    double logit_mse = 0.0;
};

// Desk-scale quality metric: runs the float model and the quantized model on
// the same dataset and reports the absolute mean-loss difference and the mean
// squared logit error.
ProxyEvalResult proxy_eval(const ToyModel& model, const QuantizedModel& quantized,
                           const CalibrationSet& data, const TileConfig& tile = {},
                           I2FMode mode = I2FMode::Fast, int workers = 1);

// Quantized forward pass (engine path) producing the final logits.
MatrixRMf quantized_forward(const QuantizedModel& quantized,
                            const Eigen::Ref<const MatrixRMf>& inputs,
                            const TileConfig& tile = {},
                            I2FMode mode = I2FMode::Fast, int workers = 1);

} // namespace mixquant
