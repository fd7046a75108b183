#include "mixquant/analysis.hpp"

#include <cmath>

namespace mixquant {

double compute_intensity(const IntensityQuery& query) {
    if (query.m < 1 || query.n < 1 || query.k < 1) {
        throw UsageError("intensity dims must be >= 1");
    }
    if (query.bytes_act <= 0.0 || query.bytes_weight <= 0.0) {
        throw UsageError("bytes per element must be > 0");
    }
    const double m = static_cast<double>(query.m);
    const double n = static_cast<double>(query.n);
    const double k = static_cast<double>(query.k);
    return 2.0 * m * n * k / (m * k * query.bytes_act + k * n * query.bytes_weight);
}

namespace {

std::string layer_class(const std::string& name) {
    std::size_t end = name.size();
    while (end > 0 && std::isdigit(static_cast<unsigned char>(name[end - 1]))) --end;
    return name.substr(0, end);
}

} // namespace

DistributionReport distribution_report(const PrecisionAssignment& assignment,
                                       const std::vector<LinearShape>& shapes) {
    validate_assignment(assignment);
    if (shapes.size() != assignment.layer_channels.size()) {
        throw UsageError("distribution_report: assignment does not cover the model");
    }
    DistributionReport report;
    std::map<std::string, std::pair<double, int>> class_sums;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].out_features != assignment.layer_channels[i]) {
            throw UsageError("distribution_report: layer '" + shapes[i].name +
                             "' channel count disagrees with assignment");
        }
        LayerDistribution ld;
        ld.name = shapes[i].name;
        ld.total_channels = assignment.layer_channels[i];
        ld.promoted_channels = static_cast<std::int64_t>(assignment.promoted[i].size());
        ld.percent = static_cast<double>(ld.promoted_channels) /
                     static_cast<double>(ld.total_channels);
        report.total_channels += ld.total_channels;
        report.promoted_channels += ld.promoted_channels;
        auto& [sum, count] = class_sums[layer_class(ld.name)];
        sum += ld.percent;
        ++count;
        report.layers.push_back(std::move(ld));
    }
    for (const auto& [cls, sum_count] : class_sums) {
        report.class_percent[cls] = sum_count.first / sum_count.second;
    }
    report.global_percent = static_cast<double>(report.promoted_channels) /
                            static_cast<double>(report.total_channels);
    return report;
}

MatrixRMf quantized_forward(const QuantizedModel& quantized,
                            const Eigen::Ref<const MatrixRMf>& inputs,
                            const TileConfig& tile, I2FMode mode, int workers) {
    if (quantized.linears.empty()) throw UsageError("quantized model has no layers");
    MatrixRMf current = inputs;
    for (std::size_t i = 0; i < quantized.linears.size(); ++i) {
        current = execute_mixed_linear(current, quantized.linears[i],
                                       quantized.act_scheme, tile, mode, workers);
        if (i + 1 < quantized.linears.size()) current = current.cwiseMax(0.0f);
    }
    return current;
}

ProxyEvalResult proxy_eval(const ToyModel& model, const QuantizedModel& quantized,
                           const CalibrationSet& data, const TileConfig& tile,
                           I2FMode mode, int workers) {
    if (static_cast<int>(quantized.linears.size()) != model.num_layers()) {
        throw UsageError("proxy_eval: quantized model does not match the float model");
    }
    for (int i = 0; i < model.num_layers(); ++i) {
        const auto& w = model.weights[static_cast<std::size_t>(i)];
        const auto& q = quantized.linears[static_cast<std::size_t>(i)];
        if (q.out_features != w.rows() || q.in_features != w.cols()) {
            throw UsageError("proxy_eval: layer " + std::to_string(i) + " shape mismatch");
        }
    }

    const ForwardTrace trace = forward(model, data.inputs, &data.targets);
    const MatrixRMf logits_q =
        quantized_forward(quantized, data.inputs.cast<float>(), tile, mode, workers);

    // Quantized-path loss, evaluated in f64 on the engine's f32 logits.
    double total = 0.0;
    for (Index s = 0; s < data.size(); ++s) {
        const Eigen::RowVectorXd row = logits_q.row(s).cast<double>();
        const double row_max = row.maxCoeff();
        const double lse = row_max + std::log((row.array() - row_max).exp().sum());
        total += lse - row(data.targets[static_cast<std::size_t>(s)]);
    }

    ProxyEvalResult result;
    result.mean_loss_float = trace.loss;
    result.mean_loss_quant = total / static_cast<double>(data.size());
    result.loss_delta = std::abs(result.mean_loss_quant - result.mean_loss_float);
    result.logit_mse =
        (trace.logits - logits_q.cast<double>()).array().square().mean();
    return result;
}

} // namespace mixquant
