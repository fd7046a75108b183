#include "mixquant/salience.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mixquant {

using nlohmann::ordered_json;

bool PrecisionAssignment::is_promoted(int layer_id, int channel_id) const {
    const auto& list = promoted.at(static_cast<std::size_t>(layer_id));
    return std::binary_search(list.begin(), list.end(), channel_id);
}

std::int64_t PrecisionAssignment::promoted_count() const {
    std::int64_t n = 0;
    for (const auto& list : promoted) n += static_cast<std::int64_t>(list.size());
    return n;
}

void validate_assignment(const PrecisionAssignment& assignment) {
    if (assignment.promoted.size() != assignment.layer_channels.size()) {
        throw DataError("assignment layer count mismatch");
    }
    const std::int64_t total = std::accumulate(assignment.layer_channels.begin(),
                                               assignment.layer_channels.end(),
                                               std::int64_t{0});
    if (total != assignment.total_channels) {
        throw DataError("assignment total_channels disagrees with per-layer counts");
    }
    if (assignment.promoted_count() != assignment.n_largebit) {
        throw DataError("assignment holds " + std::to_string(assignment.promoted_count()) +
                        " promoted channels, expected " +
                        std::to_string(assignment.n_largebit));
    }
    for (std::size_t i = 0; i < assignment.promoted.size(); ++i) {
        const auto& list = assignment.promoted[i];
        if (!std::is_sorted(list.begin(), list.end()) ||
            std::adjacent_find(list.begin(), list.end()) != list.end()) {
            throw DataError("promoted channels of layer " + std::to_string(i) +
                            " are not strictly ascending");
        }
        if (!list.empty() &&
            (list.front() < 0 || list.back() >= assignment.layer_channels[i])) {
            throw DataError("promoted channel out of range in layer " + std::to_string(i));
        }
    }
}

MatrixRMd weight_delta(const Eigen::Ref<const MatrixRMd>& weight,
                       const QuantScheme& smallbit) {
    const QuantizedTensor q = quantize_tensor<double>(weight, smallbit);
    return dequantize_tensor<double>(q) - weight;
}

double channel_salience(std::span<const double> gradient_row,
                        std::span<const double> delta_row) {
    if (gradient_row.size() != delta_row.size()) {
        throw UsageError("channel_salience: gradient and delta lengths differ");
    }
    double t = 0.0;
    for (std::size_t i = 0; i < gradient_row.size(); ++i) {
        t += gradient_row[i] * delta_row[i];
    }
    return std::abs(t + 0.5 * t * t);
}

double channel_salience_per_sample(const std::vector<MatrixRMd>& per_sample_grads,
                                   int channel_id,
                                   std::span<const double> delta_row) {
    if (per_sample_grads.empty()) {
        throw UsageError("channel_salience_per_sample: no per-sample gradients");
    }
    double total = 0.0;
    for (const MatrixRMd& g : per_sample_grads) {
        if (static_cast<std::size_t>(g.cols()) != delta_row.size()) {
            throw UsageError("channel_salience_per_sample: gradient and delta lengths differ");
        }
        double t = 0.0;
        for (Index i = 0; i < g.cols(); ++i) {
            t += g(channel_id, i) * delta_row[static_cast<std::size_t>(i)];
        }
        total += std::abs(t + 0.5 * t * t);
    }
    return total / static_cast<double>(per_sample_grads.size());
}

std::vector<ChannelSalience> compute_salience(const ToyModel& model,
                                              const GradientBundle& gradients,
                                              const QuantScheme& smallbit,
                                              SalienceMode mode) {
    if (static_cast<int>(gradients.aggregated.size()) != model.num_layers()) {
        throw UsageError("gradient bundle does not match model layer count");
    }
    if (mode == SalienceMode::PerSample && gradients.per_sample.empty()) {
        throw UsageError("per-sample salience requires per-sample gradients");
    }
    std::vector<ChannelSalience> out;
    for (int i = 0; i < model.num_layers(); ++i) {
        const MatrixRMd& w = model.weights[static_cast<std::size_t>(i)];
        const MatrixRMd& g = gradients.aggregated[static_cast<std::size_t>(i)];
        if (g.rows() != w.rows() || g.cols() != w.cols()) {
            throw UsageError("gradient shape of layer " + std::to_string(i) +
                             " does not match its weight");
        }
        const MatrixRMd delta = weight_delta(w, smallbit);
        for (Index c = 0; c < w.rows(); ++c) {
            const std::span<const double> delta_row(delta.row(c).data(),
                                                    static_cast<std::size_t>(delta.cols()));
            double s;
            if (mode == SalienceMode::Aggregated) {
                const std::span<const double> g_row(g.row(c).data(),
                                                    static_cast<std::size_t>(g.cols()));
                s = channel_salience(g_row, delta_row);
            } else {
                s = channel_salience_per_sample(
                    gradients.per_sample[static_cast<std::size_t>(i)],
                    static_cast<int>(c), delta_row);
            }
            out.push_back(ChannelSalience{i, static_cast<int>(c), s});
        }
    }
    return out;
}

PrecisionAssignment assign_from_salience(std::vector<ChannelSalience> saliences,
                                         std::span<const std::int64_t> layer_channels,
                                         double percent) {
    if (percent < 0.0 || percent > 1.0) {
        throw UsageError("percent must lie in [0, 1]");
    }
    const std::int64_t total = std::accumulate(layer_channels.begin(),
                                               layer_channels.end(), std::int64_t{0});
    if (static_cast<std::int64_t>(saliences.size()) != total) {
        throw UsageError("salience list does not cover all channels");
    }

    // Descending salience; equal salience ordered by (layer, channel) ascending.
    std::stable_sort(saliences.begin(), saliences.end(),
                     [](const ChannelSalience& a, const ChannelSalience& b) {
                         if (a.salience != b.salience) return a.salience > b.salience;
                         if (a.layer_id != b.layer_id) return a.layer_id < b.layer_id;
                         return a.channel_id < b.channel_id;
                     });

    PrecisionAssignment assignment;
    assignment.percent = percent;
    assignment.total_channels = total;
    assignment.n_largebit =
        std::llround(percent * static_cast<double>(total)); // half away from zero
    assignment.layer_channels.assign(layer_channels.begin(), layer_channels.end());
    assignment.promoted.assign(layer_channels.size(), {});
    for (std::int64_t i = 0; i < assignment.n_largebit; ++i) {
        const ChannelSalience& cs = saliences[static_cast<std::size_t>(i)];
        assignment.promoted[static_cast<std::size_t>(cs.layer_id)].push_back(cs.channel_id);
    }
    for (auto& list : assignment.promoted) std::sort(list.begin(), list.end());
    validate_assignment(assignment);
    return assignment;
}

PrecisionAssignment global_search(const ToyModel& model,
                                  const GradientBundle& gradients,
                                  const QuantScheme& smallbit, double percent,
                                  SalienceMode mode) {
    std::vector<std::int64_t> layer_channels;
    for (const auto& w : model.weights) layer_channels.push_back(w.rows());
    auto saliences = compute_salience(model, gradients, smallbit, mode);
    auto assignment = assign_from_salience(std::move(saliences), layer_channels, percent);
    return assignment;
}

void save_assignment(const PrecisionAssignment& assignment,
                     const std::filesystem::path& path) {
    validate_assignment(assignment);
    ordered_json j;
    j["format"] = "mixquant-assignment-v1";
    j["percent"] = assignment.percent;
    j["n_largebit"] = assignment.n_largebit;
    j["total_channels"] = assignment.total_channels;
    j["layers"] = ordered_json::array();
    for (std::size_t i = 0; i < assignment.promoted.size(); ++i) {
        j["layers"].push_back(ordered_json{
            {"layer_id", i},
            {"out_features", assignment.layer_channels[i]},
            {"promoted", assignment.promoted[i]}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write assignment '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

PrecisionAssignment load_assignment(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open assignment '" + path.string() + "'");
    ordered_json j;
    try {
        in >> j;
        PrecisionAssignment assignment;
        assignment.percent = j.at("percent").get<double>();
        assignment.n_largebit = j.at("n_largebit").get<std::int64_t>();
        assignment.total_channels = j.at("total_channels").get<std::int64_t>();
        for (const auto& jl : j.at("layers")) {
            assignment.layer_channels.push_back(jl.at("out_features").get<std::int64_t>());
            assignment.promoted.push_back(jl.at("promoted").get<std::vector<int>>());
        }
        validate_assignment(assignment);
        return assignment;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed assignment '" + path.string() + "': " + e.what());
    }
}

} // namespace mixquant
