#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mixquant/calibration.hpp"
#include "mixquant/quant.hpp"

namespace mixquant {

struct ChannelSalience {
    int layer_id = 0;
    int channel_id = 0;
    double salience = 0.0; // |t + t^2/2|, always >= 0
};

// Global partition of all output channels of all linear layers into the
// promoted (large-bit) set and the remainder. promoted[i] lists the promoted
// channel indices of layer i in ascending order; every other channel of the
// layer is small-bit.
struct PrecisionAssignment {
    double percent = 0.0;
    std::int64_t n_largebit = 0;
    std::int64_t total_channels = 0;
    std::vector<std::int64_t> layer_channels;   // out_features per linear layer
    std::vector<std::vector<int>> promoted;     // ascending per layer

    bool is_promoted(int layer_id, int channel_id) const;
    std::int64_t promoted_count() const;
};

void validate_assignment(const PrecisionAssignment& assignment);

enum class SalienceMode { Aggregated, PerSample };

// Quantize-then-dequantize error of one weight matrix under the small-bit
// scheme, in f64: delta = dequant(quant(W)) - W.
MatrixRMd weight_delta(const Eigen::Ref<const MatrixRMd>& weight,
                       const QuantScheme& smallbit);

// Salience of one output channel from the aggregated gradient row:
// t = g . delta, S = |t + 0.5 t^2|. The first-order term is always kept.
double channel_salience(std::span<const double> gradient_row,
                        std::span<const double> delta_row);

// Literal per-sample form: S = mean_d |g_d . delta + 0.5 (g_d . delta)^2|.
double channel_salience_per_sample(const std::vector<MatrixRMd>& per_sample_grads,
                                   int channel_id,
                                   std::span<const double> delta_row);

// Salience of every output channel of every linear layer, in layer order.
std::vector<ChannelSalience> compute_salience(const ToyModel& model,
                                              const GradientBundle& gradients,
                                              const QuantScheme& smallbit,
                                              SalienceMode mode);

// Global precision search: sort all channels by salience descending (stable;
// ties broken by ascending (layer_id, channel_id)) and promote the top
// N_largebit = round(percent * total_channels), rounding half away from zero.
PrecisionAssignment global_search(const ToyModel& model,
                                  const GradientBundle& gradients,
                                  const QuantScheme& smallbit, double percent,
                                  SalienceMode mode = SalienceMode::Aggregated);

// Same split applied to an externally produced salience list (used by the
// tests' hand-built cases).
PrecisionAssignment assign_from_salience(std::vector<ChannelSalience> saliences,
                                         std::span<const std::int64_t> layer_channels,
                                         double percent);

void save_assignment(const PrecisionAssignment& assignment,
                     const std::filesystem::path& path);
PrecisionAssignment load_assignment(const std::filesystem::path& path);

} // namespace mixquant
