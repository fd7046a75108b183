#pragma once

#include <cstdint>
#include <vector>

#include "mixquant/model_io.hpp"
#include "mixquant/types.hpp"

namespace mixquant {

// Generation recipe for the toy feed-forward network. dims lists
// input_dim, hidden..., num_classes; weights are N(0, 2/in) (He scaling)
// drawn from the portable PRNG. sensitive_layer >= 0 multiplies that layer's
// generated weights by sensitive_factor, making its quantization error
// dominate the loss.
struct ToyModelSpec {
    std::vector<int> dims = {32, 64, 64, 8};
    std::uint64_t seed = 1;
    int sensitive_layer = -1;
    double sensitive_factor = 10.0;
};

// MLP with ReLU between linear layers and a cross-entropy loss over the
// final logits. Weights are out_features x in_features, f64, bias-free.
struct ToyModel {
    std::vector<MatrixRMd> weights;
    std::string name = "toy";

    int num_layers() const { return static_cast<int>(weights.size()); }
    Index input_dim() const { return weights.front().cols(); }
    Index num_classes() const { return weights.back().rows(); }
    std::int64_t total_out_channels() const;

    static ToyModel generate(const ToyModelSpec& spec);
};

// Manifest round trip: linear layers interleaved with activation-fn entries.
Model toy_model_to_model(const ToyModel& model,
                         const std::map<std::string, std::string>& metadata = {});
ToyModel toy_model_from_model(const Model& model);

struct CalibrationSet {
    MatrixRMd inputs;         // samples x input_dim
    std::vector<int> targets; // class index per sample
    std::uint64_t seed = 0;

    Index size() const { return inputs.rows(); }
};

// Inputs are standard normal; targets come from a fixed random linear
// teacher: target = argmax(T x) with T (classes x input_dim) drawn from the
// same seed before the inputs.
CalibrationSet make_synthetic_dataset(Index input_dim, Index num_classes,
                                      Index num_samples, std::uint64_t seed);

struct ForwardTrace {
    std::vector<MatrixRMd> pre_activations; // per layer, samples x out
    std::vector<MatrixRMd> activations;     // post-ReLU (last entry == logits)
    MatrixRMd logits;
    double loss = 0.0; // mean cross-entropy, only if targets were given
};

ForwardTrace forward(const ToyModel& model, const Eigen::Ref<const MatrixRMd>& inputs,
                     const std::vector<int>* targets = nullptr);

double mean_loss(const ToyModel& model, const CalibrationSet& data);

enum class GradientMode { Aggregated, PerSample };

// Analytic gradients of the loss with respect to every weight matrix.
// aggregated[i] is the gradient of the mean loss (== the ordered mean of the
// per-sample gradients); per_sample[i][d] is the gradient of sample d's own
// loss and is retained only in PerSample mode.
struct GradientBundle {
    GradientMode mode = GradientMode::Aggregated;
    std::vector<MatrixRMd> aggregated;
    std::vector<std::vector<MatrixRMd>> per_sample; // [layer][sample]
};

// Per-sample gradients may be computed on several workers; the reduction to
// the aggregate is a fixed-order sequential sum, so results are bit-identical
// for any worker count.
GradientBundle compute_gradients(const ToyModel& model, const CalibrationSet& data,
                                 GradientMode mode = GradientMode::Aggregated,
                                 int workers = 1);

} // namespace mixquant
