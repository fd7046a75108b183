#include "mixquant/calibration.hpp"

#include <cmath>

#include "mixquant/parallel.hpp"
#include "mixquant/rng.hpp"

namespace mixquant {

std::int64_t ToyModel::total_out_channels() const {
    std::int64_t total = 0;
    for (const auto& w : weights) total += w.rows();
    return total;
}

ToyModel ToyModel::generate(const ToyModelSpec& spec) {
    if (spec.dims.size() < 2) throw UsageError("toy model needs at least 2 dims");
    for (int d : spec.dims) {
        if (d < 1) throw UsageError("toy model dims must be >= 1");
    }
    if (spec.sensitive_layer >= static_cast<int>(spec.dims.size()) - 1) {
        throw UsageError("sensitive_layer is out of range");
    }
    Xoshiro256pp rng(spec.seed);
    ToyModel model;
    for (std::size_t i = 0; i + 1 < spec.dims.size(); ++i) {
        const Index in = spec.dims[i];
        const Index out = spec.dims[i + 1];
        MatrixRMd w(out, in);
        const double stddev = std::sqrt(2.0 / static_cast<double>(in));
        for (Index r = 0; r < out; ++r) {
            for (Index c = 0; c < in; ++c) w(r, c) = stddev * rng.normal();
        }
        if (static_cast<int>(i) == spec.sensitive_layer) w *= spec.sensitive_factor;
        model.weights.push_back(std::move(w));
    }
    return model;
}

Model toy_model_to_model(const ToyModel& model,
                         const std::map<std::string, std::string>& metadata) {
    Model out;
    out.manifest.model = model.name;
    out.manifest.metadata = metadata;
    out.manifest.metadata["loss"] = "cross-entropy";
    for (int i = 0; i < model.num_layers(); ++i) {
        const auto& w = model.weights[static_cast<std::size_t>(i)];
        LayerSpec linear;
        linear.name = "fc" + std::to_string(i);
        linear.kind = LayerKind::Linear;
        linear.in_features = w.cols();
        linear.out_features = w.rows();
        TensorRef ref;
        ref.file = linear.name + ".weight.bin";
        ref.dtype = Dtype::F64;
        ref.shape = {w.rows(), w.cols()};
        linear.tensors["weight"] = ref;
        out.tensors[ref.file] = matrix_to_tensor<double>(w);
        out.manifest.layers.push_back(std::move(linear));

        if (i + 1 < model.num_layers()) {
            LayerSpec act;
            act.name = "relu" + std::to_string(i);
            act.kind = LayerKind::ActivationFn;
            act.in_features = w.rows();
            act.out_features = w.rows();
            out.manifest.layers.push_back(std::move(act));
        }
    }
    return out;
}

ToyModel toy_model_from_model(const Model& model) {
    ToyModel out;
    out.name = model.manifest.model;
    for (const LayerSpec& layer : model.manifest.layers) {
        if (layer.kind != LayerKind::Linear) continue;
        const DenseTensor& t = model.tensor(layer, "weight");
        if (t.dtype != Dtype::F64) {
            throw DataError("layer '" + layer.name + "': toy model weights must be f64");
        }
        out.weights.push_back(tensor_to_matrix<double>(t));
        if (out.weights.back().rows() != layer.out_features ||
            out.weights.back().cols() != layer.in_features) {
            throw DataError("layer '" + layer.name + "': weight shape disagrees with manifest");
        }
    }
    if (out.weights.empty()) throw DataError("model has no linear layers");
    return out;
}

CalibrationSet make_synthetic_dataset(Index input_dim, Index num_classes,
                                      Index num_samples, std::uint64_t seed) {
    if (num_samples < 1) throw UsageError("dataset needs at least one sample");
    if (input_dim < 1 || num_classes < 1) throw UsageError("bad dataset dims");
    Xoshiro256pp rng(seed);

    // Teacher first so its draw count is independent of num_samples.
    MatrixRMd teacher(num_classes, input_dim);
    for (Index r = 0; r < num_classes; ++r) {
        for (Index c = 0; c < input_dim; ++c) teacher(r, c) = rng.normal();
    }

    CalibrationSet data;
    data.seed = seed;
    data.inputs.resize(num_samples, input_dim);
    data.targets.resize(static_cast<std::size_t>(num_samples));
    for (Index s = 0; s < num_samples; ++s) {
        for (Index c = 0; c < input_dim; ++c) data.inputs(s, c) = rng.normal();
        Index target = 0;
        Eigen::VectorXd scores = teacher * data.inputs.row(s).transpose();
        scores.maxCoeff(&target);
        data.targets[static_cast<std::size_t>(s)] = static_cast<int>(target);
    }
    return data;
}

namespace {

// Row-wise log-sum-exp, stabilized by the row max.
Eigen::VectorXd log_sum_exp_rows(const MatrixRMd& logits) {
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    return row_max.array() +
           (logits.colwise() - row_max).array().exp().rowwise().sum().log();
}

} // namespace

ForwardTrace forward(const ToyModel& model, const Eigen::Ref<const MatrixRMd>& inputs,
                     const std::vector<int>* targets) {
    if (inputs.cols() != model.input_dim()) {
        throw UsageError("forward: input has " + std::to_string(inputs.cols()) +
                         " features, model expects " +
                         std::to_string(model.input_dim()));
    }
    ForwardTrace trace;
    MatrixRMd current = inputs;
    for (int i = 0; i < model.num_layers(); ++i) {
        MatrixRMd pre = current * model.weights[static_cast<std::size_t>(i)].transpose();
        trace.pre_activations.push_back(pre);
        if (i + 1 < model.num_layers()) {
            current = pre.cwiseMax(0.0);
        } else {
            current = pre;
        }
        trace.activations.push_back(current);
    }
    trace.logits = trace.activations.back();

    if (targets) {
        if (static_cast<Index>(targets->size()) != inputs.rows()) {
            throw UsageError("forward: target count does not match batch size");
        }
        const Eigen::VectorXd lse = log_sum_exp_rows(trace.logits);
        double total = 0.0;
        for (Index s = 0; s < inputs.rows(); ++s) {
            const int t = (*targets)[static_cast<std::size_t>(s)];
            if (t < 0 || t >= model.num_classes()) {
                throw DataError("forward: target class out of range");
            }
            total += lse(s) - trace.logits(s, t);
        }
        trace.loss = total / static_cast<double>(inputs.rows());
    }
    return trace;
}

double mean_loss(const ToyModel& model, const CalibrationSet& data) {
    return forward(model, data.inputs, &data.targets).loss;
}

GradientBundle compute_gradients(const ToyModel& model, const CalibrationSet& data,
                                 GradientMode mode, int workers) {
    const Index n = data.size();
    const int layers = model.num_layers();

    GradientBundle bundle;
    bundle.mode = mode;
    bundle.per_sample.assign(
        static_cast<std::size_t>(layers),
        std::vector<MatrixRMd>(static_cast<std::size_t>(n)));

    // Each sample's backward pass is independent; slots make the later
    // reduction order independent of the worker count.
    parallel_for(n, workers, [&](std::int64_t s) {
        const auto trace = forward(model, data.inputs.row(s));
        // dL_s/dlogits = softmax(logits) - onehot(target)
        Eigen::RowVectorXd logits = trace.logits.row(0);
        const double m = logits.maxCoeff();
        Eigen::RowVectorXd p = (logits.array() - m).exp();
        p /= p.sum();
        p(data.targets[static_cast<std::size_t>(s)]) -= 1.0;

        Eigen::RowVectorXd delta = p;
        for (int i = layers - 1; i >= 0; --i) {
            const Eigen::RowVectorXd& act_in =
                i == 0 ? Eigen::RowVectorXd(data.inputs.row(s))
                       : Eigen::RowVectorXd(trace.activations[static_cast<std::size_t>(i - 1)].row(0));
            bundle.per_sample[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] =
                delta.transpose() * act_in;
            if (i > 0) {
                Eigen::RowVectorXd back = delta * model.weights[static_cast<std::size_t>(i)];
                const auto& pre = trace.pre_activations[static_cast<std::size_t>(i - 1)];
                delta = back.array() *
                        (pre.row(0).array() > 0.0).template cast<double>();
            }
        }
    });

    bundle.aggregated.reserve(static_cast<std::size_t>(layers));
    for (int i = 0; i < layers; ++i) {
        MatrixRMd sum = MatrixRMd::Zero(model.weights[static_cast<std::size_t>(i)].rows(),
                                        model.weights[static_cast<std::size_t>(i)].cols());
        for (Index s = 0; s < n; ++s) {
            sum += bundle.per_sample[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
        }
        bundle.aggregated.push_back(sum / static_cast<double>(n));
    }
    if (mode == GradientMode::Aggregated) bundle.per_sample.clear();
    return bundle;
}

} // namespace mixquant
