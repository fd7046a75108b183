#include "mixquant/gemm.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>

#include "mixquant/parallel.hpp"
#include "mixquant/rng.hpp"

namespace mixquant {

namespace {

int resolve_group_tile(const TileConfig& tile, const QuantizedTensor& weights) {
    const int group = tile.group_tile == 0 ? weights.scheme.group_size : tile.group_tile;
    if (group != weights.scheme.group_size) {
        throw UsageError("group tile " + std::to_string(group) +
                         " does not match the quantization group size " +
                         std::to_string(weights.scheme.group_size));
    }
    if (group < 1 || group > 128) {
        throw UsageError("group tile must lie in [1, 128], got " + std::to_string(group));
    }
    return group;
}

void check_engine_inputs(const QuantizedTensor& activations,
                         const QuantizedTensor& weights) {
    validate_quantized(activations);
    validate_quantized(weights);
    if (activations.scheme.bit_width != 8 || !activations.scheme.symmetric) {
        throw UsageError("engine requires 8-bit symmetric activations");
    }
    const bool w4_asym = weights.scheme.bit_width == 4 && !weights.scheme.symmetric;
    const bool w8_sym = weights.scheme.bit_width == 8 && weights.scheme.symmetric;
    if (!w4_asym && !w8_sym) {
        throw UsageError("engine requires 4-bit asymmetric or 8-bit symmetric weights");
    }
    if (activations.cols != weights.cols) {
        throw UsageError("activation K " + std::to_string(activations.cols) +
                         " does not match weight K " + std::to_string(weights.cols));
    }
    if (activations.scheme.group_size != weights.scheme.group_size) {
        throw UsageError("activations and weights must share group boundaries");
    }
}

// One task: output rows [m_begin, m_end) x all weight rows. Per output
// element the K-groups run in ascending order; the integer group accumulator
// and the float32 global accumulator mirror the dual-buffer pipeline.
void gemm_block(const QuantizedTensor& acts, const QuantizedTensor& weights,
                const PrepackedWeights& packed, I2FMode mode, Index m_begin,
                Index m_end, MatrixRMf& out) {
    const auto* a_codes = reinterpret_cast<const std::int8_t*>(acts.payload.data());
    const Index k = acts.cols;
    const Index groups = acts.num_groups();
    const bool asym = !weights.scheme.symmetric;

    for (Index g = 0; g < groups; ++g) {
        const Index begin = g * acts.scheme.group_size;
        const Index len = acts.group_len(g);
        for (Index r = 0; r < weights.rows; ++r) {
            const std::uint8_t* w_codes = packed.codes.data() + packed.group_offset(g, r);
            // Step 1: zero-point subtraction in the integer domain. The
            // result fits int8 for 4-bit codes ([-15, 15]), so the int8
            // tensor-core path has no overflow.
            const int zero = asym ? weights.zero_points(r, g) : 0;
            const float sw = weights.scales(r, g);
            for (Index m = m_begin; m < m_end; ++m) {
                const std::int8_t* a = a_codes + m * k + begin;
                std::int32_t acc = mode == I2FMode::Fast ? I2FConstants::bias_int : 0;
                for (Index i = 0; i < len; ++i) {
                    acc += static_cast<std::int32_t>(a[i]) *
                           (static_cast<std::int32_t>(w_codes[i]) - zero);
                }
                const float group_sum = mode == I2FMode::Fast
                                            ? std::bit_cast<float>(acc) - I2FConstants::bias_fp
                                            : static_cast<float>(acc);
                // Step 2: per-group scales on the group sum, then the global
                // float32 accumulation.
                out(m, r) += group_sum * (acts.scales(m, g) * sw);
            }
        }
    }
}

} // namespace

PrepackedWeights prepack_weights(const QuantizedTensor& weights) {
    validate_quantized(weights);
    PrepackedWeights packed;
    packed.rows = weights.rows;
    packed.cols = weights.cols;
    packed.group_size = weights.scheme.group_size;
    packed.codes.resize(static_cast<std::size_t>(weights.rows) *
                        static_cast<std::size_t>(weights.cols));
    for (Index g = 0; g < (weights.cols > 0 ? weights.num_groups() : 0); ++g) {
        const Index begin = g * weights.scheme.group_size;
        const Index len = weights.group_len(g);
        for (Index r = 0; r < weights.rows; ++r) {
            std::uint8_t* dst = packed.codes.data() + packed.group_offset(g, r);
            for (Index i = 0; i < len; ++i) {
                dst[i] = static_cast<std::uint8_t>(weights.code(r, begin + i));
            }
        }
    }
    return packed;
}

MatrixRMf group_gemm_twostep(const QuantizedTensor& activations,
                             const QuantizedTensor& weights,
                             const PrepackedWeights& packed, const TileConfig& tile,
                             I2FMode mode, int workers) {
    check_engine_inputs(activations, weights);
    resolve_group_tile(tile, weights);
    if (packed.rows != weights.rows || packed.cols != weights.cols ||
        packed.group_size != weights.scheme.group_size) {
        throw UsageError("prepacked weights do not match the quantized tensor");
    }
    if (tile.block_rows < 1) throw UsageError("block_rows must be >= 1");

    MatrixRMf out = MatrixRMf::Zero(activations.rows, weights.rows);
    if (weights.rows == 0 || activations.rows == 0) return out;
    const Index blocks = (activations.rows + tile.block_rows - 1) / tile.block_rows;
    parallel_for(blocks, workers, [&](std::int64_t b) {
        const Index m_begin = static_cast<Index>(b) * tile.block_rows;
        const Index m_end = std::min<Index>(m_begin + tile.block_rows, activations.rows);
        gemm_block(activations, weights, packed, mode, m_begin, m_end, out);
    });
    return out;
}

MatrixRMf group_gemm_twostep(const QuantizedTensor& activations,
                             const QuantizedTensor& weights, const TileConfig& tile,
                             I2FMode mode, int workers) {
    return group_gemm_twostep(activations, weights, prepack_weights(weights), tile,
                              mode, workers);
}

MatrixRMf execute_mixed_on_codes(const QuantizedTensor& activations,
                                 const MixedLinearLayer& layer, const TileConfig& tile,
                                 I2FMode mode, int workers) {
    validate_mixed_layer(layer);
    if (activations.cols != layer.in_features) {
        throw UsageError("activation K does not match the layer's in_features");
    }
    if (tile.block_rows < 1) throw UsageError("block_rows must be >= 1");
    const PrepackedWeights packed8 = prepack_weights(layer.sub8);
    const PrepackedWeights packed4 = prepack_weights(layer.sub4);
    if (layer.sub8.rows > 0) check_engine_inputs(activations, layer.sub8);
    if (layer.sub4.rows > 0) check_engine_inputs(activations, layer.sub4);
    if (layer.sub8.rows > 0) resolve_group_tile(tile, layer.sub8);
    if (layer.sub4.rows > 0) resolve_group_tile(tile, layer.sub4);

    MatrixRMf y8 = MatrixRMf::Zero(activations.rows, layer.sub8.rows);
    MatrixRMf y4 = MatrixRMf::Zero(activations.rows, layer.sub4.rows);

    // Both sub-problems feed one task pool; outputs are disjoint.
    const Index blocks = (activations.rows + tile.block_rows - 1) / tile.block_rows;
    struct Task {
        const QuantizedTensor* w;
        const PrepackedWeights* packed;
        MatrixRMf* out;
        Index m_begin, m_end;
    };
    std::vector<Task> tasks;
    for (Index b = 0; b < blocks; ++b) {
        const Index m_begin = b * tile.block_rows;
        const Index m_end = std::min<Index>(m_begin + tile.block_rows, activations.rows);
        if (layer.sub8.rows > 0) tasks.push_back({&layer.sub8, &packed8, &y8, m_begin, m_end});
        if (layer.sub4.rows > 0) tasks.push_back({&layer.sub4, &packed4, &y4, m_begin, m_end});
    }
    parallel_for(static_cast<std::int64_t>(tasks.size()), workers, [&](std::int64_t t) {
        const Task& task = tasks[static_cast<std::size_t>(t)];
        gemm_block(activations, *task.w, *task.packed, mode, task.m_begin, task.m_end,
                   *task.out);
    });

    return reassemble_output(y8, y4, layer.index_map8, layer.index_map4,
                             layer.out_features);
}

MatrixRMf execute_mixed_linear(const Eigen::Ref<const MatrixRMf>& activations,
                               const MixedLinearLayer& layer,
                               const QuantScheme& act_scheme, const TileConfig& tile,
                               I2FMode mode, int workers) {
    if (act_scheme.bit_width != 8 || !act_scheme.symmetric) {
        throw UsageError("activation scheme must be 8-bit symmetric");
    }
    const QuantizedTensor acts = quantize_tensor<float>(activations, act_scheme);
    return execute_mixed_on_codes(acts, layer, tile, mode, workers);
}

std::string fnv1a_hex(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const std::uint8_t*>(data);
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(buf);
}

BenchResult run_bench(Index m, Index n, Index k, double percent, int group_size,
                      I2FMode mode, int workers, int repeats, std::uint64_t seed) {
    if (m < 1 || n < 1 || k < 1) throw UsageError("bench dims must be >= 1");
    if (percent < 0.0 || percent > 1.0) throw UsageError("percent must lie in [0, 1]");
    if (repeats < 1) throw UsageError("repeats must be >= 1");
    Xoshiro256pp rng(seed);
    MatrixRMd weight(n, k);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < k; ++c) weight(r, c) = rng.normal();
    }
    MatrixRMf acts(m, k);
    for (Index r = 0; r < m; ++r) {
        for (Index c = 0; c < k; ++c) acts(r, c) = static_cast<float>(rng.normal());
    }
    const auto n_promoted = static_cast<Index>(std::llround(percent * static_cast<double>(n)));
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    for (Index i = n - 1; i > 0; --i) {
        std::swap(all[static_cast<std::size_t>(i)],
                  all[static_cast<std::size_t>(rng.uniform_int(0, i + 1))]);
    }
    std::vector<int> promoted(all.begin(), all.begin() + n_promoted);

    QuantScheme largebit{8, true, group_size, false};
    QuantScheme smallbit{4, false, group_size, false};
    QuantScheme act_scheme{8, true, group_size, false};
    const MixedLinearLayer layer =
        partition_and_quantize(weight, promoted, largebit, smallbit, "bench");

    const TileConfig tile{};
    MatrixRMf out;
    const auto start = std::chrono::steady_clock::now();
    for (int rep = 0; rep < repeats; ++rep) {
        out = execute_mixed_linear(acts, layer, act_scheme, tile, mode, workers);
    }
    const auto stop = std::chrono::steady_clock::now();
    const double wall_ms =
        std::chrono::duration<double, std::milli>(stop - start).count() / repeats;

    BenchResult result;
    result.m = m;
    result.n = n;
    result.k = k;
    result.percent = percent;
    result.group_size = group_size;
    result.workers = workers;
    result.i2f = mode;
    result.repeats = repeats;
    result.wall_ms = wall_ms;
    result.gops = 2.0 * static_cast<double>(m) * static_cast<double>(n) *
                  static_cast<double>(k) / (wall_ms * 1e6);
    result.checksum = fnv1a_hex(out.data(), static_cast<std::size_t>(out.size()) * 4);
    return result;
}

} // namespace mixquant
