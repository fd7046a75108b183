#pragma once

#include <bit>
#include <cassert>
#include <cstdint>
#include <string>

#include "mixquant/mixed.hpp"
#include "mixquant/quant.hpp"

namespace mixquant {

// Bit-pattern constants of the fast integer-to-float conversion. The float
// and the int32 with pattern 0x4B400000 sit in a range where consecutive
// int32 values map to consecutive float32 values, so adding the integer bias,
// reinterpreting, and subtracting the float bias converts exactly for every
// integer in [-2^22, 2^22).
struct I2FConstants {
    static constexpr std::int32_t bias_int = 0x4B400000;
    static constexpr float bias_fp = std::bit_cast<float>(bias_int); // 12582912.0f
    static constexpr std::int32_t safe_min = -(1 << 22);
    static constexpr std::int32_t safe_max = 1 << 22; // exclusive
};

// Exact for x in [-2^22, 2^22). Out-of-range inputs assert in debug builds
// and silently wrap in release builds, mirroring the kernel contract.
inline float fast_i2f(std::int32_t x) {
    assert(x >= I2FConstants::safe_min && x < I2FConstants::safe_max);
    const std::int32_t tmp = x + I2FConstants::bias_int;
    return std::bit_cast<float>(tmp) - I2FConstants::bias_fp;
}

enum class I2FMode { Native, Fast };

// block_rows tiles the output (token) dimension; each (sub-problem, row
// tile) pair is one task. group_tile is the K-span processed per integer
// accumulator round; 0 adopts the weights' quantization group size. The
// fast-I2F dot-product bound caps it at 128.
struct TileConfig {
    int block_rows = 32;
    int group_tile = 0;
};

// Ahead-of-time reorder of a quantized weight payload into the engine's
// group-major tile layout: for each K-group, all rows' codes for that group,
// row-contiguous, one byte per code. Codes are raw; zero-point subtraction
// stays in step 1 of the pipeline.
struct PrepackedWeights {
    Index rows = 0;
    Index cols = 0;
    int group_size = 128;
    std::vector<std::uint8_t> codes;

    std::size_t group_offset(Index group, Index row) const {
        const Index begin = static_cast<Index>(group) * group_size;
        const Index len = std::min<Index>(group_size, cols - begin);
        return static_cast<std::size_t>(rows * begin + row * len);
    }
};

PrepackedWeights prepack_weights(const QuantizedTensor& weights);

// Reference two-step group GEMM: per K-group, step 1 subtracts the weight
// zero point in the integer domain and accumulates the int8 dot product in a
// 32-bit integer; the group sum is converted to float (natively or via the
// fused-bias fast path) and multiplied by s_a * s_w into a float32 global
// accumulator. Groups run in ascending order, so results are deterministic
// and identical for any worker count. Activations must be 8-bit symmetric
// with the same group size as the weights.
MatrixRMf group_gemm_twostep(const QuantizedTensor& activations,
                             const QuantizedTensor& weights,
                             const PrepackedWeights& packed,
                             const TileConfig& tile = {},
                             I2FMode mode = I2FMode::Fast, int workers = 1);

MatrixRMf group_gemm_twostep(const QuantizedTensor& activations,
                             const QuantizedTensor& weights,
                             const TileConfig& tile = {},
                             I2FMode mode = I2FMode::Fast, int workers = 1);

// Runs both sub-problems of a mixed layer on already-quantized activations
// (same task pool, disjoint outputs) and scatters the results back to the
// original channel order.
MatrixRMf execute_mixed_on_codes(const QuantizedTensor& activations,
                                 const MixedLinearLayer& layer,
                                 const TileConfig& tile = {},
                                 I2FMode mode = I2FMode::Fast, int workers = 1);

// Full dynamic path: group-wise symmetric 8-bit quantization of A, then the
// mixed GEMM. Output equals A . dequant(W)^T up to quantization error.
MatrixRMf execute_mixed_linear(const Eigen::Ref<const MatrixRMf>& activations,
                               const MixedLinearLayer& layer,
                               const QuantScheme& act_scheme,
                               const TileConfig& tile = {},
                               I2FMode mode = I2FMode::Fast, int workers = 1);

struct BenchResult {
    Index m = 0, n = 0, k = 0;
    double percent = 0.0;
    int group_size = 128;
    int workers = 1;
    I2FMode i2f = I2FMode::Fast;
    int repeats = 1;
    double wall_ms = 0.0;
    double gops = 0.0;
    std::string checksum;
};

BenchResult run_bench(Index m, Index n, Index k, double percent, int group_size,
                      I2FMode mode, int workers, int repeats, std::uint64_t seed);

// FNV-1a 64 over raw bytes, hex-encoded; used for bench output checksums.
std::string fnv1a_hex(const void* data, std::size_t size);

} // namespace mixquant
