#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixquant/errors.hpp"
#include "mixquant/tensor.hpp"
#include "mixquant/types.hpp"

namespace mixquant {

// Affine parameters of one quantization group. symmetric implies
// zero_point == 0; scale is always > 0.
struct GroupQuantParams {
    float scale = 1.0f;
    std::uint8_t zero_point = 0;
    int bit_width = 8;
    bool symmetric = true;
};

struct QuantScheme {
    int bit_width = 4;
    bool symmetric = false;
    int group_size = 128; // along the reduction (in-feature) dimension
    // Stores scales rounded to the binary16 grid. Round-trip codes are
    // computed against the rounded scale, so the s/2 error bound still holds
    // with respect to the stored value; constant-group exactness does not.
    bool scale_f16_storage = false;

    int qmax_unsigned() const { return (1 << bit_width) - 1; }
    int qmax_signed() const { return (1 << (bit_width - 1)) - 1; }
};

void validate_scheme(const QuantScheme& scheme);

// Round a positive f32 scale to the nearest binary16-representable value
// (ties to even), clamped away from zero at the smallest f16 subnormal.
float round_scale_f16(float scale);

struct AsymGroup {
    std::vector<std::uint8_t> codes;
    GroupQuantParams params;
};

struct SymGroup {
    std::vector<std::int8_t> codes;
    GroupQuantParams params;
};

namespace detail {

template <class Scalar>
void check_group(std::span<const Scalar> values) {
    if (values.empty()) throw UsageError("quantize: empty group");
    for (const Scalar v : values) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw DataError("quantize: non-finite input value");
        }
    }
}

// Scales are stored as f32 (optionally rounded to the f16 grid), and codes
// are computed against the stored value, so the s/2 round-trip bound holds
// with respect to the scale a consumer will actually see. `fallback` guards
// ranges so small they underflow the f32 cast.
template <class Scalar>
Scalar store_scale(Scalar scale, Scalar fallback, bool scale_f16) {
    float stored = static_cast<float>(scale);
    if (stored == 0.0f) stored = static_cast<float>(fallback);
    if (scale_f16) stored = round_scale_f16(stored);
    return static_cast<Scalar>(stored);
}

} // namespace detail

// Asymmetric round-to-nearest: s = (max-min)/(2^b - 1),
// z = clamp(round(-min/s), 0, 2^b - 1), code = clamp(round(x/s) + z, 0, 2^b - 1).
// A constant group (max == min == v) uses s = max(|v|, 1e-8) so reconstruction
// of the constant is exact. Rounding is half-away-from-zero throughout.
template <class Scalar>
AsymGroup quantize_group_asym(std::span<const Scalar> values, int bit_width,
                              bool scale_f16 = false) {
    if (bit_width != 4 && bit_width != 8) {
        throw UsageError("quantize_group_asym: bit_width must be 4 or 8");
    }
    detail::check_group(values);
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const Scalar mn = *mn_it, mx = *mx_it;
    const int qmax = (1 << bit_width) - 1;

    const Scalar fallback =
        std::max({std::abs(mn), std::abs(mx), Scalar(1e-8)});
    const Scalar scale = detail::store_scale(
        (mx == mn) ? fallback : (mx - mn) / Scalar(qmax), fallback, scale_f16);

    const auto zero_point = static_cast<std::uint8_t>(std::clamp<long>(
        std::lround(static_cast<double>(std::round(-mn / scale))), 0, qmax));

    AsymGroup out;
    out.codes.reserve(values.size());
    for (const Scalar v : values) {
        const long code = std::lround(static_cast<double>(std::round(v / scale))) +
                          static_cast<long>(zero_point);
        out.codes.push_back(static_cast<std::uint8_t>(std::clamp<long>(code, 0, qmax)));
    }
    out.params = GroupQuantParams{static_cast<float>(scale), zero_point, bit_width, false};
    return out;
}

// Symmetric round-to-nearest: s = max|x| / (2^(b-1) - 1), zero point 0,
// code = clamp(round(x/s), -(2^(b-1) - 1), 2^(b-1) - 1). The all-zero group
// uses s = 1e-8. The code -2^(b-1) is never emitted.
template <class Scalar>
SymGroup quantize_group_sym(std::span<const Scalar> values, int bit_width,
                            bool scale_f16 = false) {
    if (bit_width != 4 && bit_width != 8) {
        throw UsageError("quantize_group_sym: bit_width must be 4 or 8");
    }
    detail::check_group(values);
    Scalar amax = 0;
    for (const Scalar v : values) amax = std::max(amax, std::abs(v));
    const int qmax = (1 << (bit_width - 1)) - 1;

    const Scalar fallback = std::max(amax, Scalar(1e-8));
    const Scalar scale = detail::store_scale(
        (amax == Scalar(0)) ? Scalar(1e-8) : amax / Scalar(qmax), fallback, scale_f16);

    SymGroup out;
    out.codes.reserve(values.size());
    for (const Scalar v : values) {
        const long code = std::lround(static_cast<double>(std::round(v / scale)));
        out.codes.push_back(static_cast<std::int8_t>(std::clamp<long>(code, -qmax, qmax)));
    }
    out.params = GroupQuantParams{static_cast<float>(scale), 0, bit_width, true};
    return out;
}

// Group-wise quantized matrix. Payload is row-major; 4-bit payloads pack two
// codes per byte low-nibble-first with each row padded to a whole byte, so
// the row stride is ceil(cols/2) bytes. Groups run along the column
// (in-feature) dimension; the final group of a row may be ragged.
struct QuantizedTensor {
    QuantScheme scheme;
    Index rows = 0;
    Index cols = 0;
    std::vector<std::uint8_t> payload;
    ArrayRM<float> scales;             // rows x num_groups
    ArrayRM<std::uint8_t> zero_points; // rows x num_groups, asymmetric only

    Index num_groups() const {
        return (cols + scheme.group_size - 1) / scheme.group_size;
    }
    Index group_len(Index g) const {
        return std::min<Index>(scheme.group_size, cols - g * scheme.group_size);
    }
    Index row_stride_bytes() const {
        return scheme.bit_width == 4 ? (cols + 1) / 2 : cols;
    }
    // Raw code at (r, c): unsigned for asymmetric schemes, signed for
    // symmetric ones.
    int code(Index r, Index c) const {
        const std::size_t row_base =
            static_cast<std::size_t>(r) * static_cast<std::size_t>(row_stride_bytes());
        if (scheme.bit_width == 4) {
            const std::uint8_t byte = payload[row_base + static_cast<std::size_t>(c / 2)];
            return (c % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
        }
        const std::uint8_t byte = payload[row_base + static_cast<std::size_t>(c)];
        return scheme.symmetric ? static_cast<int>(static_cast<std::int8_t>(byte))
                                : static_cast<int>(byte);
    }
};

void validate_quantized(const QuantizedTensor& q);

// Quantizes each contiguous group of scheme.group_size elements along the
// row (reduction) dimension independently. Supported schemes: 4-bit
// asymmetric, 8-bit symmetric, 8-bit asymmetric.
template <class Scalar>
QuantizedTensor quantize_tensor(const Eigen::Ref<const MatrixRM<Scalar>>& m,
                                const QuantScheme& scheme) {
    validate_scheme(scheme);
    if (scheme.bit_width == 4 && scheme.symmetric) {
        throw UsageError("quantize_tensor: 4-bit symmetric tensors are not supported");
    }
    QuantizedTensor q;
    q.scheme = scheme;
    q.rows = m.rows();
    q.cols = m.cols();
    const Index groups = m.cols() == 0 ? 0 : q.num_groups();
    q.scales.resize(m.rows(), groups);
    if (!scheme.symmetric) {
        q.zero_points.resize(m.rows(), groups);
    }
    q.payload.assign(
        static_cast<std::size_t>(m.rows()) * static_cast<std::size_t>(q.row_stride_bytes()),
        0);

    for (Index r = 0; r < m.rows(); ++r) {
        std::vector<std::uint8_t> row_u4;
        if (scheme.bit_width == 4) row_u4.reserve(static_cast<std::size_t>(m.cols()));
        for (Index g = 0; g < groups; ++g) {
            const Index begin = g * scheme.group_size;
            const Index len = q.group_len(g);
            const std::span<const Scalar> group(m.row(r).data() + begin,
                                                static_cast<std::size_t>(len));
            try {
                if (scheme.symmetric) {
                    auto res = quantize_group_sym(group, scheme.bit_width,
                                                  scheme.scale_f16_storage);
                    q.scales(r, g) = res.params.scale;
                    auto* dst = q.payload.data() +
                                r * q.row_stride_bytes() + begin;
                    std::memcpy(dst, res.codes.data(), res.codes.size());
                } else {
                    auto res = quantize_group_asym(group, scheme.bit_width,
                                                   scheme.scale_f16_storage);
                    q.scales(r, g) = res.params.scale;
                    q.zero_points(r, g) = res.params.zero_point;
                    if (scheme.bit_width == 4) {
                        row_u4.insert(row_u4.end(), res.codes.begin(), res.codes.end());
                    } else {
                        auto* dst = q.payload.data() + r * q.row_stride_bytes() + begin;
                        std::memcpy(dst, res.codes.data(), res.codes.size());
                    }
                }
            } catch (const DataError& e) {
                throw DataError("row " + std::to_string(r) + ", group " +
                                std::to_string(g) + ": " + e.what());
            }
        }
        if (scheme.bit_width == 4 && m.cols() > 0) {
            const auto packed = pack_nibbles(row_u4);
            std::memcpy(q.payload.data() + r * q.row_stride_bytes(), packed.data(),
                        packed.size());
        }
    }
    return q;
}

// Per-element x' = (code - z) * s, evaluated in Scalar precision.
template <class Scalar>
MatrixRM<Scalar> dequantize_tensor(const QuantizedTensor& q) {
    validate_quantized(q);
    MatrixRM<Scalar> m(q.rows, q.cols);
    for (Index r = 0; r < q.rows; ++r) {
        for (Index g = 0; g < q.num_groups(); ++g) {
            const Index begin = g * q.scheme.group_size;
            const Index len = q.group_len(g);
            const auto scale = static_cast<Scalar>(q.scales(r, g));
            const int zero = q.scheme.symmetric ? 0 : q.zero_points(r, g);
            for (Index c = begin; c < begin + len; ++c) {
                m(r, c) = static_cast<Scalar>(q.code(r, c) - zero) * scale;
            }
        }
    }
    return m;
}

} // namespace mixquant
