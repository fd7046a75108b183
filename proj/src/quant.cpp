#include "mixquant/quant.hpp"

#include <bit>

namespace mixquant {

void validate_scheme(const QuantScheme& scheme) {
    if (scheme.bit_width != 4 && scheme.bit_width != 8) {
        throw UsageError("bit_width must be 4 or 8, got " +
                         std::to_string(scheme.bit_width));
    }
    if (scheme.group_size < 1) {
        throw UsageError("group_size must be >= 1, got " +
                         std::to_string(scheme.group_size));
    }
}

namespace {

std::uint16_t f32_to_f16_bits(float f) {
    const auto x = std::bit_cast<std::uint32_t>(f);
    const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
    const std::uint32_t exp = (x >> 23) & 0xFFu;
    std::uint32_t mant = x & 0x7FFFFFu;
    if (exp == 0xFFu) { // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0));
    }
    const int half_exp = static_cast<int>(exp) - 127 + 15;
    if (half_exp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u);
    if (half_exp <= 0) {
        if (half_exp < -10) return sign; // underflows to zero
        mant |= 0x800000u;
        const int shift = 14 - half_exp; // 24-bit mantissa down to a 10-bit subnormal
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint16_t h = static_cast<std::uint16_t>(
        sign | (static_cast<std::uint32_t>(half_exp) << 10) | (mant >> 13));
    const std::uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h; // carries into exponent
    return h;
}

float f16_bits_to_f32(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t mant = h & 0x3FFu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            int e = -14;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --e;
            }
            mant &= 0x3FFu;
            bits = sign | (static_cast<std::uint32_t>(e + 127) << 23) | (mant << 13);
        }
    } else if (exp == 0x1Fu) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

} // namespace

float round_scale_f16(float scale) {
    const float rounded = f16_bits_to_f32(f32_to_f16_bits(scale));
    // Smallest positive binary16 subnormal; a scale must stay positive.
    constexpr float f16_min = 5.9604644775390625e-8f;
    return rounded > 0.0f ? rounded : f16_min;
}

void validate_quantized(const QuantizedTensor& q) {
    validate_scheme(q.scheme);
    if (q.rows < 0 || q.cols < 0) throw DataError("quantized tensor has negative shape");
    const Index groups = q.cols == 0 ? 0 : q.num_groups();
    if (q.scales.rows() != q.rows || q.scales.cols() != groups) {
        throw DataError("quantized tensor scale array does not match shape");
    }
    if (!q.scheme.symmetric &&
        (q.zero_points.rows() != q.rows || q.zero_points.cols() != groups)) {
        throw DataError("asymmetric quantized tensor is missing zero points");
    }
    const auto expected = static_cast<std::size_t>(q.rows) *
                          static_cast<std::size_t>(q.row_stride_bytes());
    if (q.payload.size() != expected) {
        throw DataError("quantized tensor payload is " + std::to_string(q.payload.size()) +
                        " bytes, expected " + std::to_string(expected));
    }
    if ((q.scales <= 0.0f).any()) {
        throw DataError("quantized tensor has a non-positive scale");
    }
}

} // namespace mixquant
