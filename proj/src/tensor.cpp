#include "mixquant/tensor.hpp"

#include <cstring>

namespace mixquant {

std::string_view dtype_name(Dtype dtype) {
    switch (dtype) {
        case Dtype::F64: return "f64";
        case Dtype::F32: return "f32";
        case Dtype::I32: return "i32";
        case Dtype::I8: return "i8";
        case Dtype::U8: return "u8";
        case Dtype::U4Packed: return "u4-packed";
    }
    throw DataError("dtype_name: invalid dtype");
}

Dtype dtype_from_name(std::string_view name) {
    if (name == "f64") return Dtype::F64;
    if (name == "f32") return Dtype::F32;
    if (name == "i32") return Dtype::I32;
    if (name == "i8") return Dtype::I8;
    if (name == "u8") return Dtype::U8;
    if (name == "u4-packed") return Dtype::U4Packed;
    throw DataError("unknown dtype '" + std::string(name) + "'");
}

std::int64_t dtype_payload_bytes(Dtype dtype, std::int64_t count) {
    switch (dtype) {
        case Dtype::F64: return count * 8;
        case Dtype::F32: return count * 4;
        case Dtype::I32: return count * 4;
        case Dtype::I8: return count;
        case Dtype::U8: return count;
        case Dtype::U4Packed: return (count + 1) / 2;
    }
    throw DataError("dtype_payload_bytes: invalid dtype");
}

std::int64_t DenseTensor::count() const {
    std::int64_t n = 1;
    for (std::int64_t dim : shape) n *= dim;
    return n;
}

DenseTensor make_tensor(std::vector<std::int64_t> shape, Dtype dtype,
                        std::vector<std::uint8_t> data) {
    if (shape.empty()) throw DataError("tensor shape must have at least one dimension");
    std::int64_t count = 1;
    for (std::int64_t dim : shape) {
        if (dim < 1) throw DataError("tensor dimensions must be >= 1");
        count *= dim;
    }
    const std::int64_t expected = dtype_payload_bytes(dtype, count);
    if (static_cast<std::int64_t>(data.size()) != expected) {
        throw DataError("tensor payload is " + std::to_string(data.size()) +
                        " bytes, expected " + std::to_string(expected));
    }
    return DenseTensor{std::move(shape), dtype, std::move(data)};
}

std::vector<std::uint8_t> pack_nibbles(std::span<const std::uint8_t> values) {
    std::vector<std::uint8_t> packed((values.size() + 1) / 2, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint8_t v = values[i];
        if (v > 15) {
            throw DataError("pack_nibbles: value " + std::to_string(v) +
                            " at index " + std::to_string(i) + " is out of [0, 15]");
        }
        if (i % 2 == 0) {
            packed[i / 2] = v; // low nibble first
        } else {
            packed[i / 2] |= static_cast<std::uint8_t>(v << 4);
        }
    }
    return packed;
}

std::vector<std::uint8_t> unpack_nibbles(std::span<const std::uint8_t> bytes,
                                         std::int64_t count) {
    if (count < 0 || count > static_cast<std::int64_t>(bytes.size()) * 2) {
        throw DataError("unpack_nibbles: count " + std::to_string(count) +
                        " exceeds capacity of " + std::to_string(bytes.size()) +
                        " bytes");
    }
    std::vector<std::uint8_t> values(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        const std::uint8_t byte = bytes[static_cast<std::size_t>(i / 2)];
        values[static_cast<std::size_t>(i)] =
            (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
    }
    return values;
}

} // namespace mixquant
