#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixquant/errors.hpp"
#include "mixquant/types.hpp"

namespace mixquant {

enum class Dtype { F64, F32, I32, I8, U8, U4Packed };

std::string_view dtype_name(Dtype dtype);
Dtype dtype_from_name(std::string_view name);

// Bytes needed to hold `count` elements. U4Packed stores two values per byte,
// padded to a whole byte.
std::int64_t dtype_payload_bytes(Dtype dtype, std::int64_t count);

// Contiguous row-major tensor with a raw byte payload. Immutable by
// convention once built; construct through make_tensor so the payload-size
// and shape invariants always hold.
struct DenseTensor {
    std::vector<std::int64_t> shape;
    Dtype dtype = Dtype::F32;
    std::vector<std::uint8_t> data;

    std::int64_t count() const;
};

DenseTensor make_tensor(std::vector<std::int64_t> shape, Dtype dtype,
                        std::vector<std::uint8_t> data);

// Packs unsigned 4-bit values two per byte, low nibble first; an odd count
// pads the final high nibble with 0. Values outside [0, 15] are a DataError.
std::vector<std::uint8_t> pack_nibbles(std::span<const std::uint8_t> values);

// Inverse of pack_nibbles for the first `count` values.
std::vector<std::uint8_t> unpack_nibbles(std::span<const std::uint8_t> bytes,
                                         std::int64_t count);

namespace detail {

template <class Scalar> struct DtypeOf;
template <> struct DtypeOf<double> { static constexpr Dtype value = Dtype::F64; };
template <> struct DtypeOf<float> { static constexpr Dtype value = Dtype::F32; };
template <> struct DtypeOf<std::int32_t> { static constexpr Dtype value = Dtype::I32; };
template <> struct DtypeOf<std::int8_t> { static constexpr Dtype value = Dtype::I8; };
template <> struct DtypeOf<std::uint8_t> { static constexpr Dtype value = Dtype::U8; };

} // namespace detail

// Bridges between 2-D tensors and Eigen matrices (and 1-D tensors / vectors).
template <class Scalar>
DenseTensor matrix_to_tensor(const Eigen::Ref<const MatrixRM<Scalar>>& m) {
    static_assert(sizeof(Scalar) == sizeof(Scalar)); // placeholder for POD scalars
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * sizeof(Scalar));
    MatrixRM<Scalar> contiguous = m;
    std::memcpy(bytes.data(), contiguous.data(), bytes.size());
    return make_tensor({m.rows(), m.cols()}, detail::DtypeOf<Scalar>::value,
                       std::move(bytes));
}

template <class Scalar>
MatrixRM<Scalar> tensor_to_matrix(const DenseTensor& t) {
    if (t.shape.size() != 2) {
        throw DataError("tensor_to_matrix: expected a 2-D tensor, got " +
                        std::to_string(t.shape.size()) + " dims");
    }
    if (t.dtype != detail::DtypeOf<Scalar>::value) {
        throw DataError(std::string("tensor_to_matrix: dtype mismatch, tensor is ") +
                        std::string(dtype_name(t.dtype)));
    }
    MatrixRM<Scalar> m(t.shape[0], t.shape[1]);
    std::memcpy(m.data(), t.data.data(), t.data.size());
    return m;
}

template <class Scalar>
DenseTensor vector_to_tensor(const std::vector<Scalar>& v) {
    std::vector<std::uint8_t> bytes(v.size() * sizeof(Scalar));
    std::memcpy(bytes.data(), v.data(), bytes.size());
    return make_tensor({static_cast<std::int64_t>(v.size())},
                       detail::DtypeOf<Scalar>::value, std::move(bytes));
}

} // namespace mixquant
