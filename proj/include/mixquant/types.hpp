#pragma once

#include <Eigen/Dense>

namespace mixquant {

// Row-major dense types. Payloads on disk are row-major, and output channels
// are weight rows, so row-major keeps rows/groups contiguous in memory.
template <class Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using ArrayRM = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixRMf = MatrixRM<float>;
using MatrixRMd = MatrixRM<double>;
using MatrixRMi8 = MatrixRM<std::int8_t>;

using Index = Eigen::Index;

} // namespace mixquant
