#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace fiseclip {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = RowMatrix<float>;
using MatrixD = RowMatrix<double>;
using VectorF = Vector<float>;
using VectorD = Vector<double>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

enum class DType { kF32, kU8 };

std::string_view to_string(DType dtype);
DType dtype_from_string(std::string_view name);
std::size_t dtype_size(DType dtype);

// Dense row-major tensor of f32 or u8 values with an arbitrary extent list.
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, std::vector<std::int64_t> shape);

  static Tensor from_matrix(const MatrixF& m);
  static Tensor from_vector(const VectorF& v);
  static Tensor from_bytes(std::vector<std::int64_t> shape, std::vector<std::uint8_t> bytes);

  DType dtype() const { return dtype_; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t numel() const;
  std::size_t byte_length() const { return static_cast<std::size_t>(numel()) * dtype_size(dtype_); }

  std::span<float> f32();
  std::span<const float> f32() const;
  std::span<std::uint8_t> u8();
  std::span<const std::uint8_t> u8() const;

  // Views the trailing two extents of sub-tensor `leading` as a row-major matrix.
  ConstMatrixMap<float> slice(std::int64_t leading) const;
  // Views the whole f32 tensor as rows x cols (rows * cols must equal numel).
  ConstMatrixMap<float> as_matrix(Index rows, Index cols) const;

  // Little-endian byte image of the payload.
  std::vector<std::uint8_t> to_bytes() const;
  static Tensor decode(DType dtype, std::vector<std::int64_t> shape, std::span<const std::uint8_t> bytes);

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  DType dtype_ = DType::kF32;
  std::vector<std::int64_t> shape_;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> data_;
};

std::string shape_to_string(std::span<const std::int64_t> shape);

}  // namespace fiseclip
