#include "fiseclip/tensor.hpp"

#include <bit>
#include <cstring>
#include <numeric>
#include <sstream>

#include "fiseclip/error.hpp"

namespace fiseclip {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

std::string_view to_string(DType dtype) { return dtype == DType::kF32 ? "f32" : "u8"; }

DType dtype_from_string(std::string_view name) {
  if (name == "f32") return DType::kF32;
  if (name == "u8") return DType::kU8;
  throw BundleError("unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType dtype) { return dtype == DType::kF32 ? 4 : 1; }

std::string shape_to_string(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::int64_t product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(DType dtype, std::vector<std::int64_t> shape) : dtype_(dtype), shape_(std::move(shape)) {
  const auto n = static_cast<std::size_t>(product(shape_));
  if (dtype_ == DType::kF32) {
    data_ = std::vector<float>(n, 0.0f);
  } else {
    data_ = std::vector<std::uint8_t>(n, 0);
  }
}

Tensor Tensor::from_matrix(const MatrixF& m) {
  Tensor t(DType::kF32, {m.rows(), m.cols()});
  std::memcpy(t.f32().data(), m.data(), sizeof(float) * static_cast<std::size_t>(m.size()));
  return t;
}

Tensor Tensor::from_vector(const VectorF& v) {
  Tensor t(DType::kF32, {v.size()});
  std::memcpy(t.f32().data(), v.data(), sizeof(float) * static_cast<std::size_t>(v.size()));
  return t;
}

Tensor Tensor::from_bytes(std::vector<std::int64_t> shape, std::vector<std::uint8_t> bytes) {
  Tensor t;
  t.dtype_ = DType::kU8;
  t.shape_ = std::move(shape);
  if (static_cast<std::size_t>(product(t.shape_)) != bytes.size()) {
    throw ShapeError("byte payload does not match shape " + shape_to_string(t.shape_));
  }
  t.data_ = std::move(bytes);
  return t;
}

std::int64_t Tensor::numel() const { return product(shape_); }

std::span<float> Tensor::f32() {
  if (dtype_ != DType::kF32) throw ShapeError("tensor is not f32");
  return std::get<std::vector<float>>(data_);
}
std::span<const float> Tensor::f32() const {
  if (dtype_ != DType::kF32) throw ShapeError("tensor is not f32");
  return std::get<std::vector<float>>(data_);
}
std::span<std::uint8_t> Tensor::u8() {
  if (dtype_ != DType::kU8) throw ShapeError("tensor is not u8");
  return std::get<std::vector<std::uint8_t>>(data_);
}
std::span<const std::uint8_t> Tensor::u8() const {
  if (dtype_ != DType::kU8) throw ShapeError("tensor is not u8");
  return std::get<std::vector<std::uint8_t>>(data_);
}

ConstMatrixMap<float> Tensor::slice(std::int64_t leading) const {
  if (shape_.size() != 3) throw ShapeError("slice() needs a rank-3 tensor, got " + shape_to_string(shape_));
  if (leading < 0 || leading >= shape_[0]) throw ShapeError("slice index out of range");
  const auto rows = shape_[1];
  const auto cols = shape_[2];
  return ConstMatrixMap<float>(f32().data() + leading * rows * cols, rows, cols);
}

ConstMatrixMap<float> Tensor::as_matrix(Index rows, Index cols) const {
  if (rows * cols != numel()) {
    throw ShapeError("cannot view " + shape_to_string(shape_) + " as " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  return ConstMatrixMap<float>(f32().data(), rows, cols);
}

std::vector<std::uint8_t> Tensor::to_bytes() const {
  std::vector<std::uint8_t> out(byte_length());
  if (dtype_ == DType::kF32) {
    std::memcpy(out.data(), f32().data(), out.size());
  } else {
    std::memcpy(out.data(), u8().data(), out.size());
  }
  return out;
}

Tensor Tensor::decode(DType dtype, std::vector<std::int64_t> shape, std::span<const std::uint8_t> bytes) {
  Tensor t(dtype, std::move(shape));
  if (bytes.size() != t.byte_length()) throw ShapeError("payload size does not match shape");
  if (dtype == DType::kF32) {
    std::memcpy(t.f32().data(), bytes.data(), bytes.size());
  } else {
    std::memcpy(t.u8().data(), bytes.data(), bytes.size());
  }
  return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.to_bytes() == b.to_bytes();
}

}  // namespace fiseclip
