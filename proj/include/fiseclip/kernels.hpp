#pragma once

// Dense kernels shared by every stage of the pipeline.
//
// All reductions accumulate in double in a fixed sequential order, so results
// are bit-identical across runs and thread counts. Inputs are any Eigen dense
// expression; outputs are row-major matrices of the input scalar type.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fiseclip/error.hpp"
#include "fiseclip/tensor.hpp"

namespace fiseclip {

enum class Axis { kRows = 0, kCols = 1 };

template <typename DerivedA, typename DerivedB>
RowMatrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a_expr,
                                            const Eigen::MatrixBase<DerivedB>& b_expr) {
  using Scalar = typename DerivedA::Scalar;
  if (a_expr.cols() != b_expr.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a_expr.cols()) + " and " +
                     std::to_string(b_expr.rows()) + " disagree");
  }
  const RowMatrix<Scalar> a = a_expr;
  // Column-major copy of b so the inner loop walks contiguous memory.
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> b = b_expr;
  RowMatrix<Scalar> c(a.rows(), b.cols());
  const Index k = a.cols();
  for (Index i = 0; i < a.rows(); ++i) {
    const Scalar* arow = a.data() + i * k;
    for (Index j = 0; j < b.cols(); ++j) {
      const Scalar* bcol = b.data() + j * k;
      double acc = 0.0;
      for (Index t = 0; t < k; ++t) acc += static_cast<double>(arow[t]) * static_cast<double>(bcol[t]);
      c(i, j) = static_cast<Scalar>(acc);
    }
  }
  return c;
}

// Softmax of every row (the last dimension), with max subtraction.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_lastdim(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.cols() < 1) throw ShapeError("softmax_lastdim: last dimension is empty");
  RowMatrix<Scalar> out(x.rows(), x.cols());
  std::vector<double> e(static_cast<std::size_t>(x.cols()));
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = static_cast<double>(x(i, 0));
    for (Index j = 1; j < x.cols(); ++j) mx = std::max(mx, static_cast<double>(x(i, j)));
    double sum = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      e[j] = std::exp(static_cast<double>(x(i, j)) - mx);
      sum += e[j];
    }
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = static_cast<Scalar>(e[j] / sum);
  }
  return out;
}

// Unit-normalizes each row (Axis::kCols, i.e. along the column axis) or each
// column (Axis::kRows). Zero slices pass through unchanged.
template <typename Derived>
RowMatrix<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& x, Axis axis = Axis::kCols) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = x;
  const bool rows = axis == Axis::kCols;
  const Index slices = rows ? out.rows() : out.cols();
  const Index len = rows ? out.cols() : out.rows();
  for (Index s = 0; s < slices; ++s) {
    double ss = 0.0;
    for (Index t = 0; t < len; ++t) {
      const double v = rows ? out(s, t) : out(t, s);
      ss += v * v;
    }
    if (ss == 0.0) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (Index t = 0; t < len; ++t) {
      Scalar& v = rows ? out(s, t) : out(t, s);
      v = static_cast<Scalar>(static_cast<double>(v) * inv);
    }
  }
  return out;
}

// Mean over the in-bounds cells of the r x r window centred on each cell of a
// height x width grid. `x` holds one grid cell per row (row = h * width + w).
template <typename Derived>
RowMatrix<typename Derived::Scalar> avgpool_neighborhood(const Eigen::MatrixBase<Derived>& x, Index height,
                                                         Index width, int r) {
  using Scalar = typename Derived::Scalar;
  if (r < 1 || r % 2 == 0) throw ParameterError("avgpool_neighborhood: window " + std::to_string(r) + " is not odd");
  if (x.rows() != height * width) throw ShapeError("avgpool_neighborhood: row count is not height*width");
  const Index half = r / 2;
  const Index d = x.cols();
  RowMatrix<Scalar> out(x.rows(), d);
  std::vector<double> acc(static_cast<std::size_t>(d));
  for (Index h = 0; h < height; ++h) {
    for (Index w = 0; w < width; ++w) {
      std::fill(acc.begin(), acc.end(), 0.0);
      Index count = 0;
      for (Index dh = -half; dh <= half; ++dh) {
        const Index hh = h + dh;
        if (hh < 0 || hh >= height) continue;
        for (Index dw = -half; dw <= half; ++dw) {
          const Index ww = w + dw;
          if (ww < 0 || ww >= width) continue;
          const Index src = hh * width + ww;
          for (Index c = 0; c < d; ++c) acc[c] += static_cast<double>(x(src, c));
          ++count;
        }
      }
      const Index dst = h * width + w;
      for (Index c = 0; c < d; ++c) out(dst, c) = static_cast<Scalar>(acc[c] / static_cast<double>(count));
    }
  }
  return out;
}

namespace detail {

struct Tap {
  Index lo;
  Index hi;
  double frac;  // weight of `hi`
};

inline std::vector<Tap> bilinear_taps(Index src, Index dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (Index i = 0; i < dst; ++i) {
    double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const auto lo = static_cast<Index>(std::floor(s));
    const Index hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

// Bilinear resampling with half-pixel centres: src = (dst + 0.5) * scale - 0.5,
// clamped to the valid source range.
template <typename Derived>
RowMatrix<typename Derived::Scalar> bilinear_upsample(const Eigen::MatrixBase<Derived>& map, Index out_h, Index out_w) {
  using Scalar = typename Derived::Scalar;
  if (out_h < 1 || out_w < 1) throw ParameterError("bilinear_upsample: target extent must be positive");
  if (map.rows() < 1 || map.cols() < 1) throw ShapeError("bilinear_upsample: empty source map");
  const auto ty = detail::bilinear_taps(map.rows(), out_h);
  const auto tx = detail::bilinear_taps(map.cols(), out_w);
  RowMatrix<Scalar> out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (Index x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      const double top = (1.0 - b.frac) * map(a.lo, b.lo) + b.frac * map(a.lo, b.hi);
      const double bot = (1.0 - b.frac) * map(a.hi, b.lo) + b.frac * map(a.hi, b.hi);
      out(y, x) = static_cast<Scalar>((1.0 - a.frac) * top + a.frac * bot);
    }
  }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<Index>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (Index i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
  }
  return k;
}

// Separable Gaussian smoothing; taps falling outside the map are dropped and
// the remaining weights renormalized.
template <typename Derived>
RowMatrix<typename Derived::Scalar> gaussian_blur(const Eigen::MatrixBase<Derived>& map, double sigma) {
  using Scalar = typename Derived::Scalar;
  if (!(sigma >= 0.0)) throw ParameterError("gaussian_blur: sigma must be non-negative");
  RowMatrix<Scalar> out = map;
  if (sigma == 0.0) return out;
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<Index>(k.size() / 2);
  const Index h = map.rows();
  const Index w = map.cols();
  MatrixD tmp(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      double norm = 0.0;
      for (Index t = -radius; t <= radius; ++t) {
        const Index xx = x + t;
        if (xx < 0 || xx >= w) continue;
        acc += k[t + radius] * static_cast<double>(map(y, xx));
        norm += k[t + radius];
      }
      tmp(y, x) = acc / norm;
    }
  }
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      double norm = 0.0;
      for (Index t = -radius; t <= radius; ++t) {
        const Index yy = y + t;
        if (yy < 0 || yy >= h) continue;
        acc += k[t + radius] * tmp(yy, x);
        norm += k[t + radius];
      }
      out(y, x) = static_cast<Scalar>(acc / norm);
    }
  }
  return out;
}

template <typename Derived, typename DerivedS, typename DerivedB>
RowMatrix<typename Derived::Scalar> layernorm(const Eigen::MatrixBase<Derived>& x, const Eigen::MatrixBase<DerivedS>& scale,
                                              const Eigen::MatrixBase<DerivedB>& bias, double eps = 1e-5) {
  using Scalar = typename Derived::Scalar;
  const Index d = x.cols();
  if (scale.size() != d || bias.size() != d) {
    throw ShapeError("layernorm: affine parameters have " + std::to_string(scale.size()) + "/" +
                     std::to_string(bias.size()) + " entries for width " + std::to_string(d));
  }
  RowMatrix<Scalar> out(x.rows(), d);
  for (Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Index j = 0; j < d; ++j) mean += static_cast<double>(x(i, j));
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double c = static_cast<double>(x(i, j)) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Index j = 0; j < d; ++j) {
      out(i, j) = static_cast<Scalar>((static_cast<double>(x(i, j)) - mean) * inv * static_cast<double>(scale(j)) +
                                      static_cast<double>(bias(j)));
    }
  }
  return out;
}

}  // namespace fiseclip
