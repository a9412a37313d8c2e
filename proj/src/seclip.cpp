#include "fiseclip/seclip.hpp"

#include <cmath>
#include <string>

#include "fiseclip/error.hpp"

namespace fiseclip {

namespace {

void check_text(const MatrixF& text, Index width) {
  if (text.rows() != 2 || text.cols() != width) {
    throw ShapeError("text features must be 2 x " + std::to_string(width) + ", got " + std::to_string(text.rows()) +
                     " x " + std::to_string(text.cols()));
  }
}

// Softmax over the two cosine logits of one visual row.
std::array<double, 2> align(const float* row, Index width, const MatrixF& text, double tau) {
  double ss = 0.0;
  double dot[2] = {0.0, 0.0};
  for (Index j = 0; j < width; ++j) {
    const double v = row[j];
    ss += v * v;
    dot[0] += v * static_cast<double>(text(0, j));
    dot[1] += v * static_cast<double>(text(1, j));
  }
  const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
  const double l0 = tau * dot[0] * inv;
  const double l1 = tau * dot[1] * inv;
  const double mx = std::max(l0, l1);
  const double e0 = std::exp(l0 - mx);
  const double e1 = std::exp(l1 - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

ClsResult classify(const VectorF& f_c, const MatrixF& text, double tau) {
  check_text(text, f_c.size());
  ClsResult r;
  r.probs = align(f_c.data(), f_c.size(), text, tau);
  r.score = r.probs[1];
  return r;
}

SegResult segment(const MatrixF& f_s, const MatrixF& text, double tau) {
  check_text(text, f_s.cols());
  SegResult r;
  r.probs.resize(f_s.rows(), 2);
  r.score.resize(f_s.rows());
  for (Index n = 0; n < f_s.rows(); ++n) {
    const auto p = align(f_s.data() + n * f_s.cols(), f_s.cols(), text, tau);
    r.probs(n, 0) = p[0];
    r.probs(n, 1) = p[1];
    r.score(n) = p[1];
  }
  return r;
}

AnomalyMask initial_mask(const SegResult& seg, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("initial_mask: lambda must be positive");
  AnomalyMask flags(static_cast<std::size_t>(seg.probs.rows()));
  for (Index n = 0; n < seg.probs.rows(); ++n) flags[n] = seg.probs(n, 1) > lambda * seg.probs(n, 0);
  return flags;
}

}  // namespace fiseclip
