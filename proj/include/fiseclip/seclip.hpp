#pragma once

// Text-alignment scoring: cosine similarity of visual features to the normal
// and abnormal text embeddings, scaled by a logit temperature and softmaxed.

#include <array>
#include <vector>

#include "fiseclip/tensor.hpp"

namespace fiseclip {

inline constexpr double kDefaultTau = 100.0;
inline constexpr double kDefaultLambda = 1.10;

struct ClsResult {
  std::array<double, 2> probs{0.5, 0.5};  // {normal, abnormal}
  double score = 0.5;
};

struct SegResult {
  MatrixD probs;  // N x 2, columns {normal, abnormal}
  VectorD score;  // abnormal column
};

// Per-patch suspected-anomaly flags.
using AnomalyMask = std::vector<bool>;

ClsResult classify(const VectorF& f_c, const MatrixF& text, double tau = kDefaultTau);
SegResult segment(const MatrixF& f_s, const MatrixF& text, double tau = kDefaultTau);

// flags[n] = P_a[n] > lambda * P_n[n].
AnomalyMask initial_mask(const SegResult& seg, double lambda = kDefaultLambda);

}  // namespace fiseclip
