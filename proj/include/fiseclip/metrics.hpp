#pragma once

// Detection and segmentation metrics computed from raw scores. Thresholds are
// the distinct observed score values; no fixed grid is used.

#include <cstdint>
#include <span>
#include <vector>

#include "fiseclip/tensor.hpp"

namespace fiseclip {

struct ScoredSample {
  double score = 0.0;
  int label = 0;  // 1 = anomalous
};

inline constexpr double kDefaultFprCap = 0.3;

// P(s+ > s-) + 0.5 P(s+ = s-), via average ranks.
double auroc(std::span<const ScoredSample> samples);
// Sum over descending distinct thresholds of (R_k - R_{k-1}) * P_k.
double average_precision(std::span<const ScoredSample> samples);
// Maximum F1 over thresholds at every distinct score, predicting score >= t.
double f1max(std::span<const ScoredSample> samples);

// 8-connected components of a binary mask. labels(y, x) = 0 for background,
// otherwise 1..count.
struct RegionLabels {
  RowMatrix<std::int32_t> labels;
  std::int32_t count = 0;
};
RegionLabels label_regions(const MatrixF& mask);

// Area under the per-region-overlap curve up to fpr_cap, divided by fpr_cap.
double aupro(const std::vector<MatrixF>& score_maps, const std::vector<MatrixF>& gt_masks,
             double fpr_cap = kDefaultFprCap);

}  // namespace fiseclip
