#include "fiseclip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fiseclip/error.hpp"

namespace fiseclip {

namespace {

struct Counts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

Counts count_labels(std::span<const ScoredSample> samples) {
  Counts c;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw ParameterError("metric input contains a non-finite score");
    (s.label ? c.positives : c.negatives)++;
  }
  return c;
}

// Indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> descending_order(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return samples[a].score > samples[b].score; });
  return order;
}

// Calls fn(tp, fp) after each group of tied scores, highest scores first.
template <typename Fn>
void sweep_thresholds(std::span<const ScoredSample> samples, Fn fn) {
  const auto order = descending_order(samples);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = samples[order[i]].score;
    for (; i < order.size() && samples[order[i]].score == s; ++i) (samples[order[i]].label ? tp : fp)++;
    fn(tp, fp);
  }
}

}  // namespace

double auroc(std::span<const ScoredSample> samples) {
  const auto c = count_labels(samples);
  if (c.positives == 0 || c.negatives == 0) throw UndefinedMetricError("AU-ROC needs both positive and negative samples");
  auto order = descending_order(samples);
  std::reverse(order.begin(), order.end());
  // Sum of 1-based average ranks of the positives in ascending score order.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double s = samples[order[i]].score;
    std::size_t pos = 0;
    while (j < order.size() && samples[order[j]].score == s) pos += samples[order[j++]].label ? 1 : 0;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(pos);
    i = j;
  }
  const double p = static_cast<double>(c.positives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(c.negatives));
}

double average_precision(std::span<const ScoredSample> samples) {
  const auto c = count_labels(samples);
  if (c.positives == 0) throw UndefinedMetricError("AP needs at least one positive sample");
  const double p = static_cast<double>(c.positives);
  double ap = 0.0;
  double prev_recall = 0.0;
  sweep_thresholds(samples, [&](std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / p;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  });
  return ap;
}

double f1max(std::span<const ScoredSample> samples) {
  const auto c = count_labels(samples);
  if (c.positives == 0) throw UndefinedMetricError("F1-max needs at least one positive sample");
  double best = 0.0;
  sweep_thresholds(samples, [&](std::size_t tp, std::size_t fp) {
    const double fn = static_cast<double>(c.positives - tp);
    const double f1 = 2.0 * static_cast<double>(tp) / (2.0 * static_cast<double>(tp) + static_cast<double>(fp) + fn);
    best = std::max(best, f1);
  });
  return best;
}

RegionLabels label_regions(const MatrixF& mask) {
  RegionLabels out;
  out.labels = RowMatrix<std::int32_t>::Zero(mask.rows(), mask.cols());
  std::vector<std::pair<Index, Index>> stack;
  for (Index y = 0; y < mask.rows(); ++y) {
    for (Index x = 0; x < mask.cols(); ++x) {
      if (mask(y, x) <= 0.5f || out.labels(y, x) != 0) continue;
      const std::int32_t id = ++out.count;
      out.labels(y, x) = id;
      stack.push_back({y, x});
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index ny = cy + dy;
            const Index nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= mask.rows() || nx >= mask.cols()) continue;
            if (mask(ny, nx) <= 0.5f || out.labels(ny, nx) != 0) continue;
            out.labels(ny, nx) = id;
            stack.push_back({ny, nx});
          }
        }
      }
    }
  }
  return out;
}

double aupro(const std::vector<MatrixF>& score_maps, const std::vector<MatrixF>& gt_masks, double fpr_cap) {
  if (score_maps.size() != gt_masks.size()) throw ShapeError("aupro: map and mask counts differ");
  if (!(fpr_cap > 0.0 && fpr_cap <= 1.0)) throw ParameterError("aupro: fpr_cap must lie in (0, 1]");

  // Pool all pixels: score plus a global region id (-1 for anomaly-free pixels).
  std::vector<double> scores;
  std::vector<std::int64_t> region;
  std::vector<std::size_t> region_size;
  std::size_t negatives = 0;
  for (std::size_t m = 0; m < score_maps.size(); ++m) {
    const auto& s = score_maps[m];
    const auto& g = gt_masks[m];
    if (s.rows() != g.rows() || s.cols() != g.cols()) throw ShapeError("aupro: map and mask resolutions differ");
    const auto labels = label_regions(g);
    const auto base = static_cast<std::int64_t>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(labels.count), 0);
    for (Index y = 0; y < s.rows(); ++y) {
      for (Index x = 0; x < s.cols(); ++x) {
        if (!std::isfinite(s(y, x))) throw ParameterError("aupro: non-finite score");
        scores.push_back(s(y, x));
        const auto id = labels.labels(y, x);
        if (id == 0) {
          region.push_back(-1);
          ++negatives;
        } else {
          region.push_back(base + id - 1);
          ++region_size[static_cast<std::size_t>(base + id - 1)];
        }
      }
    }
  }
  if (region_size.empty()) throw UndefinedMetricError("AU-PRO needs at least one ground-truth region");
  if (negatives == 0) throw UndefinedMetricError("AU-PRO needs anomaly-free pixels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double regions = static_cast<double>(region_size.size());
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};  // (fpr, pro)
  double overlap_sum = 0.0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      const auto r = region[order[i]];
      if (r < 0) {
        ++fp;
      } else {
        overlap_sum += 1.0 / static_cast<double>(region_size[static_cast<std::size_t>(r)]);
      }
    }
    curve.emplace_back(static_cast<double>(fp) / static_cast<double>(negatives), overlap_sum / regions);
  }

  double area = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    const auto [x0, y0] = curve[k - 1];
    auto [x1, y1] = curve[k];
    if (x0 >= fpr_cap) break;
    if (x1 > fpr_cap) {
      y1 = y0 + (y1 - y0) * (fpr_cap - x0) / (x1 - x0);
      x1 = fpr_cap;
    }
    area += 0.5 * (x1 - x0) * (y0 + y1);
  }
  return area / fpr_cap;
}

}  // namespace fiseclip
