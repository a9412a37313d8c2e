#include "fiseclip/ficlip.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "fiseclip/error.hpp"
#include "fiseclip/kernels.hpp"

namespace fiseclip {

VoteMode parse_vote_mode(const std::string& s) {
  if (s == "or") return VoteMode::kOr;
  if (s == "and") return VoteMode::kAnd;
  throw ConfigError("unknown vote_mode '" + s + "' (expected or, and)");
}

Distance parse_distance(const std::string& s) {
  if (s == "l2") return Distance::kL2;
  if (s == "cosine") return Distance::kCosine;
  throw ConfigError("unknown distance '" + s + "' (expected l2, cosine)");
}

LoopOrder parse_loop_order(const std::string& s) {
  if (s == "ri") return LoopOrder::kScaleStage;
  if (s == "r-i") return LoopOrder::kReversedScaleStage;
  if (s == "ir") return LoopOrder::kStageScale;
  if (s == "flat") return LoopOrder::kFlat;
  throw ConfigError("unknown loop_order '" + s + "' (expected ri, r-i, ir, flat)");
}

std::string to_string(VoteMode m) { return m == VoteMode::kOr ? "or" : "and"; }
std::string to_string(Distance d) { return d == Distance::kL2 ? "l2" : "cosine"; }
std::string to_string(LoopOrder o) {
  switch (o) {
    case LoopOrder::kScaleStage:
      return "ri";
    case LoopOrder::kReversedScaleStage:
      return "r-i";
    case LoopOrder::kStageScale:
      return "ir";
    case LoopOrder::kFlat:
      return "flat";
  }
  return "ri";
}

MatrixF aggregate(const MatrixF& tokens, int r) {
  const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(tokens.rows()))));
  if (side * side != tokens.rows()) {
    throw ShapeError("aggregate: token count " + std::to_string(tokens.rows()) + " is not a perfect square");
  }
  if (r == 1) return tokens;
  return avgpool_neighborhood(tokens, side, side, r);
}

std::size_t pool_floor(Index n, double floor_fraction) {
  const auto want = static_cast<std::size_t>(std::ceil(floor_fraction * static_cast<double>(n)));
  return std::min<std::size_t>(std::max<std::size_t>(1, want), static_cast<std::size_t>(n));
}

ReferencePool filter_pool(const MatrixF& features, const AnomalyMask& mask, double floor_fraction,
                          const VectorD& scores) {
  const Index n = features.rows();
  if (static_cast<Index>(mask.size()) != n || scores.size() != n) {
    throw ShapeError("filter_pool: mask/score length does not match feature rows");
  }
  std::vector<bool> keep(mask.size());
  std::size_t kept = 0;
  for (Index i = 0; i < n; ++i) {
    keep[i] = !mask[i];
    kept += keep[i];
  }
  const std::size_t floor = pool_floor(n, floor_fraction);
  if (kept < floor) {
    std::vector<Index> masked;
    for (Index i = 0; i < n; ++i) {
      if (!keep[i]) masked.push_back(i);
    }
    std::stable_sort(masked.begin(), masked.end(), [&](Index a, Index b) { return scores(a) < scores(b); });
    for (std::size_t k = 0; kept < floor; ++k, ++kept) keep[masked[k]] = true;
  }
  ReferencePool pool;
  pool.rows.resize(static_cast<Index>(kept), features.cols());
  Index row = 0;
  for (Index i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    pool.rows.row(row++) = features.row(i);
    pool.origin.push_back(i);
  }
  return pool;
}

namespace {

std::vector<double> row_norms(const MatrixF& m) {
  std::vector<double> norms(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    double ss = 0.0;
    for (Index j = 0; j < m.cols(); ++j) ss += static_cast<double>(m(i, j)) * m(i, j);
    norms[i] = std::sqrt(ss);
  }
  return norms;
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Runs fn(begin, end) over disjoint row ranges. Each row is written by exactly
// one worker, so results do not depend on the thread count.
template <typename Fn>
void parallel_rows(Index rows, int threads, Fn fn) {
  const int workers = static_cast<int>(std::min<Index>(resolve_threads(threads), std::max<Index>(rows, 1)));
  if (workers <= 1) {
    fn(Index{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  const Index chunk = (rows + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Index begin = w * chunk;
    const Index end = std::min(rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

}  // namespace

VectorD match_min(const MatrixF& target, const std::vector<const MatrixF*>& pools, Distance distance, int threads) {
  Index total = 0;
  for (const auto* p : pools) {
    if (p->cols() != target.cols()) throw ShapeError("match_min: pool width differs from target width");
    total += p->rows();
  }
  if (total == 0) throw ShapeError("match_min: reference pool is empty");
  const Index d = target.cols();
  VectorD best = VectorD::Constant(target.rows(), std::numeric_limits<double>::infinity());

  std::vector<double> target_norms;
  std::vector<std::vector<double>> pool_norms;
  if (distance == Distance::kCosine) {
    target_norms = row_norms(target);
    for (const auto* p : pools) pool_norms.push_back(row_norms(*p));
  }

  parallel_rows(target.rows(), threads, [&](Index begin, Index end) {
    for (Index n = begin; n < end; ++n) {
      const float* a = target.data() + n * d;
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < pools.size(); ++p) {
        const MatrixF& pool = *pools[p];
        for (Index j = 0; j < pool.rows(); ++j) {
          const float* b = pool.data() + j * d;
          double dist = 0.0;
          if (distance == Distance::kL2) {
            for (Index c = 0; c < d; ++c) {
              const double diff = static_cast<double>(a[c]) - static_cast<double>(b[c]);
              dist += diff * diff;
            }
          } else {
            double dot = 0.0;
            for (Index c = 0; c < d; ++c) dot += static_cast<double>(a[c]) * static_cast<double>(b[c]);
            const double denom = target_norms[n] * pool_norms[p][j];
            const double cos = denom > 0.0 ? dot / denom : 0.0;
            dist = std::max(0.0, 1.0 - cos);
          }
          m = std::min(m, dist);
        }
      }
      best(n) = distance == Distance::kL2 ? std::sqrt(m) : m;
    }
  });
  return best;
}

VectorD match_min(const MatrixF& target, const MatrixF& pool, Distance distance, int threads) {
  return match_min(target, std::vector<const MatrixF*>{&pool}, distance, threads);
}

VectorD stage_average(const std::vector<VectorD>& scores) {
  if (scores.empty()) throw ParameterError("stage_average: no stages");
  const Index n = scores.front().size();
  VectorD out(n);
  for (Index k = 0; k < n; ++k) {
    double acc = 0.0;
    for (const auto& s : scores) {
      if (s.size() != n) throw ShapeError("stage_average: stage score lengths differ");
      acc += s(k);
    }
    out(k) = acc / static_cast<double>(scores.size());
  }
  return out;
}

AnomalyMask binarize(const VectorD& score, double mu) {
  AnomalyMask flags(static_cast<std::size_t>(score.size()), false);
  if (score.size() == 0) return flags;
  const double lo = score.minCoeff();
  const double hi = score.maxCoeff();
  if (!(hi > lo)) return flags;
  for (Index i = 0; i < score.size(); ++i) flags[i] = (score(i) - lo) / (hi - lo) > mu;
  return flags;
}

AnomalyMask vote(const AnomalyMask& a, const AnomalyMask& b, VoteMode mode) {
  if (a.size() != b.size()) throw ShapeError("vote: mask lengths differ");
  AnomalyMask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = mode == VoteMode::kOr ? (a[i] || b[i]) : (a[i] && b[i]);
  return out;
}

std::vector<std::vector<ScalePair>> loop_schedule(const FiclipConfig& config) {
  std::vector<std::vector<ScalePair>> groups;
  auto scales = config.scales;
  if (config.loop_order == LoopOrder::kReversedScaleStage) std::reverse(scales.begin(), scales.end());
  switch (config.loop_order) {
    case LoopOrder::kScaleStage:
    case LoopOrder::kReversedScaleStage:
      for (int r : scales) {
        auto& g = groups.emplace_back();
        for (int i : config.stage_layers) g.push_back({r, i});
      }
      break;
    case LoopOrder::kStageScale:
      for (int i : config.stage_layers) {
        auto& g = groups.emplace_back();
        for (int r : scales) g.push_back({r, i});
      }
      break;
    case LoopOrder::kFlat:
      for (int r : scales) {
        for (int i : config.stage_layers) groups.push_back({{r, i}});
      }
      break;
  }
  return groups;
}

MutualResult mutual_filter_loop(const std::vector<std::map<int, MatrixF>>& images,
                                const std::vector<AnomalyMask>& initial_masks, const std::vector<VectorD>& seg_scores,
                                const FiclipConfig& config) {
  const std::size_t batch = images.size();
  if (initial_masks.size() != batch || seg_scores.size() != batch) {
    throw ShapeError("mutual_filter_loop: masks/scores do not match batch size");
  }
  if (config.scales.empty() || config.stage_layers.empty()) {
    throw ParameterError("mutual_filter_loop: scales and stage layers must be non-empty");
  }
  if (!(config.mu >= 0.0 && config.mu <= 1.0)) throw ParameterError("mutual_filter_loop: mu outside [0,1]");

  MutualResult result;
  result.masks = initial_masks;
  result.fused = seg_scores;
  if (batch < 2) {
    result.degenerate = true;
    return result;
  }

  Index n = -1;
  for (std::size_t u = 0; u < batch; ++u) {
    for (int stage : config.stage_layers) {
      auto it = images[u].find(stage);
      if (it == images[u].end()) throw ShapeError("mutual_filter_loop: image lacks stage " + std::to_string(stage));
      if (n < 0) n = it->second.rows();
      if (it->second.rows() != n) throw ShapeError("mutual_filter_loop: patch counts differ across images");
    }
    if (seg_scores[u].size() != n || static_cast<Index>(initial_masks[u].size()) != n) {
      throw ShapeError("mutual_filter_loop: mask/score length differs from patch count");
    }
  }

  if (!config.filtering) {
    for (auto& m : result.masks) m.assign(static_cast<std::size_t>(n), false);
  }

  std::vector<VectorD> sums = seg_scores;
  std::size_t terms = 1;
  for (const auto& group : loop_schedule(config)) {
    std::vector<std::vector<VectorD>> pair_scores(batch);
    for (const auto& [scale, stage] : group) {
      std::vector<MatrixF> feats(batch);
      for (std::size_t u = 0; u < batch; ++u) feats[u] = aggregate(images[u].at(stage), scale);
      std::vector<ReferencePool> pools(batch);
      for (std::size_t v = 0; v < batch; ++v) {
        pools[v] = filter_pool(feats[v], result.masks[v], config.pool_floor_fraction, result.fused[v]);
      }
      for (std::size_t u = 0; u < batch; ++u) {
        std::vector<const MatrixF*> refs;
        for (std::size_t v = 0; v < batch; ++v) {
          if (v != u) refs.push_back(&pools[v].rows);
        }
        pair_scores[u].push_back(match_min(feats[u], refs, config.distance, config.threads));
      }
    }
    ++terms;
    std::vector<AnomalyMask> next = result.masks;
    for (std::size_t u = 0; u < batch; ++u) {
      const VectorD group_score = stage_average(pair_scores[u]);
      sums[u] += group_score;
      result.fused[u] = sums[u] / static_cast<double>(terms);
      if (config.filtering) next[u] = vote(result.masks[u], binarize(group_score, config.mu), config.vote_mode);
    }
    result.masks = std::move(next);
    result.mask_history.push_back(result.masks);
  }
  return result;
}

std::vector<ImageScore> fuse_and_postprocess(const std::vector<VectorD>& fused, const std::vector<double>& cls_scores,
                                             const std::vector<std::pair<Index, Index>>& out_sizes,
                                             const FusionConfig& config) {
  if (fused.size() != cls_scores.size() || fused.size() != out_sizes.size()) {
    throw ShapeError("fuse_and_postprocess: batch inputs differ in length");
  }
  if (!(config.weight >= 0.0 && config.weight <= 1.0)) throw ParameterError("fusion weight outside [0,1]");
  std::vector<ImageScore> out(fused.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t u = 0; u < fused.size(); ++u) {
    const Index n = fused[u].size();
    const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n || n == 0) throw ShapeError("fuse_and_postprocess: score length is not a square grid");
    MatrixD grid(side, side);
    for (Index k = 0; k < n; ++k) grid(k / side, k % side) = fused[u](k);
    const MatrixD up = bilinear_upsample(grid, out_sizes[u].first, out_sizes[u].second);
    out[u].pixel_map = gaussian_blur(up, config.sigma).cast<float>();
    lo = std::min(lo, static_cast<double>(out[u].pixel_map.minCoeff()));
    hi = std::max(hi, static_cast<double>(out[u].pixel_map.maxCoeff()));
  }
  for (std::size_t u = 0; u < fused.size(); ++u) {
    const double peak = hi > lo ? (static_cast<double>(out[u].pixel_map.maxCoeff()) - lo) / (hi - lo) : 0.0;
    out[u].image_score = config.weight * cls_scores[u] + (1.0 - config.weight) * peak;
  }
  return out;
}

}  // namespace fiseclip
