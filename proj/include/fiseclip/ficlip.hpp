#pragma once

// Mutual-reference patch matching with noise filtering.
//
// Every image in a batch is scored against the patches of all other images.
// Reference patches suspected to be anomalous (per the current masks) are
// removed from the pools, and the masks are refined scale by scale from the
// matching scores themselves.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fiseclip/seclip.hpp"
#include "fiseclip/tensor.hpp"

namespace fiseclip {

enum class VoteMode { kOr, kAnd };
enum class Distance { kL2, kCosine };
// Iteration schemes: outer scale / inner stage (kScaleStage), the same with
// scales reversed, outer stage / inner scale, and one flat loop over pairs.
enum class LoopOrder { kScaleStage, kReversedScaleStage, kStageScale, kFlat };

VoteMode parse_vote_mode(const std::string& s);
Distance parse_distance(const std::string& s);
LoopOrder parse_loop_order(const std::string& s);
std::string to_string(VoteMode m);
std::string to_string(Distance d);
std::string to_string(LoopOrder o);

inline constexpr double kDefaultMu = 0.57;
inline constexpr double kDefaultPoolFloorFraction = 0.1;

struct FiclipConfig {
  std::vector<int> scales{1, 3, 5};
  std::vector<int> stage_layers{6, 12, 18, 24};
  double mu = kDefaultMu;
  VoteMode vote_mode = VoteMode::kOr;
  bool filtering = true;
  double pool_floor_fraction = kDefaultPoolFloorFraction;
  Distance distance = Distance::kL2;
  LoopOrder loop_order = LoopOrder::kScaleStage;
  int threads = 1;  // 0 = hardware concurrency
};

// r x r neighbourhood mean over the sqrt(N) x sqrt(N) patch grid.
MatrixF aggregate(const MatrixF& tokens, int r);

struct ReferencePool {
  MatrixF rows;
  std::vector<Index> origin;  // source patch index of each row, ascending
};

std::size_t pool_floor(Index n, double floor_fraction);

// Rows whose mask flag is false. When fewer than pool_floor() survive, masked
// rows with the lowest `scores` are added back (ties by patch index).
ReferencePool filter_pool(const MatrixF& features, const AnomalyMask& mask, double floor_fraction,
                          const VectorD& scores);

// score[n] = min_j dist(target[n], pool[j]).
VectorD match_min(const MatrixF& target, const MatrixF& pool, Distance distance = Distance::kL2, int threads = 1);
// Minimum over the union of several pools.
VectorD match_min(const MatrixF& target, const std::vector<const MatrixF*>& pools, Distance distance, int threads);

VectorD stage_average(const std::vector<VectorD>& scores);

// Min-max normalizes to [0,1] (a constant vector maps to zeros), flags > mu.
AnomalyMask binarize(const VectorD& score, double mu = kDefaultMu);

AnomalyMask vote(const AnomalyMask& a, const AnomalyMask& b, VoteMode mode = VoteMode::kOr);

struct ScalePair {
  int scale;
  int stage;
};

// Groups of (scale, stage) pairs in processing order; masks and fused scores
// are updated once per group.
std::vector<std::vector<ScalePair>> loop_schedule(const FiclipConfig& config);

struct MutualResult {
  std::vector<VectorD> fused;         // per image, length N
  std::vector<AnomalyMask> masks;     // final masks
  std::vector<std::vector<AnomalyMask>> mask_history;  // masks after each group
  bool degenerate = false;            // batch of one: no references
};

// images[u][stage] = N x D tokens; seg_scores[u] = abnormal probabilities.
MutualResult mutual_filter_loop(const std::vector<std::map<int, MatrixF>>& images,
                                const std::vector<AnomalyMask>& initial_masks, const std::vector<VectorD>& seg_scores,
                                const FiclipConfig& config);

struct FusionConfig {
  double sigma = 4.0;
  double weight = 0.5;  // weight of the classification score
};

struct ImageScore {
  MatrixF pixel_map;
  double image_score = 0.0;
};

// Upsamples each fused grid map to its output size, blurs it, and combines the
// batch-normalized map maximum with the classification score.
std::vector<ImageScore> fuse_and_postprocess(const std::vector<VectorD>& fused, const std::vector<double>& cls_scores,
                                             const std::vector<std::pair<Index, Index>>& out_sizes,
                                             const FusionConfig& config);

}  // namespace fiseclip
