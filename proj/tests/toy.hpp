#pragma once

// Random toy batches shared by the unit and acceptance suites.

#include <map>
#include <random>
#include <vector>

#include "fiseclip/ficlip.hpp"
#include "oracles.hpp"

namespace toy {

struct Batch {
  std::vector<std::map<int, fiseclip::MatrixF>> images;
  std::vector<fiseclip::AnomalyMask> masks;
  std::vector<fiseclip::VectorD> seg;
};

inline Batch random_batch(std::mt19937& rng, int batch, int n, int d, const std::vector<int>& stages) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b;
  for (int k = 0; k < batch; ++k) {
    std::map<int, fiseclip::MatrixF> image;
    for (int s : stages) image[s] = oracle::random_matrix(rng, n, d);
    b.images.push_back(std::move(image));
    fiseclip::VectorD seg(n);
    fiseclip::AnomalyMask mask(n);
    for (int i = 0; i < n; ++i) {
      seg(i) = u(rng);
      mask[i] = seg(i) > 0.6;
    }
    b.seg.push_back(seg);
    b.masks.push_back(mask);
  }
  return b;
}

inline std::string order_name(fiseclip::LoopOrder o) { return fiseclip::to_string(o); }

// Runs the straight-line oracle on the same batch.
inline std::vector<std::vector<double>> oracle_fused(const Batch& b, const fiseclip::FiclipConfig& cfg) {
  std::vector<std::map<int, oracle::Grid>> images;
  for (const auto& img : b.images) {
    std::map<int, oracle::Grid> g;
    for (const auto& [s, m] : img) g[s] = oracle::to_grid(m);
    images.push_back(std::move(g));
  }
  std::vector<std::vector<bool>> masks(b.masks.begin(), b.masks.end());
  std::vector<std::vector<double>> seg;
  for (const auto& s : b.seg) seg.emplace_back(s.data(), s.data() + s.size());
  oracle::ToyConfig tc;
  tc.scales = cfg.scales;
  tc.stages = cfg.stage_layers;
  tc.mu = cfg.mu;
  tc.floor_fraction = cfg.pool_floor_fraction;
  tc.or_vote = cfg.vote_mode == fiseclip::VoteMode::kOr;
  tc.order = order_name(cfg.loop_order);
  return oracle::mutual_filter(images, masks, seg, tc);
}

}  // namespace toy
