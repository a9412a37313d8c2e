#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fiseclip/ficlip.hpp"
#include "fiseclip/metrics.hpp"
#include "fiseclip/seclip.hpp"

namespace fiseclip {

// Every tunable of a scoring/evaluation run. Read from an INI-style file:
//
//   [proxy]   attention_source = inter:12 | v-v | q-q | k-k
//   [seclip]  tau, lambda
//   [ficlip]  scales, stage_layers, mu, vote_mode, filtering,
//             pool_floor_fraction, distance, loop_order
//   [fusion]  sigma, fusion_weight
//   [metrics] fpr_cap
//   [run]     batch_size, threads
//
// Empty attention_source / stage_layers mean "take it from the bundle".
struct RunConfig {
  std::string attention_source;
  double tau = kDefaultTau;
  double lambda = kDefaultLambda;
  FiclipConfig ficlip{.stage_layers = {}};
  FusionConfig fusion;
  double fpr_cap = kDefaultFprCap;
  int batch_size = 0;  // 0 = whole bundle is one batch

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_json() == b.to_json(); }

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace fiseclip
