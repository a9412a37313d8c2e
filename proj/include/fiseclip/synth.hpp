#pragma once

// Synthetic feature bundles with planted anomalies and known ground truth.
//
// Normal patch tokens of stage s are mu_s + sigma * eps with eps ~ N(0, I).
// Anomalous images carry one square blob of patches displaced by
// delta * sigma * sqrt(D) along a unit direction u_s shared by all anomalous
// images (RMS shift of delta * sigma per coordinate); the blob location is the
// same for every stage. All randomness comes from a counter-based generator
// keyed by the seed, so a seed fully determines the bundle bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "fiseclip/bundle.hpp"

namespace fiseclip {

// Stateless generator: value k of stream s is a pure function of (seed, s, k).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
  double uniform(std::uint64_t stream, std::uint64_t counter) const;  // (0, 1)
  double normal(std::uint64_t stream, std::uint64_t counter) const;

 private:
  std::uint64_t seed_;
};

struct SynthParams {
  std::uint64_t seed = 0;
  int images = 16;
  int grid = 8;
  int dim = 32;
  double anomaly_frac = 0.5;  // fraction of images that receive a blob
  double offset = 3.0;        // delta
  int patch_size = 14;
  double blob_frac = 0.3;     // blob side as a fraction of the grid side
  double attn_sharpness = 10.0;
  std::string class_name = "synthetic";

  void validate() const;
};

struct SynthBundle {
  Manifest manifest;
  std::map<std::string, Tensor> tensors;
};

SynthBundle synthesize(const SynthParams& params);
void write_synthetic_bundle(const SynthParams& params, const std::filesystem::path& dir);

}  // namespace fiseclip
