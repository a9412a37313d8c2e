#pragma once

// End-to-end scoring of a feature bundle, the score artifact format, and
// evaluation of score artifacts against bundle ground truth.
//
// Score artifact layout (directory):
//   scores.json        format_version, resolved config, warnings, and per image
//                      {id, class_name, image_score, cls_score, map record}
//   maps/<id>.f32      H' x W' pixel map, raw little-endian f32

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fiseclip/bundle.hpp"
#include "fiseclip/config.hpp"
#include "fiseclip/seclip.hpp"

namespace fiseclip {

inline constexpr const char* kScoresFile = "scores.json";

// Text-alignment results of one image plus the stage tokens the matcher needs.
struct ImageAlignment {
  ClsResult cls;
  SegResult seg;
  AnomalyMask mask;
  std::map<int, MatrixF> stage_tokens;
  std::pair<Index, Index> out_size;  // pixel map resolution
};

ImageAlignment align_image(const Bundle& bundle, const ImageEntry& entry, const SharedWeights& shared,
                           const RunConfig& config);

// Fills bundle-dependent defaults (attention source, stage layers) and checks
// the configuration against the bundle.
RunConfig resolve_config(const RunConfig& config, const Manifest& manifest);

struct ImageResult {
  std::string id;
  std::string class_name;
  double image_score = 0.0;
  double cls_score = 0.0;
  MatrixF pixel_map;
};

struct ScoreRun {
  RunConfig config;  // resolved
  std::vector<ImageResult> images;
  std::vector<std::string> warnings;
};

ScoreRun score_bundle(const Bundle& bundle, const RunConfig& config);

void write_scores(const ScoreRun& run, const std::filesystem::path& out_dir);
// Accepts the artifact directory or the scores.json inside it.
ScoreRun read_scores(const std::filesystem::path& path);

struct EvalReport {
  std::optional<double> image_auroc;
  std::optional<double> image_f1max;
  std::optional<double> image_ap;
  std::optional<double> pixel_auroc;
  std::optional<double> pixel_f1max;
  std::optional<double> pixel_ap;
  std::optional<double> pixel_aupro;
  std::size_t images = 0;

  // "key = value" lines, 4 decimals, "undefined" where a metric has no value.
  std::string to_text() const;
};

EvalReport evaluate(const ScoreRun& scores, const Bundle& bundle);

// Min-max normalizes to 0..255 and encodes a binary P5 PGM.
std::string encode_pgm(const MatrixF& map);
void write_heatmaps(const ScoreRun& run, const std::filesystem::path& out_dir);

}  // namespace fiseclip
