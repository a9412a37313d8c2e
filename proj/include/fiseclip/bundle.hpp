#pragma once

// Feature bundle container: a directory holding `manifest.json` plus one raw
// little-endian file per tensor. The bundle is the only contract between the
// scoring engine and the feature exporter.
//
// Per-image tensor roles (keys of ImageEntry::tensors):
//   tokens_L{i}  f32  N x D             patch tokens of stage layer i, [CLS] removed
//   cls_global   f32  C                 global image embedding
//   attn_inter   f32  heads x T x T     attention probabilities of inter_attn_layer, T = N + 1
//   attn_L{k}    f32  heads x T x T     optional extra attention layers
//   v_last       f32  heads x T x dh    final-block values (after its input layernorm)
//   q_last/k_last f32 heads x T x dh    optional, enables the q-q / k-k attention modes
//   gt_mask      u8   H' x W'           optional ground truth, values in {0,1}
//   gt_label     u8   (scalar, shape []) optional image label
//
// Shared tensors (Manifest::shared):
//   attn_out_proj_w D x D (input-major: x = concat . W + b), attn_out_proj_b D,
//   ln_post_scale D, ln_post_bias D, visual_proj D x C, text_feats 2 x C.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fiseclip/tensor.hpp"

namespace fiseclip {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::string file;
  std::int64_t byte_length = 0;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct ImageEntry {
  std::string id;
  std::string class_name;
  std::map<std::string, std::string> tensors;  // role -> tensor name

  bool has(const std::string& role) const { return tensors.count(role) != 0; }
  const std::string& tensor(const std::string& role) const;

  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

struct Manifest {
  int format_version = kBundleFormatVersion;
  std::string model_id;
  int image_size = 0;
  int patch_size = 0;
  int grid = 0;
  int feature_dim = 0;
  int embed_dim = 0;
  int num_heads = 0;
  std::vector<int> stage_layers;
  int inter_attn_layer = 0;
  std::map<std::string, std::string> shared;  // role -> tensor name
  std::vector<ImageEntry> images;
  std::vector<TensorRecord> tensors;

  Index num_patches() const { return static_cast<Index>(grid) * grid; }
  Index head_dim() const { return num_heads > 0 ? feature_dim / num_heads : 0; }
  const TensorRecord& record(const std::string& name) const;
  const TensorRecord* find_record(const std::string& name) const;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

std::string stage_role(int layer);  // "tokens_L{layer}"
std::string attn_role(int layer);   // "attn_L{layer}"

// Checks every structural invariant of the manifest: geometry, layer lists,
// record byte lengths and the declared shape of every referenced tensor.
void validate_manifest(const Manifest& m);

struct SharedWeights {
  MatrixF attn_out_proj_w;
  VectorF attn_out_proj_b;
  VectorF ln_post_scale;
  VectorF ln_post_bias;
  MatrixF visual_proj;
  MatrixF text_feats;
};

struct ImageTensors {
  std::map<int, MatrixF> tokens;  // stage layer -> N x D
  VectorF cls_global;
  Tensor attn_inter;
  Tensor v_last;
  std::map<int, Tensor> extra_attn;
  std::optional<Tensor> q_last;
  std::optional<Tensor> k_last;
  std::optional<MatrixF> gt_mask;  // H' x W', values 0/1
  std::optional<int> gt_label;
};

class Bundle {
 public:
  Bundle(Manifest manifest, std::filesystem::path root) : manifest_(std::move(manifest)), root_(std::move(root)) {}

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

  // Reads one tensor file, verifying its size against the record.
  Tensor load(const std::string& name) const;
  SharedWeights load_shared() const;
  // Loads every tensor of an image and validates attention rows and ground truth.
  ImageTensors load_image(const ImageEntry& entry) const;

 private:
  Manifest manifest_;
  std::filesystem::path root_;
};

Bundle read_bundle(const std::filesystem::path& dir);

// Writes `tensors` (name -> data) and the manifest. Validation runs before any
// file is created. Tensor records are derived from the tensors themselves;
// any records already present in `manifest` must agree with them.
void write_bundle(const Manifest& manifest, const std::map<std::string, Tensor>& tensors,
                  const std::filesystem::path& dir);

// Raw tensor file helpers shared with the score artifacts.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path, const TensorRecord& record);

std::string manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const std::string& text);

}  // namespace fiseclip
