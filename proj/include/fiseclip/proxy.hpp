#pragma once

// Proxy final block: attention probabilities taken from an intermediate layer
// are applied to the final block's values, with the residual branch and the
// feed-forward network dropped. Patch tokens are then projected into the
// text-embedding space.

#include <set>
#include <string>

#include "fiseclip/bundle.hpp"
#include "fiseclip/tensor.hpp"

namespace fiseclip {

struct AttentionSource {
  enum class Kind { kExported, kValueValue, kQueryQuery, kKeyKey };
  Kind kind = Kind::kExported;
  int layer = 0;  // meaningful for kExported

  friend bool operator==(const AttentionSource&, const AttentionSource&) = default;
};

struct AvailableAttention {
  std::set<int> layers;  // exported attention layers
  bool has_values = true;
  bool has_queries = false;
  bool has_keys = false;
};

// Parses "inter:<layer>", "v-v", "q-q" or "k-k" and checks it against what the
// bundle exported.
AttentionSource select_attention_source(const std::string& mode, const AvailableAttention& available);

AvailableAttention available_attention(const Manifest& m, const ImageEntry& entry);

// Softmax(z_h z_h^T / sqrt(d_head)) per head, for the self-similarity modes.
Tensor self_attention(const Tensor& embeddings);

// Attention tensor feeding recombine() for one image.
Tensor resolve_attention(const AttentionSource& source, const ImageTensors& image, int inter_layer);

// x_attn = concat_h(attn[h] . v[h]) . proj_w + proj_b, shape T x D.
MatrixF recombine(const Tensor& attn, const Tensor& values, const MatrixF& proj_w, const VectorF& proj_b);

// Drops the [CLS] row, applies the post layernorm, right-multiplies by visual_proj.
MatrixF project_patches(const MatrixF& x_attn, const VectorF& ln_scale, const VectorF& ln_bias,
                        const MatrixF& visual_proj);

}  // namespace fiseclip
