#include "fiseclip/proxy.hpp"

#include <cmath>

#include "fiseclip/error.hpp"
#include "fiseclip/kernels.hpp"

namespace fiseclip {

AttentionSource select_attention_source(const std::string& mode, const AvailableAttention& available) {
  if (mode == "v-v") {
    if (!available.has_values) throw ConfigError("attention source 'v-v' needs exported final-layer values");
    return {AttentionSource::Kind::kValueValue, 0};
  }
  if (mode == "q-q") {
    if (!available.has_queries) throw ConfigError("attention source 'q-q' needs exported final-layer queries (q_last)");
    return {AttentionSource::Kind::kQueryQuery, 0};
  }
  if (mode == "k-k") {
    if (!available.has_keys) throw ConfigError("attention source 'k-k' needs exported final-layer keys (k_last)");
    return {AttentionSource::Kind::kKeyKey, 0};
  }
  const std::string prefix = "inter:";
  if (mode.rfind(prefix, 0) == 0) {
    int layer = 0;
    try {
      std::size_t used = 0;
      layer = std::stoi(mode.substr(prefix.size()), &used);
      if (used != mode.size() - prefix.size()) throw std::invalid_argument(mode);
    } catch (const std::exception&) {
      throw ConfigError("attention source '" + mode + "' has no valid layer index");
    }
    if (!available.layers.count(layer)) {
      throw ConfigError("attention source '" + mode + "': layer " + std::to_string(layer) +
                        " was not exported by the bundle");
    }
    return {AttentionSource::Kind::kExported, layer};
  }
  throw ConfigError("unknown attention source '" + mode + "' (expected inter:<layer>, v-v, q-q or k-k)");
}

AvailableAttention available_attention(const Manifest& m, const ImageEntry& entry) {
  AvailableAttention a;
  a.layers.insert(m.inter_attn_layer);
  for (const auto& [role, name] : entry.tensors) {
    if (role.rfind("attn_L", 0) == 0) a.layers.insert(std::stoi(role.substr(6)));
  }
  a.has_values = entry.has("v_last");
  a.has_queries = entry.has("q_last");
  a.has_keys = entry.has("k_last");
  return a;
}

Tensor self_attention(const Tensor& embeddings) {
  const auto& s = embeddings.shape();
  if (s.size() != 3) throw ShapeError("self_attention: expected heads x T x d_head, got " + shape_to_string(s));
  Tensor out(DType::kF32, {s[0], s[1], s[1]});
  const double scale = 1.0 / std::sqrt(static_cast<double>(s[2]));
  for (std::int64_t h = 0; h < s[0]; ++h) {
    const auto z = embeddings.slice(h);
    MatrixF logits = matmul(z, z.transpose());
    logits = (logits.cast<double>() * scale).cast<float>();
    const MatrixF probs = softmax_lastdim(logits);
    std::copy(probs.data(), probs.data() + probs.size(), out.f32().data() + h * s[1] * s[1]);
  }
  return out;
}

Tensor resolve_attention(const AttentionSource& source, const ImageTensors& image, int inter_layer) {
  switch (source.kind) {
    case AttentionSource::Kind::kExported: {
      if (source.layer == inter_layer) return image.attn_inter;
      auto it = image.extra_attn.find(source.layer);
      if (it == image.extra_attn.end()) {
        throw ConfigError("attention layer " + std::to_string(source.layer) + " missing for image");
      }
      return it->second;
    }
    case AttentionSource::Kind::kValueValue:
      return self_attention(image.v_last);
    case AttentionSource::Kind::kQueryQuery:
      if (!image.q_last) throw ConfigError("q-q attention requested but q_last is absent");
      return self_attention(*image.q_last);
    case AttentionSource::Kind::kKeyKey:
      if (!image.k_last) throw ConfigError("k-k attention requested but k_last is absent");
      return self_attention(*image.k_last);
  }
  throw ConfigError("unreachable attention source");
}

MatrixF recombine(const Tensor& attn, const Tensor& values, const MatrixF& proj_w, const VectorF& proj_b) {
  const auto& as = attn.shape();
  const auto& vs = values.shape();
  if (as.size() != 3 || vs.size() != 3 || as[1] != as[2]) {
    throw ShapeError("recombine: attention must be heads x T x T and values heads x T x d_head");
  }
  if (as[0] != vs[0] || as[1] != vs[1]) {
    throw ShapeError("recombine: attention " + shape_to_string(as) + " does not match values " + shape_to_string(vs));
  }
  const Index heads = as[0];
  const Index tokens = as[1];
  const Index dh = vs[2];
  const Index d = heads * dh;
  if (proj_w.rows() != d || proj_w.cols() != d || proj_b.size() != d) {
    throw ShapeError("recombine: projection does not match heads * d_head = " + std::to_string(d));
  }
  MatrixF concat(tokens, d);
  for (Index h = 0; h < heads; ++h) {
    concat.middleCols(h * dh, dh) = matmul(attn.slice(h), values.slice(h));
  }
  MatrixF x = matmul(concat, proj_w);
  for (Index t = 0; t < tokens; ++t) {
    for (Index j = 0; j < d; ++j) x(t, j) = static_cast<float>(static_cast<double>(x(t, j)) + proj_b(j));
  }
  return x;
}

MatrixF project_patches(const MatrixF& x_attn, const VectorF& ln_scale, const VectorF& ln_bias,
                        const MatrixF& visual_proj) {
  if (x_attn.rows() < 2) throw ShapeError("project_patches: need a [CLS] row and at least one patch row");
  if (visual_proj.rows() != x_attn.cols()) {
    throw ShapeError("project_patches: visual_proj has " + std::to_string(visual_proj.rows()) +
                     " rows for token width " + std::to_string(x_attn.cols()));
  }
  const MatrixF normed = layernorm(x_attn.bottomRows(x_attn.rows() - 1), ln_scale, ln_bias);
  return matmul(normed, visual_proj);
}

}  // namespace fiseclip
