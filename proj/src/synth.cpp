#include "fiseclip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fiseclip/error.hpp"
#include "fiseclip/kernels.hpp"

namespace fiseclip {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stream ids.
constexpr std::uint64_t kPermutation = 1;
constexpr std::uint64_t kBlob = 2;
constexpr std::uint64_t kMean = 100;
constexpr std::uint64_t kDirection = 200;
constexpr std::uint64_t kNoise = 1000;

const std::vector<int> kStages = {6, 12, 18, 24};
constexpr int kInterLayer = 12;

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
  return splitmix64(splitmix64(splitmix64(seed_) ^ stream) ^ counter);
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
  return (static_cast<double>(bits(stream, counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t counter) const {
  const double u1 = uniform(stream, 2 * counter);
  const double u2 = uniform(stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void SynthParams::validate() const {
  if (images < 1) throw ParameterError("synth: --images must be >= 1");
  if (grid < 1) throw ParameterError("synth: --grid must be >= 1");
  if (dim < 1) throw ParameterError("synth: --dim must be >= 1");
  if (!(anomaly_frac >= 0.0 && anomaly_frac <= 1.0)) throw ParameterError("synth: --anomaly-frac must lie in [0,1]");
  if (!(offset >= 0.0) || !std::isfinite(offset)) throw ParameterError("synth: --offset must be finite and >= 0");
  if (patch_size < 1) throw ParameterError("synth: patch size must be >= 1");
  if (!(blob_frac > 0.0 && blob_frac <= 1.0)) throw ParameterError("synth: blob fraction must lie in (0,1]");
}

SynthBundle synthesize(const SynthParams& p) {
  p.validate();
  const CounterRng rng(p.seed);
  const Index n = static_cast<Index>(p.grid) * p.grid;
  const Index tokens = n + 1;
  const Index d = p.dim;
  const int heads = d % 2 == 0 ? 2 : 1;
  const Index dh = d / heads;
  const int pixels = p.grid * p.patch_size;
  const int blob = std::clamp(static_cast<int>(std::ceil(p.blob_frac * p.grid)), 1, p.grid);
  const double sigma = 1.0;

  // Anomalous images: the first round(f * B) entries of a seeded permutation.
  std::vector<int> perm(static_cast<std::size_t>(p.images));
  for (int i = 0; i < p.images; ++i) perm[i] = i;
  for (int i = p.images - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.bits(kPermutation, static_cast<std::uint64_t>(i)) % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  const auto anomalous_count = static_cast<int>(std::lround(p.anomaly_frac * p.images));
  std::vector<bool> anomalous(static_cast<std::size_t>(p.images), false);
  for (int k = 0; k < anomalous_count; ++k) anomalous[perm[k]] = true;

  std::map<int, VectorD> mean;
  std::map<int, VectorD> shift;
  for (int s = 0; s < static_cast<int>(kStages.size()); ++s) {
    const int layer = kStages[s];
    VectorD mu(d);
    VectorD dir(d);
    for (Index c = 0; c < d; ++c) {
      mu(c) = rng.normal(kMean + s, c);
      dir(c) = rng.normal(kDirection + s, c);
    }
    mean[layer] = mu;
    shift[layer] = dir.normalized() * (p.offset * sigma * std::sqrt(static_cast<double>(d)));
  }

  SynthBundle out;
  Manifest& m = out.manifest;
  m.model_id = "synthetic-gaussian";
  m.image_size = pixels;
  m.patch_size = p.patch_size;
  m.grid = p.grid;
  m.feature_dim = static_cast<int>(d);
  m.embed_dim = static_cast<int>(d);
  m.num_heads = heads;
  m.stage_layers = kStages;
  m.inter_attn_layer = kInterLayer;

  const MatrixF identity = MatrixF::Identity(d, d);
  const VectorF ones = VectorF::Ones(d);
  const VectorF zeros = VectorF::Zero(d);
  auto put_shared = [&](const std::string& role, Tensor t) {
    const std::string name = "shared." + role;
    m.shared[role] = name;
    out.tensors[name] = std::move(t);
  };
  put_shared("attn_out_proj_w", Tensor::from_matrix(identity));
  put_shared("attn_out_proj_b", Tensor::from_vector(zeros));
  put_shared("ln_post_scale", Tensor::from_vector(ones));
  put_shared("ln_post_bias", Tensor::from_vector(zeros));
  put_shared("visual_proj", Tensor::from_matrix(identity));
  {
    const int last = kStages.back();
    MatrixD pops(2, d);
    pops.row(0) = mean[last].transpose();
    pops.row(1) = (mean[last] + shift[last]).transpose();
    const MatrixD text = l2_normalize(layernorm(pops, VectorD::Ones(d), VectorD::Zero(d)));
    put_shared("text_feats", Tensor::from_matrix(text.cast<float>()));
  }

  for (int u = 0; u < p.images; ++u) {
    std::ostringstream id;
    id << "img_" << std::setw(3) << std::setfill('0') << u;
    ImageEntry entry{id.str(), p.class_name, {}};
    auto put = [&](const std::string& role, Tensor t) {
      const std::string name = entry.id + "." + role;
      entry.tensors[role] = name;
      out.tensors[name] = std::move(t);
    };

    int by = 0;
    int bx = 0;
    if (anomalous[u]) {
      const auto span = static_cast<std::uint64_t>(p.grid - blob + 1);
      by = static_cast<int>(rng.bits(kBlob, 2 * static_cast<std::uint64_t>(u)) % span);
      bx = static_cast<int>(rng.bits(kBlob, 2 * static_cast<std::uint64_t>(u) + 1) % span);
    }
    auto in_blob = [&](Index patch) {
      const Index y = patch / p.grid;
      const Index x = patch % p.grid;
      return anomalous[u] && y >= by && y < by + blob && x >= bx && x < bx + blob;
    };

    std::map<int, MatrixD> stage_tokens;
    for (int s = 0; s < static_cast<int>(kStages.size()); ++s) {
      const int layer = kStages[s];
      MatrixD t(n, d);
      const std::uint64_t stream = kNoise + static_cast<std::uint64_t>(u) * kStages.size() + s;
      for (Index k = 0; k < n; ++k) {
        for (Index c = 0; c < d; ++c) {
          t(k, c) = mean[layer](c) + sigma * rng.normal(stream, static_cast<std::uint64_t>(k * d + c));
        }
        if (in_blob(k)) t.row(k) += shift[layer].transpose();
      }
      put(stage_role(layer), Tensor::from_matrix(t.cast<float>()));
      stage_tokens[layer] = std::move(t);
    }

    // Token sequences with a leading [CLS] row equal to the patch mean.
    auto with_cls = [&](const MatrixD& patches) {
      MatrixD seq(tokens, d);
      seq.row(0) = patches.colwise().mean();
      seq.bottomRows(n) = patches;
      return seq;
    };
    const MatrixD inter = with_cls(stage_tokens.at(kInterLayer));
    const MatrixD last = with_cls(stage_tokens.at(kStages.back()));

    Tensor attn(DType::kF32, {heads, tokens, tokens});
    Tensor values(DType::kF32, {heads, tokens, dh});
    for (int h = 0; h < heads; ++h) {
      const MatrixD unit = l2_normalize(MatrixD(inter.middleCols(h * dh, dh)));
      const MatrixD probs = softmax_lastdim(MatrixD(unit * unit.transpose() * p.attn_sharpness));
      float* a = attn.f32().data() + h * tokens * tokens;
      float* v = values.f32().data() + h * tokens * dh;
      for (Index i = 0; i < tokens; ++i) {
        for (Index j = 0; j < tokens; ++j) a[i * tokens + j] = static_cast<float>(probs(i, j));
        for (Index j = 0; j < dh; ++j) v[i * dh + j] = static_cast<float>(last(i, h * dh + j));
      }
    }
    put("attn_inter", std::move(attn));
    put("v_last", std::move(values));

    const MatrixD global = layernorm(MatrixD(last.topRows(1)), VectorD::Ones(d), VectorD::Zero(d));
    put("cls_global", Tensor::from_vector(VectorD(global.row(0).transpose()).cast<float>()));

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(pixels) * pixels, 0);
    for (int y = 0; y < pixels; ++y) {
      for (int x = 0; x < pixels; ++x) {
        if (in_blob(static_cast<Index>(y / p.patch_size) * p.grid + x / p.patch_size)) {
          mask[static_cast<std::size_t>(y) * pixels + x] = 1;
        }
      }
    }
    put("gt_mask", Tensor::from_bytes({pixels, pixels}, std::move(mask)));
    put("gt_label", Tensor::from_bytes({}, {static_cast<std::uint8_t>(anomalous[u] ? 1 : 0)}));
    m.images.push_back(std::move(entry));
  }
  return out;
}

void write_synthetic_bundle(const SynthParams& params, const std::filesystem::path& dir) {
  const SynthBundle b = synthesize(params);
  write_bundle(b.manifest, b.tensors, dir);
}

}  // namespace fiseclip
