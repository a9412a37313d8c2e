#include "fiseclip/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fiseclip/error.hpp"
#include "fiseclip/ficlip.hpp"
#include "fiseclip/metrics.hpp"
#include "fiseclip/proxy.hpp"

namespace fiseclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::string map_stem(std::size_t index, const std::string& id) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index << '_' << safe_name(id);
  return os.str();
}

}  // namespace

RunConfig resolve_config(const RunConfig& config, const Manifest& manifest) {
  RunConfig c = config;
  if (c.attention_source.empty()) c.attention_source = "inter:" + std::to_string(manifest.inter_attn_layer);
  if (c.ficlip.stage_layers.empty()) {
    c.ficlip.stage_layers = manifest.stage_layers;
  } else {
    for (int layer : c.ficlip.stage_layers) {
      if (std::find(manifest.stage_layers.begin(), manifest.stage_layers.end(), layer) == manifest.stage_layers.end()) {
        throw ConfigError("ficlip.stage_layers: layer " + std::to_string(layer) + " was not exported by the bundle");
      }
    }
  }
  c.validate();
  for (const auto& entry : manifest.images) {
    select_attention_source(c.attention_source, available_attention(manifest, entry));
  }
  return c;
}

ImageAlignment align_image(const Bundle& bundle, const ImageEntry& entry, const SharedWeights& shared,
                           const RunConfig& config) {
  const auto& m = bundle.manifest();
  ImageTensors t = bundle.load_image(entry);
  const auto source = select_attention_source(config.attention_source, available_attention(m, entry));
  const Tensor attn = resolve_attention(source, t, m.inter_attn_layer);
  const MatrixF x_attn = recombine(attn, t.v_last, shared.attn_out_proj_w, shared.attn_out_proj_b);
  const MatrixF f_s = project_patches(x_attn, shared.ln_post_scale, shared.ln_post_bias, shared.visual_proj);

  ImageAlignment a;
  a.seg = segment(f_s, shared.text_feats, config.tau);
  a.mask = initial_mask(a.seg, config.lambda);
  a.cls = classify(t.cls_global, shared.text_feats, config.tau);
  for (int layer : config.ficlip.stage_layers) a.stage_tokens[layer] = std::move(t.tokens.at(layer));
  if (t.gt_mask) {
    a.out_size = {t.gt_mask->rows(), t.gt_mask->cols()};
  } else {
    a.out_size = {m.image_size, m.image_size};
  }
  return a;
}

ScoreRun score_bundle(const Bundle& bundle, const RunConfig& config) {
  const auto& m = bundle.manifest();
  ScoreRun run;
  run.config = resolve_config(config, m);
  const SharedWeights shared = bundle.load_shared();

  const std::size_t total = m.images.size();
  const std::size_t chunk = run.config.batch_size > 0 ? static_cast<std::size_t>(run.config.batch_size) : total;
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    std::vector<std::map<int, MatrixF>> tokens;
    std::vector<AnomalyMask> masks;
    std::vector<VectorD> seg_scores;
    std::vector<double> cls_scores;
    std::vector<std::pair<Index, Index>> sizes;
    for (std::size_t u = begin; u < end; ++u) {
      ImageAlignment a = align_image(bundle, m.images[u], shared, run.config);
      tokens.push_back(std::move(a.stage_tokens));
      masks.push_back(std::move(a.mask));
      seg_scores.push_back(std::move(a.seg.score));
      cls_scores.push_back(a.cls.score);
      sizes.push_back(a.out_size);
    }
    const MutualResult mutual = mutual_filter_loop(tokens, masks, seg_scores, run.config.ficlip);
    if (mutual.degenerate) {
      run.warnings.push_back("batch starting at image '" + m.images[begin].id +
                             "' has a single image: no mutual references, text-alignment scores only");
    }
    const auto fused = fuse_and_postprocess(mutual.fused, cls_scores, sizes, run.config.fusion);
    for (std::size_t k = 0; k < fused.size(); ++k) {
      const auto& entry = m.images[begin + k];
      run.images.push_back({entry.id, entry.class_name, fused[k].image_score, cls_scores[k], fused[k].pixel_map});
    }
  }
  return run;
}

void write_scores(const ScoreRun& run, const fs::path& out_dir) {
  json j;
  j["format_version"] = 1;
  j["config"] = run.config.to_json();
  j["warnings"] = run.warnings;
  j["images"] = json::array();
  std::vector<std::pair<fs::path, Tensor>> files;
  for (std::size_t k = 0; k < run.images.size(); ++k) {
    const auto& img = run.images[k];
    const std::string file = "maps/" + map_stem(k, img.id) + ".f32";
    Tensor t = Tensor::from_matrix(img.pixel_map);
    j["images"].push_back({{"id", img.id},
                           {"class_name", img.class_name},
                           {"image_score", img.image_score},
                           {"cls_score", img.cls_score},
                           {"map",
                            {{"name", img.id + "/map"},
                             {"dtype", "f32"},
                             {"shape", t.shape()},
                             {"file", file},
                             {"byte_length", t.byte_length()}}}});
    files.emplace_back(out_dir / file, std::move(t));
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "'");
  for (const auto& [path, t] : files) write_tensor_file(path, t);
  std::ofstream out(out_dir / kScoresFile, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + (out_dir / kScoresFile).string() + "'");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + (out_dir / kScoresFile).string() + "'");
}

ScoreRun read_scores(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kScoresFile : path;
  const fs::path root = file.parent_path();
  std::ifstream in(file);
  if (!in) throw IoError("cannot open scores '" + file.string() + "'");
  ScoreRun run;
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != 1) throw BundleError("scores: unsupported format_version");
    run.config = RunConfig::from_json(j.at("config"));
    run.warnings = j.at("warnings").get<std::vector<std::string>>();
    for (const auto& e : j.at("images")) {
      ImageResult r;
      r.id = e.at("id").get<std::string>();
      r.class_name = e.at("class_name").get<std::string>();
      r.image_score = e.at("image_score").get<double>();
      r.cls_score = e.at("cls_score").get<double>();
      const auto& mj = e.at("map");
      TensorRecord rec{mj.at("name").get<std::string>(), dtype_from_string(mj.at("dtype").get<std::string>()),
                       mj.at("shape").get<std::vector<std::int64_t>>(), mj.at("file").get<std::string>(),
                       mj.at("byte_length").get<std::int64_t>()};
      if (rec.dtype != DType::kF32 || rec.shape.size() != 2) {
        throw BundleError("scores: map of '" + r.id + "' must be a 2-D f32 tensor");
      }
      const Tensor t = read_tensor_file(root / rec.file, rec);
      r.pixel_map = t.as_matrix(rec.shape[0], rec.shape[1]);
      for (Index i = 0; i < r.pixel_map.size(); ++i) {
        if (!std::isfinite(r.pixel_map.data()[i])) throw BundleError("scores: map of '" + r.id + "' is not finite");
      }
      run.images.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw BundleError("malformed scores file '" + file.string() + "': " + e.what());
  }
  return run;
}

namespace {

template <typename Fn>
std::optional<double> defined(Fn fn) {
  try {
    return fn();
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto line = [&](const char* key, const std::optional<double>& v) {
    os << key << " = ";
    if (v) {
      os << *v;
    } else {
      os << "undefined";
    }
    os << '\n';
  };
  os << "images = " << images << '\n';
  line("image_auroc", image_auroc);
  line("image_f1max", image_f1max);
  line("image_ap", image_ap);
  line("pixel_auroc", pixel_auroc);
  line("pixel_f1max", pixel_f1max);
  line("pixel_ap", pixel_ap);
  line("pixel_aupro", pixel_aupro);
  return os.str();
}

EvalReport evaluate(const ScoreRun& scores, const Bundle& bundle) {
  std::map<std::string, const ImageResult*> by_id;
  for (const auto& r : scores.images) by_id[r.id] = &r;

  std::vector<ScoredSample> image_samples;
  std::vector<ScoredSample> pixel_samples;
  std::vector<MatrixF> maps;
  std::vector<MatrixF> masks;
  std::vector<std::string> missing;
  bool any_truth = false;
  for (const auto& entry : bundle.manifest().images) {
    const bool has_label = entry.has("gt_label");
    const bool has_mask = entry.has("gt_mask");
    if (!has_label && !has_mask) continue;
    any_truth = true;
    auto it = by_id.find(entry.id);
    if (it == by_id.end()) {
      missing.push_back(entry.id);
      continue;
    }
    const ImageResult& r = *it->second;
    std::optional<MatrixF> mask;
    if (has_mask) {
      const Tensor t = bundle.load(entry.tensor("gt_mask"));
      mask = MatrixF(t.shape()[0], t.shape()[1]);
      const auto bytes = t.u8();
      for (Index i = 0; i < mask->size(); ++i) {
        if (bytes[static_cast<std::size_t>(i)] > 1) throw BundleError("gt_mask of '" + entry.id + "' is not binary");
        mask->data()[i] = bytes[static_cast<std::size_t>(i)];
      }
    }
    int label = 0;
    if (has_label) {
      label = bundle.load(entry.tensor("gt_label")).u8()[0] ? 1 : 0;
    } else {
      label = mask->maxCoeff() > 0.5f ? 1 : 0;
    }
    image_samples.push_back({r.image_score, label});
    if (mask) {
      if (mask->rows() != r.pixel_map.rows() || mask->cols() != r.pixel_map.cols()) {
        throw ShapeError("map of '" + entry.id + "' does not match its ground-truth resolution");
      }
      for (Index i = 0; i < mask->size(); ++i) {
        pixel_samples.push_back({r.pixel_map.data()[i], mask->data()[i] > 0.5f ? 1 : 0});
      }
      maps.push_back(r.pixel_map);
      masks.push_back(std::move(*mask));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw UndefinedMetricError("scores lack images that have ground truth: " + list);
  }
  if (!any_truth) throw UndefinedMetricError("bundle carries no ground truth");

  EvalReport rep;
  rep.images = image_samples.size();
  rep.image_auroc = defined([&] { return auroc(image_samples); });
  rep.image_f1max = defined([&] { return f1max(image_samples); });
  rep.image_ap = defined([&] { return average_precision(image_samples); });
  if (!pixel_samples.empty()) {
    rep.pixel_auroc = defined([&] { return auroc(pixel_samples); });
    rep.pixel_f1max = defined([&] { return f1max(pixel_samples); });
    rep.pixel_ap = defined([&] { return average_precision(pixel_samples); });
    rep.pixel_aupro = defined([&] { return aupro(maps, masks, scores.config.fpr_cap); });
  }
  return rep;
}

std::string encode_pgm(const MatrixF& map) {
  std::string out = "P5\n" + std::to_string(map.cols()) + " " + std::to_string(map.rows()) + "\n255\n";
  const double lo = map.size() ? map.minCoeff() : 0.0;
  const double hi = map.size() ? map.maxCoeff() : 0.0;
  for (Index i = 0; i < map.size(); ++i) {
    const double v = hi > lo ? (static_cast<double>(map.data()[i]) - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

void write_heatmaps(const ScoreRun& run, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create heatmap directory '" + out_dir.string() + "'");
  for (std::size_t k = 0; k < run.images.size(); ++k) {
    const auto path = out_dir / (map_stem(k, run.images[k].id) + ".pgm");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    const auto bytes = encode_pgm(run.images[k].pixel_map);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
  }
}

}  // namespace fiseclip
