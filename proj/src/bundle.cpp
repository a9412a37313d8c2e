#include "fiseclip/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "fiseclip/error.hpp"

namespace fiseclip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Shape = std::vector<std::int64_t>;

const std::vector<std::string>& shared_roles() {
  static const std::vector<std::string> roles = {"attn_out_proj_w", "attn_out_proj_b", "ln_post_scale",
                                                 "ln_post_bias",    "visual_proj",     "text_feats"};
  return roles;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::optional<int> parse_layer_suffix(const std::string& role, const std::string& prefix) {
  if (!starts_with(role, prefix)) return std::nullopt;
  const auto digits = role.substr(prefix.size());
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  return std::stoi(digits);
}

void expect_record(const Manifest& m, const std::string& owner, const std::string& role, const std::string& name,
                   DType dtype, const Shape& shape) {
  const TensorRecord* rec = m.find_record(name);
  if (rec == nullptr) throw BundleError(owner + ": tensor '" + name + "' (" + role + ") is not listed in tensors");
  if (rec->dtype != dtype) {
    throw BundleError("tensor '" + name + "': dtype " + std::string(to_string(rec->dtype)) + ", expected " +
                      std::string(to_string(dtype)));
  }
  if (rec->shape != shape) {
    throw BundleError("tensor '" + name + "': shape " + shape_to_string(rec->shape) + ", expected " +
                      shape_to_string(shape));
  }
}

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string file_for(const std::string& name, DType dtype) {
  std::string safe;
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    safe.push_back(ok ? c : '_');
  }
  return "tensors/" + safe + (dtype == DType::kF32 ? ".f32" : ".u8");
}

void check_attention(const std::string& name, const Tensor& attn) {
  const auto heads = attn.shape()[0];
  for (std::int64_t h = 0; h < heads; ++h) {
    const auto a = attn.slice(h);
    for (Index i = 0; i < a.rows(); ++i) {
      double sum = 0.0;
      for (Index j = 0; j < a.cols(); ++j) {
        if (!(a(i, j) >= 0.0f) || !std::isfinite(a(i, j))) {
          throw BundleError("tensor '" + name + "': attention entry is negative or non-finite (head " +
                            std::to_string(h) + ", row " + std::to_string(i) + ")");
        }
        sum += a(i, j);
      }
      if (std::abs(sum - 1.0) > 1e-3) {
        throw BundleError("tensor '" + name + "': attention row sums to " + std::to_string(sum) + " (head " +
                          std::to_string(h) + ", row " + std::to_string(i) + ")");
      }
    }
  }
}

void check_finite(const std::string& name, const Tensor& t) {
  if (t.dtype() != DType::kF32) return;
  for (float v : t.f32()) {
    if (!std::isfinite(v)) throw BundleError("tensor '" + name + "' contains a non-finite value");
  }
}

void check_text(const std::string& name, const MatrixF& text) {
  for (Index r = 0; r < text.rows(); ++r) {
    double ss = 0.0;
    for (Index c = 0; c < text.cols(); ++c) ss += static_cast<double>(text(r, c)) * text(r, c);
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4) {
      throw BundleError("tensor '" + name + "': row " + std::to_string(r) + " has norm " +
                        std::to_string(std::sqrt(ss)) + ", expected unit norm");
    }
  }
}

void check_binary(const std::string& name, const Tensor& t) {
  for (auto v : t.u8()) {
    if (v > 1) throw BundleError("tensor '" + name + "' holds value " + std::to_string(v) + ", expected 0 or 1");
  }
}

// Content checks that go beyond the manifest (validated on load and before write).
void check_content(const std::string& role, const std::string& name, const Tensor& t) {
  check_finite(name, t);
  if (role == "attn_inter" || starts_with(role, "attn_L")) check_attention(name, t);
  if (role == "text_feats") check_text(name, MatrixF(t.as_matrix(t.shape()[0], t.shape()[1])));
  if (role == "gt_mask" || role == "gt_label") check_binary(name, t);
}

MatrixF to_matrix(const Tensor& t) { return t.as_matrix(t.shape()[0], t.shape()[1]); }
VectorF to_vector(const Tensor& t) { return t.as_matrix(t.numel(), 1); }

}  // namespace

const std::string& ImageEntry::tensor(const std::string& role) const {
  auto it = tensors.find(role);
  if (it == tensors.end()) throw BundleError("image '" + id + "' has no '" + role + "' tensor");
  return it->second;
}

const TensorRecord* Manifest::find_record(const std::string& name) const {
  for (const auto& r : tensors) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

const TensorRecord& Manifest::record(const std::string& name) const {
  const auto* r = find_record(name);
  if (r == nullptr) throw BundleError("unknown tensor '" + name + "'");
  return *r;
}

std::string stage_role(int layer) { return "tokens_L" + std::to_string(layer); }
std::string attn_role(int layer) { return "attn_L" + std::to_string(layer); }

void validate_manifest(const Manifest& m) {
  if (m.format_version != kBundleFormatVersion) {
    throw BundleError("unsupported format_version " + std::to_string(m.format_version));
  }
  if (m.image_size <= 0 || m.patch_size <= 0 || m.image_size % m.patch_size != 0) {
    throw BundleError("image_size " + std::to_string(m.image_size) + " is not a positive multiple of patch_size " +
                      std::to_string(m.patch_size));
  }
  if (m.grid != m.image_size / m.patch_size) {
    throw BundleError("grid " + std::to_string(m.grid) + " != image_size / patch_size = " +
                      std::to_string(m.image_size / m.patch_size));
  }
  if (m.feature_dim <= 0 || m.embed_dim <= 0 || m.num_heads <= 0) {
    throw BundleError("feature_dim, embed_dim and num_heads must be positive");
  }
  if (m.feature_dim % m.num_heads != 0) {
    throw BundleError("feature_dim " + std::to_string(m.feature_dim) + " is not divisible by num_heads " +
                      std::to_string(m.num_heads));
  }
  if (m.stage_layers.empty()) throw BundleError("stage_layers is empty");
  for (std::size_t i = 0; i < m.stage_layers.size(); ++i) {
    if (m.stage_layers[i] < 0 || (i > 0 && m.stage_layers[i] <= m.stage_layers[i - 1])) {
      throw BundleError("stage_layers must be strictly increasing non-negative integers");
    }
  }
  if (m.inter_attn_layer < 0 || m.inter_attn_layer > m.stage_layers.back()) {
    throw BundleError("inter_attn_layer " + std::to_string(m.inter_attn_layer) + " exceeds the last stage layer");
  }

  std::set<std::string> names;
  std::set<std::string> files;
  for (const auto& r : m.tensors) {
    if (r.name.empty()) throw BundleError("tensor record with empty name");
    if (!names.insert(r.name).second) throw BundleError("duplicate tensor '" + r.name + "'");
    for (auto e : r.shape) {
      if (e < 0) throw BundleError("tensor '" + r.name + "': negative extent in " + shape_to_string(r.shape));
    }
    const auto expected = numel_of(r.shape) * static_cast<std::int64_t>(dtype_size(r.dtype));
    if (r.byte_length != expected) {
      throw BundleError("tensor '" + r.name + "': byte_length " + std::to_string(r.byte_length) + ", expected " +
                        std::to_string(expected) + " for " + shape_to_string(r.shape) + " " +
                        std::string(to_string(r.dtype)));
    }
    const fs::path p(r.file);
    if (r.file.empty() || p.is_absolute() ||
        std::any_of(p.begin(), p.end(), [](const fs::path& part) { return part == ".."; })) {
      throw BundleError("tensor '" + r.name + "': file '" + r.file + "' is not a relative path inside the bundle");
    }
    if (!files.insert(r.file).second) throw BundleError("tensor '" + r.name + "': file '" + r.file + "' reused");
  }

  const std::int64_t n = m.num_patches();
  const std::int64_t t = n + 1;
  const std::int64_t d = m.feature_dim;
  const std::int64_t c = m.embed_dim;
  const std::int64_t heads = m.num_heads;
  const std::int64_t dh = m.head_dim();

  const std::map<std::string, Shape> shared_shapes = {
      {"attn_out_proj_w", {d, d}}, {"attn_out_proj_b", {d}}, {"ln_post_scale", {d}},
      {"ln_post_bias", {d}},       {"visual_proj", {d, c}},  {"text_feats", {2, c}}};
  for (const auto& role : shared_roles()) {
    auto it = m.shared.find(role);
    if (it == m.shared.end()) throw BundleError("shared weights lack '" + role + "'");
    expect_record(m, "shared", role, it->second, DType::kF32, shared_shapes.at(role));
  }
  for (const auto& [role, name] : m.shared) {
    if (!shared_shapes.count(role)) throw BundleError("unknown shared role '" + role + "'");
  }

  std::set<std::string> ids;
  for (const auto& img : m.images) {
    if (img.id.empty()) throw BundleError("image with empty id");
    if (!ids.insert(img.id).second) throw BundleError("duplicate image id '" + img.id + "'");
    const std::string owner = "image '" + img.id + "'";
    for (int layer : m.stage_layers) {
      const auto role = stage_role(layer);
      if (!img.has(role)) throw BundleError(owner + " lacks '" + role + "'");
    }
    for (const auto* role : {"cls_global", "attn_inter", "v_last"}) {
      if (!img.has(role)) throw BundleError(owner + " lacks '" + std::string(role) + "'");
    }
    for (const auto& [role, name] : img.tensors) {
      if (auto layer = parse_layer_suffix(role, "tokens_L")) {
        if (std::find(m.stage_layers.begin(), m.stage_layers.end(), *layer) == m.stage_layers.end()) {
          throw BundleError(owner + ": '" + role + "' is not a declared stage layer");
        }
        expect_record(m, owner, role, name, DType::kF32, {n, d});
      } else if (parse_layer_suffix(role, "attn_L") || role == "attn_inter") {
        expect_record(m, owner, role, name, DType::kF32, {heads, t, t});
      } else if (role == "v_last" || role == "q_last" || role == "k_last") {
        expect_record(m, owner, role, name, DType::kF32, {heads, t, dh});
      } else if (role == "cls_global") {
        expect_record(m, owner, role, name, DType::kF32, {c});
      } else if (role == "gt_label") {
        expect_record(m, owner, role, name, DType::kU8, {});
      } else if (role == "gt_mask") {
        const auto* rec = m.find_record(name);
        if (rec == nullptr) throw BundleError(owner + ": tensor '" + name + "' (gt_mask) is not listed in tensors");
        if (rec->dtype != DType::kU8 || rec->shape.size() != 2 || rec->shape[0] < 1 || rec->shape[1] < 1) {
          throw BundleError("tensor '" + name + "': gt_mask must be a non-empty 2-D u8 tensor, got " +
                            shape_to_string(rec->shape) + " " + std::string(to_string(rec->dtype)));
        }
      } else {
        throw BundleError(owner + ": unknown tensor role '" + role + "'");
      }
    }
  }
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["model_id"] = m.model_id;
  j["image_size"] = m.image_size;
  j["patch_size"] = m.patch_size;
  j["grid"] = m.grid;
  j["feature_dim"] = m.feature_dim;
  j["embed_dim"] = m.embed_dim;
  j["num_heads"] = m.num_heads;
  j["stage_layers"] = m.stage_layers;
  j["inter_attn_layer"] = m.inter_attn_layer;
  j["shared"] = m.shared;
  j["images"] = json::array();
  for (const auto& img : m.images) {
    j["images"].push_back({{"id", img.id}, {"class_name", img.class_name}, {"tensors", img.tensors}});
  }
  j["tensors"] = json::array();
  for (const auto& r : m.tensors) {
    j["tensors"].push_back({{"name", r.name},
                            {"dtype", std::string(to_string(r.dtype))},
                            {"shape", r.shape},
                            {"file", r.file},
                            {"byte_length", r.byte_length}});
  }
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    m.model_id = j.at("model_id").get<std::string>();
    m.image_size = j.at("image_size").get<int>();
    m.patch_size = j.at("patch_size").get<int>();
    m.grid = j.at("grid").get<int>();
    m.feature_dim = j.at("feature_dim").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.num_heads = j.at("num_heads").get<int>();
    m.stage_layers = j.at("stage_layers").get<std::vector<int>>();
    m.inter_attn_layer = j.at("inter_attn_layer").get<int>();
    m.shared = j.at("shared").get<std::map<std::string, std::string>>();
    for (const auto& e : j.at("images")) {
      m.images.push_back({e.at("id").get<std::string>(), e.at("class_name").get<std::string>(),
                          e.at("tensors").get<std::map<std::string, std::string>>()});
    }
    for (const auto& e : j.at("tensors")) {
      m.tensors.push_back({e.at("name").get<std::string>(), dtype_from_string(e.at("dtype").get<std::string>()),
                           e.at("shape").get<std::vector<std::int64_t>>(), e.at("file").get<std::string>(),
                           e.at("byte_length").get<std::int64_t>()});
    }
  } catch (const json::exception& e) {
    throw BundleError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_tensor_file(const fs::path& path, const Tensor& t) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const auto bytes = t.to_bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor read_tensor_file(const fs::path& path, const TensorRecord& record) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("tensor '" + record.name + "': cannot stat '" + path.string() + "'");
  if (static_cast<std::int64_t>(size) != record.byte_length) {
    throw BundleError("tensor '" + record.name + "': file holds " + std::to_string(size) + " bytes, byte_length is " +
                      std::to_string(record.byte_length));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("tensor '" + record.name + "': cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("tensor '" + record.name + "': short read from '" + path.string() + "'");
  return Tensor::decode(record.dtype, record.shape, bytes);
}

Tensor Bundle::load(const std::string& name) const {
  const auto& rec = manifest_.record(name);
  return read_tensor_file(root_ / rec.file, rec);
}

SharedWeights Bundle::load_shared() const {
  auto get = [&](const std::string& role) {
    const auto& name = manifest_.shared.at(role);
    Tensor t = load(name);
    check_content(role, name, t);
    return t;
  };
  SharedWeights w;
  w.attn_out_proj_w = to_matrix(get("attn_out_proj_w"));
  w.attn_out_proj_b = to_vector(get("attn_out_proj_b"));
  w.ln_post_scale = to_vector(get("ln_post_scale"));
  w.ln_post_bias = to_vector(get("ln_post_bias"));
  w.visual_proj = to_matrix(get("visual_proj"));
  w.text_feats = to_matrix(get("text_feats"));
  return w;
}

ImageTensors Bundle::load_image(const ImageEntry& entry) const {
  ImageTensors out;
  for (const auto& [role, name] : entry.tensors) {
    Tensor t = load(name);
    check_content(role, name, t);
    if (auto layer = parse_layer_suffix(role, "tokens_L")) {
      out.tokens[*layer] = to_matrix(t);
    } else if (auto alayer = parse_layer_suffix(role, "attn_L")) {
      out.extra_attn[*alayer] = std::move(t);
    } else if (role == "attn_inter") {
      out.attn_inter = std::move(t);
    } else if (role == "v_last") {
      out.v_last = std::move(t);
    } else if (role == "q_last") {
      out.q_last = std::move(t);
    } else if (role == "k_last") {
      out.k_last = std::move(t);
    } else if (role == "cls_global") {
      out.cls_global = to_vector(t);
    } else if (role == "gt_mask") {
      MatrixF mask(t.shape()[0], t.shape()[1]);
      const auto bytes = t.u8();
      for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = static_cast<float>(bytes[static_cast<std::size_t>(i)]);
      out.gt_mask = std::move(mask);
    } else if (role == "gt_label") {
      out.gt_label = t.u8()[0];
    }
  }
  return out;
}

Bundle read_bundle(const fs::path& dir) {
  const auto manifest_path = dir / kManifestFile;
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open bundle manifest '" + manifest_path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Manifest m = manifest_from_json(text);
  validate_manifest(m);
  for (const auto& rec : m.tensors) {
    std::error_code ec;
    const auto size = fs::file_size(dir / rec.file, ec);
    if (ec) throw IoError("tensor '" + rec.name + "': missing file '" + (dir / rec.file).string() + "'");
    if (static_cast<std::int64_t>(size) != rec.byte_length) {
      throw BundleError("tensor '" + rec.name + "': file holds " + std::to_string(size) +
                        " bytes, byte_length is " + std::to_string(rec.byte_length));
    }
  }
  return Bundle(std::move(m), dir);
}

void write_bundle(const Manifest& manifest, const std::map<std::string, Tensor>& tensors, const fs::path& dir) {
  Manifest m = manifest;
  std::vector<TensorRecord> records;
  for (const auto& [name, t] : tensors) {
    TensorRecord rec{name, t.dtype(), t.shape(), file_for(name, t.dtype()),
                     static_cast<std::int64_t>(t.byte_length())};
    if (const auto* given = manifest.find_record(name)) {
      if (given->dtype != rec.dtype || given->shape != rec.shape || given->byte_length != rec.byte_length) {
        throw BundleError("tensor '" + name + "': record disagrees with the supplied data");
      }
      rec.file = given->file;
    }
    records.push_back(std::move(rec));
  }
  for (const auto& given : manifest.tensors) {
    if (!tensors.count(given.name)) throw BundleError("tensor '" + given.name + "' has no data to write");
  }
  m.tensors = std::move(records);
  validate_manifest(m);

  std::map<std::string, std::string> role_of;
  for (const auto& [role, name] : m.shared) role_of[name] = role;
  for (const auto& img : m.images) {
    for (const auto& [role, name] : img.tensors) role_of[name] = role;
  }
  for (const auto& [name, t] : tensors) {
    auto it = role_of.find(name);
    check_content(it == role_of.end() ? std::string() : it->second, name, t);
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create bundle directory '" + dir.string() + "'");
  for (const auto& rec : m.tensors) write_tensor_file(dir / rec.file, tensors.at(rec.name));
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest_to_json(m);
  if (!out) throw IoError("failed writing manifest in '" + dir.string() + "'");
}

}  // namespace fiseclip
