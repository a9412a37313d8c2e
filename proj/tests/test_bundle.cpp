#include <doctest.h>

#include <fstream>

#include "fiseclip/bundle.hpp"
#include "fiseclip/error.hpp"
#include "fiseclip/synth.hpp"
#include "fixtures.hpp"

using namespace fiseclip;
using fixtures::TempDir;

namespace {

SynthBundle tiny_bundle(int images = 1) {
  SynthParams p;
  p.seed = 3;
  p.images = images;
  p.grid = 2;
  p.dim = 4;
  p.anomaly_frac = 1.0;
  p.patch_size = 2;
  return synthesize(p);
}

}  // namespace

TEST_CASE("f32 little-endian encoding") {
  Tensor t(DType::kF32, {1});
  t.f32()[0] = 1.0f;
  const auto bytes = t.to_bytes();
  REQUIRE(bytes.size() == 4);
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[1] == 0x00);
  CHECK(bytes[2] == 0x80);
  CHECK(bytes[3] == 0x3F);
}

TEST_CASE("bundle round trip") {
  TempDir dir;
  const auto b = tiny_bundle();
  write_bundle(b.manifest, b.tensors, dir.path());
  const Bundle back = read_bundle(dir.path());

  Manifest expected = b.manifest;
  expected.tensors = back.manifest().tensors;  // records are derived on write
  CHECK(back.manifest() == expected);
  REQUIRE(back.manifest().tensors.size() == b.tensors.size());
  for (const auto& [name, t] : b.tensors) CHECK(back.load(name) == t);

  // Re-reading the manifest written by the reader's data gives the same manifest.
  TempDir again;
  std::map<std::string, Tensor> loaded;
  for (const auto& r : back.manifest().tensors) loaded[r.name] = back.load(r.name);
  write_bundle(back.manifest(), loaded, again.path());
  CHECK(read_bundle(again.path()).manifest() == back.manifest());

  const auto image = back.load_image(back.manifest().images[0]);
  CHECK(image.tokens.size() == 4);
  CHECK(image.gt_label.value() == 1);
  CHECK(image.gt_mask->rows() == 4);
}

TEST_CASE("writes are deterministic") {
  TempDir a, b;
  const auto bundle = tiny_bundle(2);
  write_bundle(bundle.manifest, bundle.tensors, a.path());
  write_bundle(bundle.manifest, bundle.tensors, b.path());
  CHECK(fixtures::snapshot(a.path()) == fixtures::snapshot(b.path()));
}

TEST_CASE("truncated tensor file names the tensor") {
  TempDir dir;
  const auto b = tiny_bundle();
  write_bundle(b.manifest, b.tensors, dir.path());
  const Bundle ok = read_bundle(dir.path());
  const auto& rec = ok.manifest().record("img_000.v_last");
  const auto path = dir.path() / rec.file;
  std::filesystem::resize_file(path, static_cast<std::uintmax_t>(rec.byte_length - 1));
  try {
    read_bundle(dir.path());
    FAIL("expected a byte-length error");
  } catch (const BundleError& e) {
    CHECK(std::string(e.what()).find("img_000.v_last") != std::string::npos);
    CHECK(std::string(e.what()).find("byte_length") != std::string::npos);
  }
  CHECK_THROWS_AS(ok.load("img_000.v_last"), BundleError);

  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_bundle(dir.path()), IoError);
}

TEST_CASE("invalid manifest is rejected before any file is written") {
  TempDir parent;
  auto b = tiny_bundle();
  // grid^2 no longer matches the token count of 4.
  b.manifest.grid = 3;
  b.manifest.image_size = 3 * b.manifest.patch_size;
  const auto target = parent / "out";
  CHECK_THROWS_AS(write_bundle(b.manifest, b.tensors, target), BundleError);
  CHECK_FALSE(std::filesystem::exists(target));

  auto c = tiny_bundle();
  c.tensors["img_000.tokens_L6"] = Tensor(DType::kF32, {5, 4});
  CHECK_THROWS_AS(write_bundle(c.manifest, c.tensors, target), BundleError);
  CHECK_FALSE(std::filesystem::exists(target));
}

TEST_CASE("manifest invariants") {
  TempDir dir;
  const auto b = tiny_bundle();
  write_bundle(b.manifest, b.tensors, dir.path());
  const Manifest good = read_bundle(dir.path()).manifest();
  CHECK_NOTHROW(validate_manifest(good));

  auto broken = [&](auto mutate) {
    Manifest m = good;
    mutate(m);
    return m;
  };
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.stage_layers = {12, 6, 18, 24}; })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.inter_attn_layer = 30; })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.patch_size = 3; })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.num_heads = 3; })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.images[0].tensors.erase("v_last"); })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.tensors[0].file = "../escape.f32"; })), BundleError);
  CHECK_THROWS_AS(validate_manifest(broken([](Manifest& m) { m.images[0].tensors["mystery"] = "x"; })), BundleError);
}

TEST_CASE("every single-field record corruption is rejected") {
  TempDir dir;
  const auto b = tiny_bundle(2);
  write_bundle(b.manifest, b.tensors, dir.path());
  const Manifest good = read_bundle(dir.path()).manifest();
  int cases = 0;
  for (std::size_t k = 0; k < good.tensors.size(); ++k) {
    for (std::size_t axis = 0; axis < good.tensors[k].shape.size(); ++axis) {
      Manifest m = good;
      m.tensors[k].shape[axis] += 1;
      CHECK_THROWS_AS(validate_manifest(m), BundleError);
      ++cases;
    }
    {
      Manifest m = good;
      m.tensors[k].shape.push_back(1);
      CHECK_THROWS_AS(validate_manifest(m), BundleError);
      ++cases;
    }
    {
      Manifest m = good;
      m.tensors[k].dtype = m.tensors[k].dtype == DType::kF32 ? DType::kU8 : DType::kF32;
      CHECK_THROWS_AS(validate_manifest(m), BundleError);
      ++cases;
    }
    for (std::int64_t delta : {-1, 1}) {
      Manifest m = good;
      m.tensors[k].byte_length += delta;
      CHECK_THROWS_AS(validate_manifest(m), BundleError);
      ++cases;
    }
  }
  CHECK(cases > 50);
}

TEST_CASE("content validation on load") {
  TempDir dir;
  auto b = tiny_bundle();
  write_bundle(b.manifest, b.tensors, dir.path());
  const Bundle bundle = read_bundle(dir.path());
  const auto& rec = bundle.manifest().record("img_000.attn_inter");

  Tensor attn = b.tensors.at("img_000.attn_inter");
  attn.f32()[0] += 0.5f;
  write_tensor_file(dir.path() / rec.file, attn);
  try {
    bundle.load_image(bundle.manifest().images[0]);
    FAIL("expected an attention-row error");
  } catch (const BundleError& e) {
    CHECK(std::string(e.what()).find("img_000.attn_inter") != std::string::npos);
  }

  auto c = tiny_bundle();
  c.tensors.at("shared.text_feats").f32()[0] += 0.1f;
  TempDir other;
  CHECK_THROWS_AS(write_bundle(c.manifest, c.tensors, other.path()), BundleError);

  auto g = tiny_bundle();
  g.tensors.at("img_000.gt_mask").u8()[0] = 7;
  CHECK_THROWS_AS(write_bundle(g.manifest, g.tensors, other.path()), BundleError);
}

TEST_CASE("malformed manifest text") {
  CHECK_THROWS_AS(manifest_from_json("{not json"), BundleError);
  CHECK_THROWS_AS(manifest_from_json("{\"format_version\": 1}"), BundleError);
  TempDir dir;
  CHECK_THROWS_AS(read_bundle(dir.path()), IoError);
}
