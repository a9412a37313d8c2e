#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fiseclip/error.hpp"
#include "fiseclip/ficlip.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace fiseclip;

namespace {

bool same(const VectorD& a, const VectorD& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("aggregate") {
  std::mt19937 rng(101);
  const MatrixF x = oracle::random_matrix(rng, 9, 4);
  CHECK(Tensor::from_matrix(aggregate(x, 1)) == Tensor::from_matrix(x));
  const MatrixF c = MatrixF::Constant(16, 3, -1.25f);
  CHECK(Tensor::from_matrix(aggregate(c, 3)) == Tensor::from_matrix(c));

  // Centre of a 3x3 grid with r = 3 sees every patch.
  const MatrixF a = aggregate(x, 3);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(a(4, j) - x.col(j).cast<double>().mean()) <= 1e-6);
  CHECK_THROWS_AS(aggregate(MatrixF(8, 2), 3), ShapeError);
}

TEST_CASE("filter_pool") {
  std::mt19937 rng(103);
  const MatrixF f = oracle::random_matrix(rng, 100, 3);
  VectorD scores(100);
  for (int i = 0; i < 100; ++i) scores(i) = (i * 37) % 100;

  SUBCASE("nothing masked keeps every row") {
    const auto p = filter_pool(f, AnomalyMask(100, false), 0.1, scores);
    CHECK(p.rows.rows() == 100);
    CHECK(Tensor::from_matrix(p.rows) == Tensor::from_matrix(f));
  }
  SUBCASE("everything masked backfills the lowest scores") {
    const auto p = filter_pool(f, AnomalyMask(100, true), 0.1, scores);
    REQUIRE(p.rows.rows() == 10);
    std::vector<Index> want;
    for (int i = 0; i < 100; ++i)
      if (scores(i) < 10) want.push_back(i);
    CHECK(p.origin == want);
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(p.rows.row(k) == f.row(want[k]));
  }
  SUBCASE("ties fall back to patch order") {
    const auto p = filter_pool(f, AnomalyMask(100, true), 0.03, VectorD::Zero(100));
    CHECK(p.origin == std::vector<Index>{0, 1, 2});
  }
  SUBCASE("random mask keeps exactly the unmasked rows") {
    AnomalyMask m(100);
    for (int i = 0; i < 100; ++i) m[i] = (rng() % 3) == 0;
    const auto p = filter_pool(f, m, 0.1, scores);
    std::vector<Index> want;
    for (int i = 0; i < 100; ++i)
      if (!m[i]) want.push_back(i);
    CHECK(p.origin == want);
  }
  CHECK(pool_floor(100, 0.1) == 10);
  CHECK(pool_floor(5, 0.1) == 1);
  CHECK(pool_floor(3, 2.0) == 3);
}

TEST_CASE("match_min") {
  std::mt19937 rng(107);
  SUBCASE("a set matched against itself scores zero") {
    const MatrixF x = oracle::random_matrix(rng, 12, 5);
    CHECK((match_min(x, x).array() == 0.0).all());
    CHECK((match_min(x, x, Distance::kCosine).array().abs() <= 1e-12).all());
  }
  SUBCASE("6 targets, 9 references, D=4 against double loop") {
    const MatrixF t = oracle::random_matrix(rng, 6, 4);
    const MatrixF p = oracle::random_matrix(rng, 9, 4);
    const auto want = oracle::min_distance(oracle::to_grid(t), oracle::to_grid(p));
    const VectorD got = match_min(t, p);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(got(i) - want[i]) <= 1e-6);
  }
  SUBCASE("shrinking the pool never lowers a score") {
    for (int trial = 0; trial < 100; ++trial) {
      const MatrixF t = oracle::random_matrix(rng, 5, 3);
      const MatrixF p = oracle::random_matrix(rng, 10, 3);
      const VectorD full = match_min(t, p);
      const VectorD sub = match_min(t, MatrixF(p.topRows(1 + trial % 9)));
      CHECK((sub.array() >= full.array()).all());
    }
  }
  SUBCASE("multi-pool equals concatenated pool, for any thread count") {
    const MatrixF t = oracle::random_matrix(rng, 37, 6);
    const MatrixF a = oracle::random_matrix(rng, 8, 6), b = oracle::random_matrix(rng, 5, 6);
    MatrixF ab(13, 6);
    ab << a, b;
    const VectorD ref = match_min(t, ab);
    for (int threads : {0, 1, 3, 8}) CHECK(same(match_min(t, std::vector<const MatrixF*>{&a, &b}, Distance::kL2, threads), ref));
  }
  CHECK_THROWS_AS(match_min(MatrixF(2, 3), MatrixF(0, 3)), ShapeError);
  CHECK_THROWS_AS(match_min(MatrixF(2, 3), MatrixF(2, 4)), ShapeError);
}

TEST_CASE("stage_average, binarize, vote") {
  VectorD a(3), b(3);
  a << 1, 2, 3;
  b << 3, 2, 1;
  CHECK((stage_average({a, b}).array() == 2.0).all());
  CHECK(same(stage_average({a}), a));
  CHECK_THROWS_AS(stage_average({}), ParameterError);

  for (bool f : binarize(VectorD::Constant(5, 0.7))) CHECK_FALSE(f);
  VectorD halves(4);
  halves << 0, 0, 1, 1;
  CHECK(binarize(halves) == AnomalyMask{false, false, true, true});
  VectorD ramp(5);
  ramp << 10, 12.5, 15, 17.5, 20;  // normalized 0, .25, .5, .75, 1
  CHECK(binarize(ramp, 0.5) == AnomalyMask{false, false, false, true, true});

  const AnomalyMask x{true, false, true, false}, y{true, true, false, false};
  CHECK(vote(x, y, VoteMode::kOr) == AnomalyMask{true, true, true, false});
  CHECK(vote(x, y, VoteMode::kAnd) == AnomalyMask{true, false, false, false});
  CHECK(vote(x, x, VoteMode::kOr) == x);
  CHECK(vote(x, x, VoteMode::kAnd) == x);
  CHECK(vote(x, AnomalyMask(4, false), VoteMode::kOr) == x);
  CHECK(vote(x, AnomalyMask(4, true), VoteMode::kAnd) == x);
}

TEST_CASE("loop_schedule") {
  FiclipConfig c;
  c.scales = {1, 3};
  c.stage_layers = {6, 12};
  auto flatten = [](const std::vector<std::vector<ScalePair>>& g) {
    std::vector<std::pair<std::size_t, std::pair<int, int>>> out;
    for (std::size_t k = 0; k < g.size(); ++k)
      for (const auto& p : g[k]) out.push_back({k, {p.scale, p.stage}});
    return out;
  };
  using V = std::vector<std::pair<std::size_t, std::pair<int, int>>>;
  CHECK(flatten(loop_schedule(c)) == V{{0, {1, 6}}, {0, {1, 12}}, {1, {3, 6}}, {1, {3, 12}}});
  c.loop_order = LoopOrder::kReversedScaleStage;
  CHECK(flatten(loop_schedule(c)) == V{{0, {3, 6}}, {0, {3, 12}}, {1, {1, 6}}, {1, {1, 12}}});
  c.loop_order = LoopOrder::kStageScale;
  CHECK(flatten(loop_schedule(c)) == V{{0, {1, 6}}, {0, {3, 6}}, {1, {1, 12}}, {1, {3, 12}}});
  c.loop_order = LoopOrder::kFlat;
  CHECK(flatten(loop_schedule(c)) == V{{0, {1, 6}}, {1, {1, 12}}, {2, {3, 6}}, {3, {3, 12}}});
  CHECK_THROWS_AS(parse_loop_order("sideways"), ConfigError);
  for (const char* s : {"ri", "r-i", "ir", "flat"}) CHECK(to_string(parse_loop_order(s)) == s);
}

TEST_CASE("mutual_filter_loop") {
  std::mt19937 rng(109);
  FiclipConfig cfg;
  cfg.scales = {1, 3};
  cfg.stage_layers = {6, 12};

  SUBCASE("identical images with zero seg scores stay at zero") {
    toy::Batch b = toy::random_batch(rng, 3, 9, 4, cfg.stage_layers);
    for (auto& img : b.images) img = b.images[0];
    for (auto& s : b.seg) s.setZero();
    for (auto& m : b.masks) m.assign(9, false);
    cfg.pool_floor_fraction = 1.0;
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    for (const auto& f : r.fused) CHECK((f.array() == 0.0).all());
  }
  SUBCASE("filtering off equals plain leave-one-out matching") {
    const toy::Batch b = toy::random_batch(rng, 3, 16, 4, cfg.stage_layers);
    cfg.filtering = false;
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    for (const auto& m : r.masks) CHECK(std::none_of(m.begin(), m.end(), [](bool v) { return v; }));
    for (std::size_t u = 0; u < 3; ++u) {
      VectorD total = b.seg[u];
      for (int scale : cfg.scales) {
        VectorD group = VectorD::Zero(16);
        for (int stage : cfg.stage_layers) {
          std::vector<MatrixF> feats;
          for (const auto& img : b.images) feats.push_back(aggregate(img.at(stage), scale));
          MatrixF pool(32, 4);
          int row = 0;
          for (std::size_t v = 0; v < 3; ++v)
            if (v != u) pool.middleRows(row++ * 16, 16) = feats[v];
          group += match_min(feats[u], pool) / 2.0;
        }
        total += group;
      }
      CHECK((r.fused[u] - total / 3.0).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("matches the straight-line oracle for every loop order") {
    for (auto order : {LoopOrder::kScaleStage, LoopOrder::kReversedScaleStage, LoopOrder::kStageScale,
                       LoopOrder::kFlat}) {
      for (auto vm : {VoteMode::kOr, VoteMode::kAnd}) {
        cfg.loop_order = order;
        cfg.vote_mode = vm;
        const toy::Batch b = toy::random_batch(rng, 3, 16, 5, cfg.stage_layers);
        const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
        const auto want = toy::oracle_fused(b, cfg);
        for (std::size_t u = 0; u < 3; ++u)
          for (int k = 0; k < 16; ++k) CHECK(std::abs(r.fused[u](k) - want[u][k]) <= 1e-6);
      }
    }
  }
  SUBCASE("two-image batch is symmetric") {
    toy::Batch b = toy::random_batch(rng, 2, 9, 3, cfg.stage_layers);
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    std::swap(b.images[0], b.images[1]);
    std::swap(b.masks[0], b.masks[1]);
    std::swap(b.seg[0], b.seg[1]);
    const auto s = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    CHECK(same(r.fused[0], s.fused[1]));
    CHECK(same(r.fused[1], s.fused[0]));
  }
  SUBCASE("OR voting only grows masks") {
    cfg.scales = {1, 3, 5};
    const toy::Batch b = toy::random_batch(rng, 3, 25, 4, cfg.stage_layers);
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    REQUIRE(r.mask_history.size() == 3);
    auto prev = b.masks;
    for (const auto& step : r.mask_history) {
      for (std::size_t u = 0; u < 3; ++u)
        for (int k = 0; k < 25; ++k) CHECK((!prev[u][k] || step[u][k]));
      prev = step;
    }
  }
  SUBCASE("permuting the batch permutes the results") {
    const toy::Batch b = toy::random_batch(rng, 4, 16, 4, cfg.stage_layers);
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    toy::Batch p;
    for (auto k : perm) {
      p.images.push_back(b.images[k]);
      p.masks.push_back(b.masks[k]);
      p.seg.push_back(b.seg[k]);
    }
    const auto s = mutual_filter_loop(p.images, p.masks, p.seg, cfg);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(same(s.fused[k], r.fused[perm[k]]));
      CHECK(s.masks[k] == r.masks[perm[k]]);
    }
  }
  SUBCASE("thread count does not change results") {
    const toy::Batch b = toy::random_batch(rng, 3, 25, 6, cfg.stage_layers);
    const auto one = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    cfg.threads = 0;
    const auto all = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    cfg.threads = 7;
    const auto seven = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    for (std::size_t u = 0; u < 3; ++u) {
      CHECK(same(one.fused[u], all.fused[u]));
      CHECK(same(one.fused[u], seven.fused[u]));
    }
  }
  SUBCASE("a batch of one is degenerate") {
    const toy::Batch b = toy::random_batch(rng, 1, 9, 3, cfg.stage_layers);
    const auto r = mutual_filter_loop(b.images, b.masks, b.seg, cfg);
    CHECK(r.degenerate);
    CHECK(same(r.fused[0], b.seg[0]));
  }
}

TEST_CASE("fuse_and_postprocess") {
  const std::vector<std::pair<Index, Index>> sizes(2, {8, 8});
  SUBCASE("all-zero maps") {
    const auto out = fuse_and_postprocess({VectorD::Zero(4), VectorD::Zero(4)}, {0.2, 0.6}, sizes, {});
    for (const auto& o : out) CHECK((o.pixel_map.array() == 0.0f).all());
    CHECK(out[0].image_score == doctest::Approx(0.1));
    CHECK(out[1].image_score == doctest::Approx(0.3));
  }
  SUBCASE("weight one returns the classification score") {
    VectorD a(4), b(4);
    a << 0, 1, 2, 3;
    b << 5, 1, 1, 1;
    const auto out = fuse_and_postprocess({a, b}, {0.25, 0.75}, sizes, {.sigma = 4.0, .weight = 1.0});
    CHECK(out[0].image_score == 0.25);
    CHECK(out[1].image_score == 0.75);
    CHECK(out[0].pixel_map.rows() == 8);
  }
  SUBCASE("weight zero ranks the planted peak first") {
    VectorD calm = VectorD::Constant(16, 0.1), peak = VectorD::Constant(16, 0.1);
    peak(5) = 2.0;
    const auto out = fuse_and_postprocess({calm, peak, calm}, {0.9, 0.1, 0.9}, std::vector<std::pair<Index, Index>>(3, {16, 16}),
                                          {.sigma = 1.0, .weight = 0.0});
    CHECK(out[1].image_score == 1.0);
    CHECK(out[0].image_score == 0.0);
    CHECK(out[2].image_score == 0.0);
  }
  CHECK_THROWS_AS(fuse_and_postprocess({VectorD::Zero(5)}, {0.0}, {{4, 4}}, {}), ShapeError);
  CHECK_THROWS_AS(fuse_and_postprocess({VectorD::Zero(4)}, {0.0}, {{4, 4}}, {.sigma = 1.0, .weight = 2.0}),
                  ParameterError);
}
