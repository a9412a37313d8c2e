#include <doctest.h>

#include <random>

#include "fiseclip/error.hpp"
#include "fiseclip/metrics.hpp"
#include "oracles.hpp"

using namespace fiseclip;

namespace {

struct Draw {
  std::vector<ScoredSample> samples;
  std::vector<double> s;
  std::vector<int> y;
};

// Dyadic scores: ties are common and cubic transforms stay exact.
Draw random_draw(std::mt19937& rng, int n, int levels) {
  Draw d;
  std::uniform_int_distribution<int> q(0, levels - 1);
  for (int i = 0; i < n; ++i) {
    const int y = (i < 2) ? i : static_cast<int>(rng() % 2);
    const double s = q(rng) / 64.0 + 0.25 * y * (rng() % 2);
    d.samples.push_back({s, y});
    d.s.push_back(s);
    d.y.push_back(y);
  }
  return d;
}

std::vector<ScoredSample> transformed(const std::vector<ScoredSample>& in) {
  auto out = in;
  for (auto& x : out) x.score = x.score * x.score * x.score + x.score;
  return out;
}

}  // namespace

TEST_CASE("trivial rankings") {
  const std::vector<ScoredSample> perfect{{0.1, 0}, {0.2, 0}, {0.8, 1}, {0.9, 1}};
  CHECK(auroc(perfect) == 1.0);
  CHECK(average_precision(perfect) == 1.0);
  CHECK(f1max(perfect) == 1.0);
  const std::vector<ScoredSample> reversed{{0.9, 0}, {0.8, 0}, {0.2, 1}, {0.1, 1}};
  CHECK(auroc(reversed) == 0.0);
  const std::vector<ScoredSample> tied{{0.5, 0}, {0.5, 1}, {0.5, 0}, {0.5, 1}};
  CHECK(auroc(tied) == 0.5);
  CHECK(average_precision(tied) == 0.5);
  CHECK(f1max(tied) == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(auroc(std::vector<ScoredSample>{{0.1, 1}, {0.2, 1}}), UndefinedMetricError);
  CHECK_THROWS_AS(average_precision(std::vector<ScoredSample>{{0.1, 0}}), UndefinedMetricError);
  CHECK_THROWS_AS(f1max(std::vector<ScoredSample>{}), UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<ScoredSample>{{std::nan(""), 1}, {0.2, 0}}), ParameterError);
}

TEST_CASE("scalar metrics against exhaustive oracles") {
  std::mt19937 rng(131);
  for (int trial = 0; trial < 60; ++trial) {
    const Draw d = random_draw(rng, 2 + trial * 3, 3 + trial % 20);
    CHECK(std::abs(auroc(d.samples) - oracle::pairwise_auroc(d.s, d.y)) <= 1e-9);
    CHECK(std::abs(average_precision(d.samples) - oracle::sweep_ap(d.s, d.y)) <= 1e-9);
    CHECK(std::abs(f1max(d.samples) - oracle::sweep_f1max(d.s, d.y)) <= 1e-9);
  }
}

TEST_CASE("strictly increasing transforms leave metrics unchanged") {
  std::mt19937 rng(137);
  for (int trial = 0; trial < 40; ++trial) {
    const Draw d = random_draw(rng, 50 + trial, 10);
    const auto t = transformed(d.samples);
    CHECK(auroc(t) == auroc(d.samples));
    CHECK(average_precision(t) == average_precision(d.samples));
    CHECK(f1max(t) == f1max(d.samples));
  }
}

TEST_CASE("label flip mirrors AU-ROC") {
  std::mt19937 rng(139);
  for (int trial = 0; trial < 30; ++trial) {
    const Draw d = random_draw(rng, 80, 7);
    auto flipped = d.samples;
    for (auto& x : flipped) x.label = 1 - x.label;
    CHECK(std::abs(auroc(flipped) - (1.0 - auroc(d.samples))) <= 1e-12);
  }
}

TEST_CASE("label_regions") {
  MatrixF m = MatrixF::Zero(5, 5);
  m(0, 0) = 1;
  m(1, 1) = 1;  // diagonal neighbour joins the first region
  m(4, 4) = 1;
  m(0, 4) = 1;
  m(1, 4) = 1;
  const auto r = label_regions(m);
  CHECK(r.count == 3);
  CHECK(r.labels(0, 0) == r.labels(1, 1));
  CHECK(r.labels(0, 4) == r.labels(1, 4));
  CHECK(r.labels(0, 0) != r.labels(4, 4));
  CHECK(r.labels(2, 2) == 0);
}

TEST_CASE("aupro") {
  MatrixF mask = MatrixF::Zero(8, 8);
  mask.block(2, 2, 3, 3).setOnes();
  SUBCASE("score map equal to the mask is perfect") { CHECK(aupro({mask}, {mask}) == doctest::Approx(1.0)); }
  SUBCASE("constant map follows the chance diagonal") {
    CHECK(std::abs(aupro({MatrixF::Constant(8, 8, 0.5f)}, {mask}) - 0.15) <= 1e-12);
  }
  SUBCASE("random 32x32 maps with three regions against the sweep oracle") {
    std::mt19937 rng(149);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<MatrixF> maps, masks;
      std::vector<oracle::Grid> gm, gk;
      for (int k = 0; k < 2; ++k) {
        MatrixF gt = MatrixF::Zero(32, 32);
        const int regions = k == 0 ? 3 : 1 + trial % 3;
        for (int r = 0; r < regions; ++r) {
          const int y = 1 + 10 * r, x = 2 + static_cast<int>(rng() % 20), h = 2 + static_cast<int>(rng() % 6);
          gt.block(y, x, h, 1 + static_cast<int>(rng() % 8)).setOnes();
        }
        MatrixF map = oracle::random_matrix(rng, 32, 32) + 1.5f * gt;
        for (Index i = 0; i < map.size(); ++i) map.data()[i] = std::round(map.data()[i] * 8.0f) / 8.0f;
        maps.push_back(map);
        masks.push_back(gt);
        gm.push_back(oracle::to_grid(map));
        gk.push_back(oracle::to_grid(gt));
      }
      const double want = oracle::sweep_aupro(gm, gk, 0.3);
      CHECK(std::abs(aupro(maps, masks) - want) <= 1e-3);
      std::vector<MatrixF> warped;
      for (const auto& m : maps) warped.push_back((m.array().cube() + m.array()).matrix());
      CHECK(aupro(warped, masks) == aupro(maps, masks));
    }
  }
  CHECK_THROWS_AS(aupro({MatrixF::Zero(4, 4)}, {MatrixF::Zero(4, 4)}), UndefinedMetricError);
  CHECK_THROWS_AS(aupro({MatrixF::Zero(4, 4)}, {MatrixF::Ones(4, 4)}), UndefinedMetricError);
}
