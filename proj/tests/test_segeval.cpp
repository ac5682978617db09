#include "doctest.h"
#include "geogan/segeval.hpp"
#include "oracles.hpp"

using namespace geogan;

namespace {
std::vector<uint8_t> random_mask(Rng& rng, int n, real p = 0.35) {
  std::vector<uint8_t> m(n, 0);
  for (auto& v : m) v = rng.uniform() < p ? 1 : 0;
  return m;
}
}  // namespace

TEST_CASE("dice basic cases and the worked example") {
  std::vector<uint8_t> a(16, 0), b(16, 0);
  CHECK(dice(a, b, 1) == doctest::Approx(1.0));  // both empty
  a[0] = 1;
  CHECK(dice(a, b, 1) == doctest::Approx(0.0));  // one empty
  // pred 4 px, truth 8 px, overlap 3 -> 2*3/12.
  std::vector<uint8_t> p(16, 0), t(16, 0);
  for (int i = 0; i < 4; ++i) p[i] = 1;
  for (int i = 1; i < 9; ++i) t[i] = 1;
  CHECK(dice(p, t, 1) == doctest::Approx(0.5));
  CHECK(dice(p, t, 1) == oracle::dice_brute(p, t, 1));
  CHECK_THROWS_AS(dice(p, std::vector<uint8_t>(4, 0), 1), Error);
}

TEST_CASE("dice symmetry and brute-force equality on random masks") {
  Rng rng(17);
  for (int k = 0; k < 200; ++k) {
    const auto a = random_mask(rng, 64);
    const auto b = random_mask(rng, 64);
    const real d1 = dice(a, b, 1);
    CHECK(d1 == dice(b, a, 1));
    CHECK(d1 == oracle::dice_brute(a, b, 1));
  }
}

TEST_CASE("hausdorff basic cases") {
  std::vector<uint8_t> a(64, 0), b(64, 0);
  a[0] = 1;  // (0,0)
  b[3 * 8 + 4] = 1;  // (3,4): the 3-4-5 triangle
  const auto d = hausdorff(a, b, 8, 8, 1);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(*hausdorff(a, a, 8, 8, 1) == doctest::Approx(0.0));
  CHECK_FALSE(hausdorff(a, std::vector<uint8_t>(64, 0), 8, 8, 1).has_value());
}

TEST_CASE("hausdorff equals the exhaustive pairwise oracle on random 8x8 masks") {
  Rng rng(23);
  int tested = 0;
  while (tested < 300) {
    const auto a = random_mask(rng, 64);
    const auto b = random_mask(rng, 64);
    const auto got = hausdorff(a, b, 8, 8, 1);
    const auto want = oracle::hausdorff_brute(a, b, 8, 8, 1);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    CHECK(*got == doctest::Approx(*want).epsilon(1e-9));
    // Symmetry in the two arguments.
    CHECK(*hausdorff(b, a, 8, 8, 1) == doctest::Approx(*got).epsilon(1e-12));
    ++tested;
  }
}

TEST_CASE("hausdorff respects anisotropic spacing") {
  std::vector<uint8_t> a(64, 0), b(64, 0);
  a[0] = 1;
  b[4] = 1;  // 4 columns apart
  Spacing sp{1.0, 2.5};
  const auto d = hausdorff(a, b, 8, 8, 1, sp);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(10.0).epsilon(1e-12));
  const auto want = oracle::hausdorff_brute(a, b, 8, 8, 1, sp.sy, sp.sx);
  CHECK(*d == doctest::Approx(*want).epsilon(1e-12));
}

TEST_CASE("dice never decreases as a nested prediction dilates toward the truth") {
  // Truth: filled disk; predictions: growing concentric disks.
  const int h = 32, w = 32;
  std::vector<uint8_t> truth(h * w, 0);
  auto disk = [&](real r) {
    std::vector<uint8_t> m(h * w, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - 16.0) * (y - 16.0) + (x - 16.0) * (x - 16.0) <= r * r)
          m[y * w + x] = 1;
    return m;
  };
  truth = disk(10.0);
  real prev = -1;
  for (real r = 1.0; r <= 10.0; r += 1.0) {
    const real d = dice(disk(r), truth, 1);
    CHECK(d >= prev);
    prev = d;
  }
  CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("metrics aggregation: means inside per-sample range, missing HD counted") {
  std::vector<SampleMetrics> rows;
  for (int i = 0; i < 4; ++i) {
    SampleMetrics m;
    m.sample_id = "s" + std::to_string(i);
    m.class_label = ClassLabel::diseased;
    m.dice_per_label = {0.9, 0.8, 0.7, 0.6, 0.2 + 0.1 * i};
    m.truth_has_fluid = true;
    m.fluid_dice = m.dice_per_label[4];
    if (i != 2) m.fluid_hd = 1.0 + i;
    rows.push_back(m);
  }
  const MetricsReport r = aggregate_metrics(rows, 5);
  CHECK(r.fluid_samples == 4);
  CHECK(r.fluid_hd_missing == 1);
  CHECK(r.fluid_hd_defined == 3);
  real lo = 1e9, hi = -1e9;
  for (const auto& row : r.rows) {
    lo = std::min(lo, row.fluid_dice);
    hi = std::max(hi, row.fluid_dice);
  }
  CHECK(r.fluid_dice_mean >= lo);
  CHECK(r.fluid_dice_mean <= hi);
  CHECK(r.fluid_dice_mean == doctest::Approx((0.2 + 0.3 + 0.4 + 0.5) / 4));

  // JSON round trip preserves rows and aggregates.
  const MetricsReport rr = MetricsReport::from_json(r.to_json());
  CHECK(rr.rows.size() == r.rows.size());
  CHECK(rr.fluid_dice_mean == doctest::Approx(r.fluid_dice_mean));
  CHECK(rr.fluid_hd_missing == r.fluid_hd_missing);
}

TEST_CASE("segmenter overfits a tiny set and evaluation behaves") {
  PhantomConfig pc;
  pc.height = 32;
  pc.width = 32;
  pc.fluid_area_min = 10;
  pc.fluid_area_max = 24;
  pc.min_fluid_region_area = 6;
  pc.wave_amp_min = 0.4;
  pc.wave_amp_max = 1.0;
  pc.harmonic_amp_max = 0.4;
  pc.base_jitter_frac = 0.01;
  std::vector<ImageSample> data;
  for (uint64_t i = 0; i < 8; ++i) {
    data.push_back(generate_sample(pc, i % 2 ? ClassLabel::diseased : ClassLabel::normal, i));
    data.back().sample_id = "s" + std::to_string(i);
  }
  std::vector<const ImageSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);

  SegConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.base_channels = 6;
  sc.steps = 400;
  sc.batch = 4;
  sc.eval_every = 100;
  SegUNet net(sc, 3);
  CHECK_THROWS_AS(train_segmenter(net, {}, ptrs, 1), Error);
  const auto report = train_segmenter(net, ptrs, ptrs, 1);
  CHECK(report.final_train_ce < 0.15);
  // Memorized set: strong overlap on its own training images.
  CHECK(mean_foreground_dice(net, ptrs) > 0.9);

  const MetricsReport r = evaluate(net, ptrs);
  CHECK(static_cast<int>(r.rows.size()) == 8);
  CHECK(r.fluid_samples == 4);
  for (const auto& row : r.rows)
    for (real d : row.dice_per_label) {
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
}

TEST_CASE("segmenter training is deterministic per seed") {
  PhantomConfig pc;
  pc.height = 32;
  pc.width = 32;
  pc.fluid_area_min = 10;
  pc.fluid_area_max = 24;
  pc.min_fluid_region_area = 6;
  pc.wave_amp_min = 0.4;
  pc.wave_amp_max = 1.0;
  pc.harmonic_amp_max = 0.4;
  pc.base_jitter_frac = 0.01;
  std::vector<ImageSample> data;
  for (uint64_t i = 0; i < 6; ++i) {
    data.push_back(generate_sample(pc, ClassLabel::diseased, i));
    data.back().sample_id = "s" + std::to_string(i);
  }
  std::vector<const ImageSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  SegConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.base_channels = 4;
  sc.steps = 10;
  sc.batch = 4;
  SegUNet a(sc, 9), b(sc, 9);
  train_segmenter(a, ptrs, {}, 4);
  train_segmenter(b, ptrs, {}, 4);
  CHECK(a.params().snapshot() == b.params().snapshot());
}
