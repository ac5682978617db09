#include <filesystem>
#include <set>

#include "doctest.h"
#include "geogan/phantom.hpp"
#include "oracles.hpp"

using namespace geogan;

namespace {
PhantomConfig small_cfg() {
  PhantomConfig c;
  c.height = 64;
  c.width = 64;
  return c;
}
}  // namespace

TEST_CASE("normal samples have no fluid, diseased always do") {
  const PhantomConfig cfg = small_cfg();
  for (uint64_t seed : {0ull, 1ull, 7ull, 1234ull}) {
    const ImageSample n = generate_sample(cfg, ClassLabel::normal, seed);
    const ImageSample d = generate_sample(cfg, ClassLabel::diseased, seed);
    std::string why;
    CHECK_MESSAGE(check_sample_invariants(n, cfg, &why), why);
    CHECK_MESSAGE(check_sample_invariants(d, cfg, &why), why);
    int fl_n = 0;
    for (uint8_t m : n.mask) fl_n += m == cfg.fluid_label();
    CHECK(fl_n == 0);
  }
}

TEST_CASE("diseased fluid pixels were layer pixels in the seed-matched normal sample") {
  const PhantomConfig cfg = small_cfg();
  for (uint64_t seed : {7ull, 21ull, 99ull}) {
    const ImageSample n = generate_sample(cfg, ClassLabel::normal, seed);
    const ImageSample d = generate_sample(cfg, ClassLabel::diseased, seed);
    int fluid = 0;
    for (size_t i = 0; i < d.mask.size(); ++i) {
      if (d.mask[i] != cfg.fluid_label()) continue;
      ++fluid;
      // In the paired normal sample this pixel must belong to a layer.
      CHECK(n.mask[i] != 0);
      CHECK(n.mask[i] != cfg.fluid_label());
    }
    CHECK(fluid >= cfg.min_fluid_region_area);
  }
}

TEST_CASE("generation is bit-deterministic in (config, class, seed)") {
  const PhantomConfig cfg = small_cfg();
  const ImageSample a = generate_sample(cfg, ClassLabel::diseased, 42);
  const ImageSample b = generate_sample(cfg, ClassLabel::diseased, 42);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  const ImageSample c = generate_sample(cfg, ClassLabel::diseased, 43);
  CHECK(a.mask != c.mask);
}

TEST_CASE("config validation rejects impossible fluid geometry") {
  PhantomConfig cfg = small_cfg();
  cfg.fluid_area_max = 4000.0;  // cannot fit inside the band
  CHECK_THROWS_AS(generate_sample(cfg, ClassLabel::diseased, 0), Error);
  PhantomConfig cfg2 = small_cfg();
  cfg2.split_fractions = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(validate_config(cfg2), Error);
  PhantomConfig cfg3 = small_cfg();
  cfg3.n_labels = 2;
  CHECK_THROWS_AS(validate_config(cfg3), Error);
}

TEST_CASE("dataset splits: sizes, disjointness, balance, determinism") {
  const PhantomConfig cfg = small_cfg();
  const DatasetSplits s = generate_dataset(cfg, 50, 99);
  CHECK(s.train.size() == 60);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);

  std::set<std::string> ids;
  int balance[3][2] = {};
  int split_idx = 0;
  for (const auto* split : {&s.train, &s.val, &s.test}) {
    for (const auto& x : *split) {
      CHECK(ids.insert(x.sample_id).second);
      ++balance[split_idx][static_cast<int>(x.class_label)];
    }
    ++split_idx;
  }
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(balance[i][0] - balance[i][1]) <= 1);

  const DatasetSplits s2 = generate_dataset(cfg, 50, 99);
  for (size_t i = 0; i < s.train.size(); ++i) {
    CHECK(s.train[i].sample_id == s2.train[i].sample_id);
    CHECK(s.train[i].mask == s2.train[i].mask);
  }
}

TEST_CASE("class separability: fluid presence classifies perfectly") {
  const PhantomConfig cfg = small_cfg();
  const DatasetSplits s = generate_dataset(cfg, 10, 5);
  for (const auto* split : {&s.train, &s.val, &s.test})
    for (const auto& x : *split) {
      const bool has_fluid =
          std::find(x.mask.begin(), x.mask.end(),
                    static_cast<uint8_t>(cfg.fluid_label())) != x.mask.end();
      CHECK(has_fluid == (x.class_label == ClassLabel::diseased));
    }
}

TEST_CASE("dataset save/load round-trips exactly") {
  const PhantomConfig cfg = small_cfg();
  const DatasetSplits s = generate_dataset(cfg, 6, 3);
  const std::string dir = "test_tmp/phantom_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(dir, s, cfg, 6, 3);
  const DatasetSplits r = load_dataset(dir);
  REQUIRE(r.train.size() == s.train.size());
  for (size_t i = 0; i < s.train.size(); ++i) {
    CHECK(r.train[i].sample_id == s.train[i].sample_id);
    CHECK(r.train[i].mask == s.train[i].mask);
    CHECK(r.train[i].image == s.train[i].image);  // 8-bit exact by contract
    CHECK(r.train[i].class_label == s.train[i].class_label);
  }
}

TEST_CASE("vertical layer ordering holds at every fluid-free column") {
  const PhantomConfig cfg = small_cfg();
  for (uint64_t seed = 0; seed < 12; ++seed) {
    const ImageSample d = generate_sample(cfg, ClassLabel::diseased, seed);
    for (int x = 0; x < d.width; ++x) {
      bool fluid = false;
      for (int y = 0; y < d.height; ++y)
        if (d.mask_at(y, x) == cfg.fluid_label()) fluid = true;
      if (fluid) continue;
      real prev = -1;
      for (int lab = 1; lab <= cfg.n_layers(); ++lab) {
        real sum = 0;
        int cnt = 0;
        for (int y = 0; y < d.height; ++y)
          if (d.mask_at(y, x) == lab) {
            sum += y;
            ++cnt;
          }
        if (!cnt) continue;
        CHECK(sum / cnt > prev);
        prev = sum / cnt;
      }
    }
  }
}
