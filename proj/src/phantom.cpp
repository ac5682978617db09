#include "geogan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "geogan/io.hpp"
#include "json.hpp"

namespace geogan {

using nlohmann::json;

const char* class_name(ClassLabel c) {
  return c == ClassLabel::normal ? "normal" : "diseased";
}

ClassLabel class_from_name(const std::string& s) {
  if (s == "normal") return ClassLabel::normal;
  if (s == "diseased") return ClassLabel::diseased;
  throw Error("unknown class label: " + s);
}

namespace {

constexpr real kPi = 3.14159265358979323846;

struct FluidPocket {
  real cx, cy, a, b;  // center and semi-axes, pixels
};

real max_semi_height(const PhantomConfig& cfg) {
  return std::sqrt(cfg.fluid_area_max / (kPi * cfg.fluid_aspect_min));
}

// Per-boundary sinusoid parameters; drawn from the geometry stream only so a
// (normal, diseased) pair with equal seeds shares them exactly.
struct BoundaryWave {
  real base, amp, freq, phase, amp2, freq2, phase2;

  real at(real x, int width) const {
    return base + amp * std::sin(2 * kPi * freq * x / width + phase) +
           amp2 * std::sin(2 * kPi * freq2 * x / width + phase2);
  }
};

std::vector<BoundaryWave> draw_boundaries(const PhantomConfig& cfg, Rng& geom) {
  const int nb = cfg.n_layers() + 1;
  const real top = cfg.band_top_frac * cfg.height;
  const real spacing =
      (cfg.band_bottom_frac - cfg.band_top_frac) * cfg.height / cfg.n_layers();
  std::vector<BoundaryWave> bs(nb);
  for (int k = 0; k < nb; ++k) {
    BoundaryWave& b = bs[k];
    b.base = top + spacing * k +
             geom.uniform(-cfg.base_jitter_frac, cfg.base_jitter_frac) * cfg.height;
    b.amp = geom.uniform(cfg.wave_amp_min, cfg.wave_amp_max);
    b.freq = geom.uniform(cfg.wave_freq_min, cfg.wave_freq_max);
    b.phase = geom.uniform(0.0, 2 * kPi);
    b.amp2 = geom.uniform(0.0, cfg.harmonic_amp_max);
    b.freq2 = geom.uniform(2.0, 4.0);
    b.phase2 = geom.uniform(0.0, 2 * kPi);
  }
  return bs;
}

std::vector<FluidPocket> draw_pockets(const PhantomConfig& cfg,
                                      const std::vector<BoundaryWave>& bs,
                                      Rng& fluid) {
  const int count = fluid.uniform_int(cfg.fluid_count_min, cfg.fluid_count_max);
  const int nb = static_cast<int>(bs.size());
  std::vector<FluidPocket> pockets;
  for (int p = 0; p < count; ++p) {
    const real area = fluid.uniform(cfg.fluid_area_min, cfg.fluid_area_max);
    const real aspect = fluid.uniform(cfg.fluid_aspect_min, cfg.fluid_aspect_max);
    const real b_semi = std::sqrt(area / (kPi * aspect));
    const real a_semi = aspect * b_semi;

    // The middle layer is the preferred host; fall back to anywhere in the
    // band when the local geometry is too thin.
    const int mid = (nb - 1) / 2;
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      const int margin = static_cast<int>(std::ceil(a_semi)) + 1;
      if (2 * margin >= cfg.width) break;
      const real cx = fluid.uniform_int(margin, cfg.width - 1 - margin);
      real lo = bs[mid].at(cx, cfg.width) + b_semi + 2.0;
      real hi = bs[mid + 1 < nb ? mid + 1 : mid].at(cx, cfg.width) - b_semi - 2.0;
      if (hi <= lo) {  // widen to the whole tissue band
        lo = bs[0].at(cx, cfg.width) + b_semi + 2.0;
        hi = bs[nb - 1].at(cx, cfg.width) - b_semi - 2.0;
      }
      if (hi <= lo) continue;
      const real cy = fluid.uniform(lo, hi);
      // Column-exact containment inside the undisplaced outer band.
      bool fits = true;
      const int x0 = std::max(0, static_cast<int>(std::floor(cx - a_semi)));
      const int x1 = std::min(cfg.width - 1, static_cast<int>(std::ceil(cx + a_semi)));
      for (int x = x0; x <= x1 && fits; ++x) {
        const real dx = (x - cx) / a_semi;
        if (std::abs(dx) >= 1.0) continue;
        const real eh = b_semi * std::sqrt(1.0 - dx * dx);
        if (cy - eh <= bs[0].at(x, cfg.width) + 1.0 ||
            cy + eh >= bs[nb - 1].at(x, cfg.width) - 1.0)
          fits = false;
      }
      if (fits) {
        pockets.push_back({cx, cy, a_semi, b_semi});
        placed = true;
      }
    }
    if (!placed && pockets.empty() && p == count - 1) {
      // Guaranteed fallback: smallest pocket at the thickest column. The
      // config validation ensures this always fits.
      const real bmin = std::sqrt(cfg.fluid_area_min / (kPi * cfg.fluid_aspect_min));
      const real amin = cfg.fluid_aspect_min * bmin;
      int best_x = cfg.width / 2;
      real best_th = -1;
      const int margin = static_cast<int>(std::ceil(amin)) + 1;
      for (int x = margin; x < cfg.width - margin; ++x) {
        const real th = bs[nb - 1].at(x, cfg.width) - bs[0].at(x, cfg.width);
        if (th > best_th) {
          best_th = th;
          best_x = x;
        }
      }
      const real cy = 0.5 * (bs[0].at(best_x, cfg.width) + bs[nb - 1].at(best_x, cfg.width));
      pockets.push_back({static_cast<real>(best_x), cy, amin, bmin});
    }
  }
  return pockets;
}

}  // namespace

void validate_config(const PhantomConfig& cfg) {
  GEOGAN_CHECK(cfg.n_labels >= 3, "phantom: n_labels must be >= 3");
  GEOGAN_CHECK(cfg.height >= 16 && cfg.width >= 16, "phantom: image too small");
  GEOGAN_CHECK(static_cast<int>(cfg.intensity_means.size()) == cfg.n_labels,
               "phantom: intensity_means must have n_labels entries");
  GEOGAN_CHECK(static_cast<int>(cfg.noise_sigma.size()) == cfg.n_labels,
               "phantom: noise_sigma must have n_labels entries");
  GEOGAN_CHECK(cfg.split_fractions.size() == 3, "phantom: need 3 split fractions");
  real fsum = 0;
  for (real f : cfg.split_fractions) {
    GEOGAN_CHECK(f >= 0, "phantom: split fractions must be non-negative");
    fsum += f;
  }
  GEOGAN_CHECK(std::abs(fsum - 1.0) < 1e-9, "phantom: split fractions must sum to 1");
  GEOGAN_CHECK(cfg.fluid_count_min >= 1 && cfg.fluid_count_max >= cfg.fluid_count_min,
               "phantom: bad fluid count range");
  GEOGAN_CHECK(cfg.fluid_area_min > 0 && cfg.fluid_area_max >= cfg.fluid_area_min,
               "phantom: bad fluid area range");
  GEOGAN_CHECK(cfg.band_top_frac > 0 && cfg.band_bottom_frac < 1 &&
                   cfg.band_top_frac < cfg.band_bottom_frac,
               "phantom: bad band fractions");

  const real spacing =
      (cfg.band_bottom_frac - cfg.band_top_frac) * cfg.height / cfg.n_layers();
  const real swing = cfg.wave_amp_max + cfg.harmonic_amp_max +
                     cfg.base_jitter_frac * cfg.height;
  GEOGAN_CHECK(spacing - 2 * swing >= 1.0,
               "phantom: wave amplitudes too large for layer spacing");

  // The largest pocket must fit inside the thinnest possible tissue band.
  const real band_min =
      (cfg.band_bottom_frac - cfg.band_top_frac) * cfg.height - 2 * swing;
  const real need = 2 * max_semi_height(cfg) + 4.0;
  GEOGAN_CHECK(need <= band_min,
               "phantom: fluid area range cannot fit inside layer geometry");
  const real a_max = cfg.fluid_aspect_max *
                     std::sqrt(cfg.fluid_area_max / (kPi * cfg.fluid_aspect_max));
  GEOGAN_CHECK(2 * (a_max + 2) < cfg.width,
               "phantom: fluid pockets wider than the image");
}

ImageSample generate_sample(const PhantomConfig& cfg, ClassLabel label,
                            uint64_t seed) {
  validate_config(cfg);
  const int H = cfg.height, W = cfg.width;
  const int nb = cfg.n_layers() + 1;

  Rng geom(mix_seed(seed, tag("geom")));
  Rng fluid_rng(mix_seed(seed, tag("fluid")));
  Rng noise(mix_seed(seed, tag("noise")));

  const auto bs = draw_boundaries(cfg, geom);

  std::vector<FluidPocket> pockets;
  if (label == ClassLabel::diseased) pockets = draw_pockets(cfg, bs, fluid_rng);

  // Boundary rows per column, displaced away from each pocket center.
  std::vector<real> brow(static_cast<size_t>(nb) * W);
  for (int k = 0; k < nb; ++k) {
    for (int x = 0; x < W; ++x) {
      real y = bs[k].at(x, W);
      for (const auto& p : pockets) {
        const real dx = (x - p.cx) / (p.a + 2.0);
        if (std::abs(dx) >= 1.0) continue;
        const real bump = p.b * std::sqrt(1.0 - dx * dx);
        const real dist = std::abs(bs[k].at(p.cx, W) - p.cy);
        const real mag = 0.6 * bump * std::exp(-dist / (0.15 * H));
        y += (bs[k].at(p.cx, W) < p.cy) ? -mag : mag;
      }
      brow[static_cast<size_t>(k) * W + x] = y;
    }
  }
  // Keep boundaries ordered and inside the frame.
  for (int x = 0; x < W; ++x) {
    real prev = 1.0;
    for (int k = 0; k < nb; ++k) {
      real& y = brow[static_cast<size_t>(k) * W + x];
      y = std::clamp(y, prev + 1.0, static_cast<real>(H - 2 - (nb - 1 - k)));
      prev = y;
    }
  }

  ImageSample s;
  s.height = H;
  s.width = W;
  s.class_label = label;
  s.seed = seed;
  s.mask.assign(static_cast<size_t>(H) * W, 0);
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) {
      uint8_t lab = 0;
      for (int k = 0; k < nb - 1; ++k) {
        if (y >= brow[static_cast<size_t>(k) * W + x] &&
            y < brow[static_cast<size_t>(k + 1) * W + x]) {
          lab = static_cast<uint8_t>(k + 1);
          break;
        }
      }
      s.mask[static_cast<size_t>(y) * W + x] = lab;
    }
  }
  const uint8_t fl = static_cast<uint8_t>(cfg.fluid_label());
  for (const auto& p : pockets) {
    const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - p.a)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(p.cx + p.a)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - p.b)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(p.cy + p.b)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const real dx = (x - p.cx) / p.a, dy = (y - p.cy) / p.b;
        if (dx * dx + dy * dy <= 1.0 &&
            s.mask[static_cast<size_t>(y) * W + x] != 0)
          s.mask[static_cast<size_t>(y) * W + x] = fl;
      }
  }

  // Appearance: per-label means, light blur, lateral illumination, speckle.
  const real illum_phase = noise.uniform(0.0, 2 * kPi);
  std::vector<real> base(static_cast<size_t>(H) * W);
  for (size_t i = 0; i < base.size(); ++i)
    base[i] = cfg.intensity_means[s.mask[i]];
  std::vector<real> blurred(base.size());
  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      real acc = 0;
      static const real k3[3] = {0.25, 0.5, 0.25};
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = clampi(y + dy, 0, H - 1), xx = clampi(x + dx, 0, W - 1);
          acc += k3[dy + 1] * k3[dx + 1] * base[static_cast<size_t>(yy) * W + xx];
        }
      blurred[static_cast<size_t>(y) * W + x] = acc;
    }
  s.image.resize(base.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const size_t i = static_cast<size_t>(y) * W + x;
      real v = blurred[i] *
               (1.0 + cfg.illumination_amp * std::sin(2 * kPi * x / W + illum_phase));
      v += cfg.noise_sigma[s.mask[i]] * noise.normal();
      v = std::clamp(v, 0.0, 1.0);
      s.image[i] = std::round(v * 255.0) / 255.0;  // 8-bit exact
    }
  return s;
}

const std::vector<ImageSample>& DatasetSplits::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw Error("unknown split: " + name);
}

DatasetSplits generate_dataset(const PhantomConfig& cfg, int n_per_class,
                               uint64_t master_seed) {
  GEOGAN_CHECK(n_per_class >= 5, "phantom: n_per_class must be >= 5");
  validate_config(cfg);

  const int n_tr = static_cast<int>(std::lround(n_per_class * cfg.split_fractions[0]));
  const int n_va = static_cast<int>(std::lround(n_per_class * cfg.split_fractions[1]));
  const int n_te = n_per_class - n_tr - n_va;
  GEOGAN_CHECK(n_tr > 0 && n_va > 0 && n_te > 0,
               "phantom: split fractions leave an empty split");

  DatasetSplits out;
  for (ClassLabel cls : {ClassLabel::normal, ClassLabel::diseased}) {
    std::vector<int> idx(n_per_class);
    for (int i = 0; i < n_per_class; ++i) idx[i] = i;
    Rng shuffler(mix_seed(master_seed, tag("split"), static_cast<uint64_t>(cls)));
    shuffler.shuffle(idx);
    for (int i = 0; i < n_per_class; ++i) {
      const int k = idx[i];
      ImageSample s =
          generate_sample(cfg, cls, mix_seed(master_seed, tag("sample"),
                                             static_cast<uint64_t>(k)));
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%04d", class_name(cls), k);
      s.sample_id = buf;
      if (i < n_tr)
        out.train.push_back(std::move(s));
      else if (i < n_tr + n_va)
        out.val.push_back(std::move(s));
      else
        out.test.push_back(std::move(s));
    }
  }
  auto by_id = [](const ImageSample& a, const ImageSample& b) {
    return a.sample_id < b.sample_id;
  };
  std::sort(out.train.begin(), out.train.end(), by_id);
  std::sort(out.val.begin(), out.val.end(), by_id);
  std::sort(out.test.begin(), out.test.end(), by_id);
  return out;
}

namespace {

json config_to_json(const PhantomConfig& c) {
  return json{{"height", c.height},
              {"width", c.width},
              {"n_labels", c.n_labels},
              {"band_top_frac", c.band_top_frac},
              {"band_bottom_frac", c.band_bottom_frac},
              {"base_jitter_frac", c.base_jitter_frac},
              {"wave_amp_min", c.wave_amp_min},
              {"wave_amp_max", c.wave_amp_max},
              {"wave_freq_min", c.wave_freq_min},
              {"wave_freq_max", c.wave_freq_max},
              {"harmonic_amp_max", c.harmonic_amp_max},
              {"fluid_count_min", c.fluid_count_min},
              {"fluid_count_max", c.fluid_count_max},
              {"fluid_area_min", c.fluid_area_min},
              {"fluid_area_max", c.fluid_area_max},
              {"fluid_aspect_min", c.fluid_aspect_min},
              {"fluid_aspect_max", c.fluid_aspect_max},
              {"min_fluid_region_area", c.min_fluid_region_area},
              {"intensity_means", c.intensity_means},
              {"noise_sigma", c.noise_sigma},
              {"illumination_amp", c.illumination_amp},
              {"split_fractions", c.split_fractions}};
}

PhantomConfig config_from_json(const json& j) {
  PhantomConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.n_labels = j.value("n_labels", c.n_labels);
  c.band_top_frac = j.value("band_top_frac", c.band_top_frac);
  c.band_bottom_frac = j.value("band_bottom_frac", c.band_bottom_frac);
  c.base_jitter_frac = j.value("base_jitter_frac", c.base_jitter_frac);
  c.wave_amp_min = j.value("wave_amp_min", c.wave_amp_min);
  c.wave_amp_max = j.value("wave_amp_max", c.wave_amp_max);
  c.wave_freq_min = j.value("wave_freq_min", c.wave_freq_min);
  c.wave_freq_max = j.value("wave_freq_max", c.wave_freq_max);
  c.harmonic_amp_max = j.value("harmonic_amp_max", c.harmonic_amp_max);
  c.fluid_count_min = j.value("fluid_count_min", c.fluid_count_min);
  c.fluid_count_max = j.value("fluid_count_max", c.fluid_count_max);
  c.fluid_area_min = j.value("fluid_area_min", c.fluid_area_min);
  c.fluid_area_max = j.value("fluid_area_max", c.fluid_area_max);
  c.fluid_aspect_min = j.value("fluid_aspect_min", c.fluid_aspect_min);
  c.fluid_aspect_max = j.value("fluid_aspect_max", c.fluid_aspect_max);
  c.min_fluid_region_area = j.value("min_fluid_region_area", c.min_fluid_region_area);
  if (j.contains("intensity_means"))
    c.intensity_means = j["intensity_means"].get<std::vector<real>>();
  if (j.contains("noise_sigma"))
    c.noise_sigma = j["noise_sigma"].get<std::vector<real>>();
  c.illumination_amp = j.value("illumination_amp", c.illumination_amp);
  if (j.contains("split_fractions"))
    c.split_fractions = j["split_fractions"].get<std::vector<real>>();
  return c;
}

}  // namespace

void save_dataset(const std::string& dir, const DatasetSplits& splits,
                  const PhantomConfig& cfg, int n_per_class,
                  uint64_t master_seed) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (const std::string split : {"train", "val", "test"}) {
    for (const ImageSample& s : splits.split(split)) {
      GrayImage8 img{s.height, s.width, {}};
      img.px.resize(s.image.size());
      for (size_t i = 0; i < s.image.size(); ++i)
        img.px[i] = static_cast<uint8_t>(std::lround(s.image[i] * 255.0));
      write_png_gray8(dir + "/" + split + "/" + s.sample_id + ".img.png", img);
      GrayImage8 msk{s.height, s.width, std::vector<uint8_t>(s.mask.begin(), s.mask.end())};
      write_png_gray8(dir + "/" + split + "/" + s.sample_id + ".mask.png", msk);
      json rec{{"sample_id", s.sample_id},
               {"class", class_name(s.class_label)},
               {"split", split},
               {"seed", s.seed}};
      manifest += rec.dump() + "\n";
    }
  }
  write_text_file(dir + "/manifest.jsonl", manifest);
  json meta{{"config", config_to_json(cfg)},
            {"n_per_class", n_per_class},
            {"master_seed", master_seed}};
  write_text_file(dir + "/dataset.json", meta.dump(2) + "\n");
}

DatasetSplits load_dataset(const std::string& dir, PhantomConfig* cfg_out) {
  const json meta = json::parse(read_text_file(dir + "/dataset.json"));
  const PhantomConfig cfg = config_from_json(meta["config"]);
  if (cfg_out) *cfg_out = cfg;
  DatasetSplits out;
  for (const std::string& line : read_lines(dir + "/manifest.jsonl")) {
    const json rec = json::parse(line);
    ImageSample s;
    s.sample_id = rec["sample_id"].get<std::string>();
    s.class_label = class_from_name(rec["class"].get<std::string>());
    s.seed = rec["seed"].get<uint64_t>();
    const std::string split = rec["split"].get<std::string>();
    const std::string base = dir + "/" + split + "/" + s.sample_id;
    GrayImage8 img = read_png_gray8(base + ".img.png");
    GrayImage8 msk = read_png_gray8(base + ".mask.png");
    GEOGAN_CHECK(img.h == msk.h && img.w == msk.w, "dataset: image/mask size mismatch");
    s.height = img.h;
    s.width = img.w;
    s.image.resize(img.px.size());
    for (size_t i = 0; i < img.px.size(); ++i) s.image[i] = img.px[i] / 255.0;
    s.mask.assign(msk.px.begin(), msk.px.end());
    auto& dst = split == "train" ? out.train : (split == "val" ? out.val : out.test);
    dst.push_back(std::move(s));
  }
  return out;
}

bool check_sample_invariants(const ImageSample& s, const PhantomConfig& cfg,
                             std::string* why) {
  auto fail = [&](const std::string& m) {
    if (why) *why = m + " (" + s.sample_id + ")";
    return false;
  };
  if (s.height != cfg.height || s.width != cfg.width ||
      s.image.size() != s.mask.size())
    return fail("image/mask dimensions inconsistent");
  for (uint8_t m : s.mask)
    if (m >= cfg.n_labels) return fail("mask label out of range");

  const uint8_t fl = static_cast<uint8_t>(cfg.fluid_label());
  const auto areas = connected_region_areas(s.mask, s.height, s.width, fl);
  if (s.class_label == ClassLabel::normal) {
    if (!areas.empty()) return fail("normal sample contains fluid");
  } else {
    if (areas.empty()) return fail("diseased sample has no fluid");
    for (int a : areas)
      if (a < cfg.min_fluid_region_area) return fail("fluid region below minimum area");
  }

  // Vertical ordering of layer labels, per column, skipping columns that
  // contain fluid.
  for (int x = 0; x < s.width; ++x) {
    bool has_fluid = false;
    for (int y = 0; y < s.height; ++y)
      if (s.mask_at(y, x) == fl) has_fluid = true;
    if (has_fluid) continue;
    real prev_mean = -1;
    for (int lab = 1; lab < cfg.n_labels - 1; ++lab) {
      real sum = 0;
      int cnt = 0;
      for (int y = 0; y < s.height; ++y)
        if (s.mask_at(y, x) == lab) {
          sum += y;
          ++cnt;
        }
      if (cnt == 0) continue;
      const real mean = sum / cnt;
      if (mean <= prev_mean) return fail("layer ordering violated in a fluid-free column");
      prev_mean = mean;
    }
  }
  return true;
}

std::vector<int> connected_region_areas(const std::vector<uint8_t>& mask,
                                        int h, int w, uint8_t label) {
  std::vector<int> areas;
  std::vector<uint8_t> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (mask[start] != label || seen[start]) continue;
    int area = 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++area;
      const int y = p / w, x = p % w;
      const int ns[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : ns) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int q = n[0] * w + n[1];
        if (mask[q] == label && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
    areas.push_back(area);
  }
  return areas;
}

}  // namespace geogan
