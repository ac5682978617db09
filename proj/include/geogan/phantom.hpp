#ifndef GEOGAN_PHANTOM_HPP
#define GEOGAN_PHANTOM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "geogan/core.hpp"

namespace geogan {

enum class ClassLabel { normal = 0, diseased = 1 };

const char* class_name(ClassLabel c);
ClassLabel class_from_name(const std::string& s);

// One labeled image: grayscale intensities in [0,1] (already quantized to
// 8-bit steps so disk round-trips are exact) plus an integer label mask.
struct ImageSample {
  int height = 0, width = 0;
  std::vector<real> image;     // h*w
  std::vector<uint8_t> mask;   // h*w, values < n_labels
  ClassLabel class_label = ClassLabel::normal;
  std::string sample_id;
  uint64_t seed = 0;

  real img_at(int y, int x) const { return image[static_cast<size_t>(y) * width + x]; }
  uint8_t mask_at(int y, int x) const { return mask[static_cast<size_t>(y) * width + x]; }
};

// Layered-tissue phantom: wavy ordered bands over a dark background, with
// elliptical fluid pockets that locally push the band boundaries apart in
// the diseased class. Label layout: 0 = background, 1..n_labels-2 = layers
// top to bottom, n_labels-1 = fluid.
struct PhantomConfig {
  int height = 64, width = 64;
  int n_labels = 5;

  // Band geometry (fractions of image height).
  real band_top_frac = 0.22;
  real band_bottom_frac = 0.82;
  real base_jitter_frac = 0.02;
  real wave_amp_min = 1.0, wave_amp_max = 3.0;      // pixels
  real wave_freq_min = 0.5, wave_freq_max = 2.0;    // cycles per width
  real harmonic_amp_max = 1.0;                      // pixels

  // Fluid pockets (areas in pixels^2).
  int fluid_count_min = 1, fluid_count_max = 3;
  real fluid_area_min = 30.0, fluid_area_max = 120.0;
  real fluid_aspect_min = 1.4, fluid_aspect_max = 2.6;
  int min_fluid_region_area = 20;

  // Appearance, one entry per label.
  std::vector<real> intensity_means{0.06, 0.42, 0.68, 0.38, 0.14};
  std::vector<real> noise_sigma{0.03, 0.09, 0.09, 0.09, 0.05};
  real illumination_amp = 0.05;

  std::vector<real> split_fractions{0.6, 0.2, 0.2};  // train, val, test

  int n_layers() const { return n_labels - 2; }
  int fluid_label() const { return n_labels - 1; }
};

// Throws on inconsistent configs, including fluid area ranges that cannot
// fit inside the band geometry.
void validate_config(const PhantomConfig& cfg);

// Deterministic in (cfg, label, seed). The diseased sample with a given seed
// shares its base band geometry with the normal sample of the same seed.
ImageSample generate_sample(const PhantomConfig& cfg, ClassLabel label,
                            uint64_t seed);

struct DatasetSplits {
  std::vector<ImageSample> train, val, test;

  const std::vector<ImageSample>& split(const std::string& name) const;
};

// Balanced three-way split per the configured fractions; per-sample seeds are
// mix_seed(master_seed, "sample", index) so both classes of one index share
// geometry and generation can run in any order.
DatasetSplits generate_dataset(const PhantomConfig& cfg, int n_per_class,
                               uint64_t master_seed);

// Directory layout: {split}/{sample_id}.img.png + {sample_id}.mask.png, with
// manifest.jsonl (sample_id, class, split, seed) and dataset.json (config).
void save_dataset(const std::string& dir, const DatasetSplits& splits,
                  const PhantomConfig& cfg, int n_per_class,
                  uint64_t master_seed);
DatasetSplits load_dataset(const std::string& dir, PhantomConfig* cfg_out = nullptr);

// Invariant check used by tests and the pipeline's split hygiene asserts.
// Returns false and fills `why` on the first violated invariant.
bool check_sample_invariants(const ImageSample& s, const PhantomConfig& cfg,
                             std::string* why);

// 4-connected regions of a given label; returns areas of each region.
std::vector<int> connected_region_areas(const std::vector<uint8_t>& mask,
                                        int h, int w, uint8_t label);

}  // namespace geogan

#endif  // GEOGAN_PHANTOM_HPP
