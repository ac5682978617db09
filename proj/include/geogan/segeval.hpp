#ifndef GEOGAN_SEGEVAL_HPP
#define GEOGAN_SEGEVAL_HPP

#include <optional>

#include "geogan/phantom.hpp"
#include "geogan/nn.hpp"

namespace geogan {

// --- metrics -----------------------------------------------------------------

// Dice overlap for one label: 2|A∩B| / (|A|+|B|); 1 when both sets are empty,
// 0 when exactly one is.
real dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
          uint8_t label);

struct Spacing {
  real sy = 1.0, sx = 1.0;  // physical units per pixel; defaults to pixels
};

// Symmetric Hausdorff distance between the 8-connectivity boundaries of the
// two label sets, Euclidean metric scaled by spacing. Computed with an exact
// anisotropic distance transform. Empty on either side -> nullopt (reported
// as missing, never silently zero).
std::optional<real> hausdorff(const std::vector<uint8_t>& pred,
                              const std::vector<uint8_t>& truth, int h, int w,
                              uint8_t label, Spacing spacing = {});

// Boundary pixels of a label set: set pixels with an 8-neighbor outside the
// set (frame border counts as outside). Exposed for the metric tests.
std::vector<std::pair<int, int>> boundary_pixels(const std::vector<uint8_t>& mask,
                                                 int h, int w, uint8_t label);

// --- segmentation network ------------------------------------------------------

struct SegConfig {
  int n_labels = 5;
  int height = 64, width = 64;
  int base_channels = 8;
  int steps = 300;
  int batch = 12;
  real lr = 1e-3;
  int eval_every = 50;  // best-validation-Dice checkpointing interval
};

// Plain 4-down/4-up U-shape with batch normalization.
class SegUNet {
 public:
  SegUNet(const SegConfig& cfg, uint64_t init_seed);

  NodeP logits(Graph& g, NodeP images, bool training) const;

  std::vector<uint8_t> predict(const ImageSample& s) const;
  std::vector<std::vector<uint8_t>> predict_batch(
      const std::vector<const ImageSample*>& xs) const;

  const SegConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }

  void save(const std::string& path, const std::string& meta_extra = "{}") const;
  static SegUNet load(const std::string& path);

 private:
  SegConfig cfg_;
  ParamStore params_;
  std::vector<Conv> enc_;
  std::vector<BatchNorm> enc_bn_;
  std::vector<Conv> dec_;
  std::vector<BatchNorm> dec_bn_;
  Conv head_;
};

struct SegTrainReport {
  real final_train_ce = 0;
  real best_val_dice = -1;
  int steps = 0;
};

// Trains with per-pixel cross entropy (Adam, the configured lr/batch), keeps
// the weights with the best validation Dice when a validation set is given.
// Deterministic per seed. Throws on an empty training set.
SegTrainReport train_segmenter(SegUNet& net,
                               const std::vector<const ImageSample*>& train_set,
                               const std::vector<const ImageSample*>& val_set,
                               uint64_t seed);

// Mean over foreground labels of per-label Dice, averaged over samples; the
// selection metric for checkpointing and the headline layer score.
real mean_foreground_dice(const SegUNet& net,
                          const std::vector<const ImageSample*>& xs);

// --- evaluation ------------------------------------------------------------------

struct SampleMetrics {
  std::string sample_id;
  ClassLabel class_label = ClassLabel::normal;
  std::vector<real> dice_per_label;     // indexed by label
  real fluid_dice = 0;                  // meaningful when truth has fluid
  bool truth_has_fluid = false;
  std::optional<real> fluid_hd;         // missing when either boundary empty
};

struct MetricsReport {
  std::vector<SampleMetrics> rows;
  int n_labels = 0;

  std::vector<real> dice_mean_per_label, dice_std_per_label;  // all samples
  real fluid_dice_mean = 0, fluid_dice_std = 0;  // diseased-truth samples
  int fluid_samples = 0;
  real fluid_hd_mean = 0, fluid_hd_std = 0;
  int fluid_hd_defined = 0, fluid_hd_missing = 0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

MetricsReport evaluate(const SegUNet& net,
                       const std::vector<const ImageSample*>& test_set,
                       Spacing spacing = {});

// Aggregation from precomputed rows; exposed so tests can drive it directly.
MetricsReport aggregate_metrics(std::vector<SampleMetrics> rows, int n_labels);

}  // namespace geogan

#endif  // GEOGAN_SEGEVAL_HPP
