#ifndef GEOGAN_TRANSFORMS_HPP
#define GEOGAN_TRANSFORMS_HPP

#include <array>

#include "geogan/nn.hpp"
#include "geogan/phantom.hpp"

namespace geogan {

// Bounds every proposed transform must satisfy; enforced by construction in
// the STN head (smooth squashing), checked explicitly in tests. Translation
// magnitude is the max-abs component in normalized coordinates.
struct AffineBounds {
  real det_min = 0.5, det_max = 2.0;
  real t_max = 0.25;
  real rot_max_rad = 0.35;
  real shear_max = 0.25;
};

// 2x3 affine in normalized [-1,1] image coordinates (align-corners), mapping
// *output* pixel coordinates to *source* coordinates (pull warping):
//   sx = a*xn + b*yn + tx,  sy = c*xn + d*yn + ty
// with row-major storage [a, b, tx, c, d, ty].
struct AffineTransform {
  std::array<real, 6> m{1, 0, 0, 0, 1, 0};

  static AffineTransform identity() { return {}; }

  real det() const { return m[0] * m[4] - m[1] * m[3]; }
  real tx() const { return m[2]; }
  real ty() const { return m[5]; }

  bool within(const AffineBounds& b, real slack = 1e-9) const;
};

struct ClassCondition {
  std::array<real, 2> onehot{1, 0};

  static ClassCondition from(ClassLabel c) {
    ClassCondition cc;
    cc.onehot = c == ClassLabel::normal ? std::array<real, 2>{1, 0}
                                        : std::array<real, 2>{0, 1};
    return cc;
  }
  int index() const { return onehot[1] > onehot[0] ? 1 : 0; }
  bool valid() const {
    return (onehot[0] == 1.0 && onehot[1] == 0.0) ||
           (onehot[0] == 0.0 && onehot[1] == 1.0);
  }
};

// --- plain (non-graph) warping ----------------------------------------------

// Bilinear image resample, zero outside the source.
std::vector<real> warp_image_bilinear(const std::vector<real>& img, int h,
                                      int w, const AffineTransform& t);
// Nearest-neighbor label resample, background (0) outside the source.
std::vector<uint8_t> warp_mask_nearest(const std::vector<uint8_t>& mask, int h,
                                       int w, const AffineTransform& t);

// Joint application; class label and provenance fields carried over.
ImageSample apply_affine(const ImageSample& s, const AffineTransform& t);

// --- classical augmentation baseline ----------------------------------------

struct DaConfig {
  real rot_max_deg = 15.0;
  real trans_frac = 0.10;  // fraction of image extent, per axis
  real scale_min = 0.9, scale_max = 1.1;
};

// Draw order is rotation, tx, ty, scale; fixed so parameter statistics are
// testable per stream.
AffineTransform sample_da_transform(const DaConfig& cfg, Rng& rng);

ImageSample classical_da(const ImageSample& s, const DaConfig& cfg,
                         uint64_t rng_seed);

// --- the spatial transformer network ----------------------------------------

struct StnConfig {
  int n_labels = 5;
  int height = 64, width = 64;
  int base_channels = 8;
  AffineBounds bounds;
};

// Conv encoder on the one-hot mask, class condition joined at the bottleneck,
// two dense layers onto six raw outputs squashed into a bounded affine. The
// final layer is zero-initialized so a fresh network proposes the identity.
class Stn {
 public:
  Stn(const StnConfig& cfg, uint64_t init_seed);

  // mask_onehot [N,n,H,W], cond [N,2] -> theta [N,6].
  NodeP propose(Graph& g, NodeP mask_onehot, NodeP cond) const;

  // Single-sample convenience used at generation time.
  AffineTransform propose_one(const ImageSample& s, ClassCondition cond) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const StnConfig& config() const { return cfg_; }

 private:
  StnConfig cfg_;
  ParamStore params_;
  std::vector<Conv> convs_;
  Dense fc1_, fc2_;
  int flat_dim_ = 0;
};

// --- sample/tensor bridging --------------------------------------------------

std::vector<real> one_hot(const std::vector<uint8_t>& mask, int n_labels);

NodeP batch_images(Graph& g, const std::vector<const ImageSample*>& xs);
NodeP batch_onehot_masks(Graph& g, const std::vector<const ImageSample*>& xs,
                         int n_labels);
NodeP batch_conditions(Graph& g, const std::vector<ClassCondition>& cs);
std::vector<int> batch_labels(const std::vector<const ImageSample*>& xs);

}  // namespace geogan

#endif  // GEOGAN_TRANSFORMS_HPP
