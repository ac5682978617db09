#ifndef GEOGAN_ADVERSARY_HPP
#define GEOGAN_ADVERSARY_HPP

#include "geogan/genmodel.hpp"

namespace geogan {

struct LossWeights {
  real lambda1 = 0.9;   // classification term
  real lambda2 = 0.95;  // shape term
};

void validate_weights(const LossWeights& w);

// One logged training step's generator-side losses. The linear combination
// total = adv + lambda1*cls + lambda2*shape holds to 1e-6 on every step.
struct LossBundle {
  real total = 0;
  real adv = 0, cls = 0, shape = 0;
  real elbo = 0;
  std::vector<real> kl_per_level;
  bool shape_all_skipped = false;
};

LossBundle total_generator_loss(real adv, real cls, real shape, real elbo_value,
                                const std::vector<real>& kl_per_level,
                                const LossWeights& w,
                                bool shape_all_skipped = false);

// Realism discriminator on channel-concatenated (base mask, derived mask)
// pairs [N, 2n, H, W].
class Discriminator {
 public:
  Discriminator(int n_labels, int height, int width, int base_channels,
                uint64_t init_seed);

  NodeP logits(Graph& g, NodeP pair) const;  // [N,1]

  ParamStore& params() { return params_; }
  int pair_channels() const { return 2 * n_labels_; }

 private:
  int n_labels_, height_, width_;
  std::vector<Conv> convs_;
  Dense fc_;
  ParamStore params_;
};

// Auxiliary class head: predicts the disease class from the generated image
// alone, per the classification objective.
class ClassNet {
 public:
  ClassNet(int height, int width, int base_channels, uint64_t init_seed);

  NodeP logits(Graph& g, NodeP images) const;  // [N,2]

  ParamStore& params() { return params_; }

 private:
  std::vector<Conv> convs_;
  Dense fc1_, fc2_;
  ParamStore params_;
};

// Pairwise shape-relation classifier: given two single-label foreground maps
// stacked as 2 channels, predicts the label of the first map. A reduced
// VGG-style stack of 4 conv blocks sized for 64x64 inputs.
class RelationNet {
 public:
  RelationNet(int n_labels, int height, int width, uint64_t init_seed);

  NodeP logits(Graph& g, NodeP pair_maps) const;  // [P, n_labels]

  bool ready() const { return ready_; }
  void freeze() { ready_ = true; }

  int n_labels() const { return n_labels_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void save(const std::string& path, const std::string& report_json) const;
  static RelationNet load(const std::string& path, std::string* report_json = nullptr);

 private:
  int n_labels_, height_, width_;
  std::vector<Conv> convs_;
  Dense fc1_, fc2_;
  ParamStore params_;
  bool ready_ = false;
};

// --- in-graph loss builders ---------------------------------------------------

// Non-saturating GAN losses. The discriminator input pairs must already be
// assembled; fake pairs fed to the D loss are detached by the caller.
NodeP adv_loss_d(Graph& g, const Discriminator& d, NodeP real_pair,
                 NodeP fake_pair);
NodeP adv_loss_g(Graph& g, const Discriminator& d, NodeP fake_pair);

NodeP class_loss(Graph& g, const ClassNet& c, NodeP images,
                 const std::vector<int>& class_targets);

struct ShapeLossOut {
  NodeP loss;         // scalar; zero node when every pair was skipped
  int pairs_used = 0;
  bool all_skipped = false;
};

// Mean over ordered label pairs (i != j) of -log P(first map carries label i),
// per sample, averaged over the batch. Pairs where either map's foreground
// mass is below mass_threshold pixels are skipped and the per-sample
// normalizer reduced accordingly.
ShapeLossOut shape_loss(Graph& g, const RelationNet& r, NodeP soft_mask,
                        real mass_threshold = 0.5);

// Plain single-pair probability P(label_i | map_i, map_j).
real shape_pair_prob(const RelationNet& r, const std::vector<real>& map_i,
                     const std::vector<real>& map_j, int h, int w, int label_i);

// --- relation-net pretraining ---------------------------------------------------

struct RelationPretrainConfig {
  int steps = 400;
  int batch = 24;
  real lr = 1e-3;
  real holdout_fraction = 0.2;
};

struct RelationPretrainReport {
  real holdout_accuracy = 0;
  int train_pairs = 0, holdout_pairs = 0;
  std::vector<int> excluded_labels;  // absent from every mask
  int steps = 0;

  std::string to_json() const;
};

// Trains on all ordered label pairs of the given real masks (both labels
// present), held out by mask. Freezes the network afterwards.
RelationPretrainReport pretrain_relation_net(
    RelationNet& net, const std::vector<const ImageSample*>& masks,
    const RelationPretrainConfig& cfg, uint64_t seed);

}  // namespace geogan

#endif  // GEOGAN_ADVERSARY_HPP
