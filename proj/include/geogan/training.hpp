#ifndef GEOGAN_TRAINING_HPP
#define GEOGAN_TRAINING_HPP

#include "geogan/adversary.hpp"

namespace geogan {

struct GanTrainConfig {
  int steps = 200;
  int batch = 12;
  real lr = 1e-3;
  LossWeights weights;
  real elbo_weight = 1.0;
  real beta = 1.0;              // final KL weight
  real beta_warmup_frac = 0.1;  // linear warm-up over the first fraction of steps
  bool sampling = true;         // false: latent means everywhere (noSamp)
  int disc_base_channels = 8;
  // Mild jitter defining the "real" (mask, warped-mask) pair distribution the
  // discriminator sees; intentionally narrower than the classical-DA ranges.
  DaConfig real_pair_jitter{8.0, 0.08, 0.93, 1.08};
  int log_every = 10;
};

// Alternating 1:1 generator/discriminator updates with Adam on both sides.
// The generator objective is L_adv + l1*L_class + l2*L_shape plus the
// (negated) ELBO. One training step consumes one batch for both updates.
class GanTrainer {
 public:
  GanTrainer(GeneratorBundle& bundle, RelationNet& relation,
             const GanTrainConfig& cfg, uint64_t seed);

  // Trains in place; appends one JSONL record per log_every steps when
  // log_path is non-empty. Returns the final step's losses.
  LossBundle train(const std::vector<const ImageSample*>& train_set,
                   const std::string& log_path = "");

  // Single optimization step on an explicit batch; exposed for tests.
  LossBundle step(const std::vector<const ImageSample*>& batch);

  Discriminator& discriminator() { return disc_; }
  ClassNet& class_net() { return cls_; }

 private:
  GeneratorBundle& bundle_;
  RelationNet& relation_;
  GanTrainConfig cfg_;
  Discriminator disc_;
  ClassNet cls_;
  Adam opt_g_, opt_d_;
  Rng shuffle_rng_, sample_rng_, jitter_rng_;
  int step_index_ = 0;
  real last_d_loss_ = 0;

  real beta_at(int step) const;

  friend struct GanStepAccess;
};

// Builds the generator-side loss graph for an explicit batch with externally
// fixed noise, without touching optimizer or RNG state. Used by the
// finite-difference gradient checks; mirrors GanTrainer::step exactly.
struct GanLossGraph {
  Graph graph;
  NodeP total;       // L_adv + l1*L_class + l2*L_shape (no ELBO term)
  NodeP neg_elbo;    // CE + beta * sum KL
  NodeP adv, cls, shape;
  std::vector<NodeP> kls;
  NodeP soft_mask;   // generated soft mask [N,n,H,W]
  bool shape_all_skipped = false;
};

struct FixedNoise {
  // Per-level epsilon draws for the posterior chain, coarsest first.
  std::vector<std::vector<real>> posterior_eps;
};

FixedNoise draw_fixed_noise(const GeneratorBundle& b, int batch, uint64_t seed);

// graph_out must outlive any backward() call.
std::unique_ptr<GanLossGraph> build_generator_loss(
    GeneratorBundle& b, RelationNet& relation, Discriminator& disc,
    ClassNet& cls, const GanTrainConfig& cfg,
    const std::vector<const ImageSample*>& batch, const FixedNoise& noise,
    real beta);

}  // namespace geogan

#endif  // GEOGAN_TRAINING_HPP
