#ifndef GEOGAN_GENMODEL_HPP
#define GEOGAN_GENMODEL_HPP

#include <memory>
#include <optional>

#include "geogan/transforms.hpp"

namespace geogan {

struct GeneratorConfig {
  int resolution_levels = 6;
  int latent_levels = 4;  // L
  int base_channels = 8;
  int latent_channels = 2;
  int n_labels = 5;
  int height = 64, width = 64;
  real kl_weight = 1.0;  // beta
  real sigma_floor = 1e-4;
};

void validate_config(const GeneratorConfig& cfg);

// Latent level l lives on a grid of exactly (H/2^(l-1)) x (W/2^(l-1)); l=1 is
// full resolution. Grids are always kept spatial, never flattened.
struct Grid {
  int c = 0, h = 0, w = 0;
  std::vector<real> v;

  bool empty() const { return v.empty(); }
};

struct LatentLevel {
  int level = 0;  // l in 1..L
  Grid prior_mu, prior_sigma, post_mu, post_sigma, z;
};

// Ordered coarsest (l = L) first, matching the generative chain.
struct LatentHierarchy {
  std::vector<LatentLevel> levels;

  bool has_prior() const;
  bool has_posterior() const;
  bool has_z() const;
};

enum class LatentMode { sample, mean };

// Fills z at every level from the stored (mu, sigma): posterior side when
// present, else prior. mode==mean sets z = mu; mode==sample draws
// z = mu + sigma * eps with eps standard normal, deterministic per seed.
LatentHierarchy sample_latents(const LatentHierarchy& h, LatentMode mode,
                               uint64_t seed);

// Closed-form KL(posterior || prior) per level, summed over grid positions
// and channels; coarsest level first. Both sides must be filled.
std::vector<real> kl_terms(const LatentHierarchy& h);

// Evidence lower bound: -(reconstruction_ce + beta * sum(kl)). Training
// minimizes its negation.
real elbo(real reconstruction_ce, const std::vector<real>& kls, real beta);

// Combines a prior-side and a posterior-side hierarchy over the same levels.
LatentHierarchy merge_hierarchies(const LatentHierarchy& prior,
                                  const LatentHierarchy& posterior);

struct GeneratedSample {
  int height = 0, width = 0, n_labels = 0;
  std::vector<real> image;        // affine-warped base image, 8-bit exact
  std::vector<real> soft_mask;    // [n,h,w], per-pixel softmax
  std::vector<uint8_t> hard_mask; // per-pixel argmax, lowest-index tie-break
  ClassCondition condition;
  // provenance
  std::string base_id;
  AffineTransform transform;
  uint64_t latent_seed = 0;
};

std::vector<uint8_t> argmax_mask(const std::vector<real>& soft, int n_labels,
                                 int h, int w);

// U-shaped prior/posterior encoders whose decoding path emits a (mu, sigma)
// head at every latent scale, and a decoder that turns the latent stack back
// into mask logits. The decoder sees only the latents and the condition; all
// image information reaches the mask through the sampling steps.
class HierarchicalGenerator {
 public:
  HierarchicalGenerator(const GeneratorConfig& cfg, uint64_t init_seed);

  struct ChainOut {
    std::vector<NodeP> mu, sigma, z;  // coarsest first
  };

  // How z is produced while walking the chain coarse-to-fine.
  struct ZSource {
    LatentMode mode = LatentMode::mean;
    Rng* rng = nullptr;                          // for mode == sample
    const std::vector<NodeP>* inject = nullptr;  // teacher forcing (z given)
    // Pre-drawn standard-normal eps per level (coarsest first); overrides rng.
    const std::vector<std::vector<real>>* eps = nullptr;
  };

  // image [N,1,H,W], soft_mask [N,n,H,W], cond [N,2].
  ChainOut prior_chain(Graph& g, NodeP image, NodeP soft_mask, NodeP cond,
                       const ZSource& zs) const;
  // additionally conditioned on the target one-hot mask [N,n,H,W].
  ChainOut posterior_chain(Graph& g, NodeP image, NodeP soft_mask,
                           NodeP target_onehot, NodeP cond,
                           const ZSource& zs) const;
  // z stack (coarsest first) -> mask logits [N,n,H,W].
  NodeP decode_logits(Graph& g, const std::vector<NodeP>& z, NodeP cond) const;

  // In-graph KL between two chains, per level (batch-mean of per-sample grid
  // sums). Matches kl_terms on plain hierarchies.
  std::vector<NodeP> kl_nodes(Graph& g, const ChainOut& posterior,
                              const ChainOut& prior) const;

  // --- single-sample, plain-data entry points -------------------------------
  LatentHierarchy prior_forward(const ImageSample& warped, ClassCondition cond,
                                LatentMode mode = LatentMode::mean,
                                uint64_t seed = 0) const;
  LatentHierarchy posterior_forward(const ImageSample& warped,
                                    const std::vector<uint8_t>& target_mask,
                                    ClassCondition cond) const;
  // Decodes a hierarchy whose z grids are filled.
  GeneratedSample decode(const LatentHierarchy& h, ClassCondition cond) const;

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore& prior_params() { return prior_ps_; }
  ParamStore& posterior_params() { return post_ps_; }
  ParamStore& decoder_params() { return dec_ps_; }
  const ParamStore& prior_params() const { return prior_ps_; }
  const ParamStore& posterior_params() const { return post_ps_; }
  const ParamStore& decoder_params() const { return dec_ps_; }

  // Copies the prior weights into the posterior (zeroing the extra target
  // channels of its first convolution) so both chains agree exactly and
  // every KL term starts at zero. Called at construction.
  void sync_posterior_to_prior();

  // Latent grid height/width for level l.
  std::pair<int, int> latent_shape(int level) const;

 private:
  struct Tower {
    std::vector<Conv> enc;        // per scale, stride 2 after the first
    std::vector<Conv> up;         // ascent convs, bottom scale upwards
    std::vector<Conv> heads;      // one per latent level, coarsest first
  };

  Tower build_tower(ParamStore& ps, int in_channels, Rng& rng) const;
  ChainOut run_chain(Graph& g, const Tower& t, NodeP input, NodeP cond,
                     const ZSource& zs) const;

  GeneratorConfig cfg_;
  ParamStore prior_ps_, post_ps_, dec_ps_;
  Tower prior_, post_;
  std::vector<Conv> dec_up_;
  Conv dec_in_, dec_mid_, dec_head_;
};

// STN + generator with training metadata; the unit that checkpoints.
struct GeneratorBundle {
  GeneratorConfig cfg;
  StnConfig stn_cfg;
  std::unique_ptr<Stn> stn;
  std::unique_ptr<HierarchicalGenerator> gen;
  bool trained = false;
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};

  static GeneratorBundle create(const GeneratorConfig& cfg, uint64_t init_seed);

  void save(const std::string& path) const;
  static GeneratorBundle load(const std::string& path);
};

// Full generation pass: stn_propose -> apply_affine -> prior chain with
// sampled latents -> decode. Throws if the bundle was never trained.
GeneratedSample generate(const GeneratorBundle& b, const ImageSample& base,
                         ClassCondition cond, uint64_t seed,
                         LatentMode mode = LatentMode::sample);

}  // namespace geogan

#endif  // GEOGAN_GENMODEL_HPP
