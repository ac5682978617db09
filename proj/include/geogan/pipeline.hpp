#ifndef GEOGAN_PIPELINE_HPP
#define GEOGAN_PIPELINE_HPP

#include <functional>
#include <map>

#include "geogan/segeval.hpp"
#include "geogan/training.hpp"

namespace geogan {

enum class Arm { geogan, classical_da, no_aug };
enum class Ablation { full, noL_class, noL_shape, noSamp, onlyL_class, onlyL_shape, onlySamp };
enum class TrainSource { diseased, normal, mixed };

const char* arm_name(Arm a);
const char* ablation_name(Ablation a);
const char* source_name(TrainSource s);
Arm arm_from_name(const std::string& s);
Ablation ablation_from_name(const std::string& s);
TrainSource source_from_name(const std::string& s);

struct ExperimentConfig {
  PhantomConfig phantom;
  int n_per_class = 125;
  uint64_t phantom_seed = 20240601;

  GeneratorConfig generator;
  GanTrainConfig gan;
  SegConfig seg;
  RelationPretrainConfig relation;
  DaConfig classical;

  Arm arm = Arm::geogan;
  Ablation ablation = Ablation::full;
  TrainSource train_source = TrainSource::mixed;
  int synthetic_per_base = 5;
  bool generate_from_diseased_only = false;
  bool augment_union = false;  // add raw training images to the synthetic set

  std::vector<uint64_t> seeds{11, 22, 33};
  std::string out_dir = "runs";
  bool deterministic = false;

  void validate() const;
  std::string to_json_text() const;
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
};

// Hash over everything that affects results (excludes out_dir, seeds and the
// deterministic flag); keys the per-config run directory.
std::string config_hash(const ExperimentConfig& cfg);

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::string arm, ablation, train_source;
  uint64_t seed = 0;
  std::map<std::string, std::string> paths;
  std::map<std::string, real> wall_clock_sec;
  std::string failed_stage;  // empty on success

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

struct RunResult {
  RunManifest manifest;
  MetricsReport metrics;
};

enum class Stage { dataset, train_gan, generate, train_seg, evaluate };

// The five-step protocol for one (config, seed): dataset, generator training,
// synthetic generation, segmenter training, evaluation. Stages whose outputs
// already exist under the run directory are loaded instead of recomputed; a
// stage failure persists the partial manifest and rethrows with the stage
// name. `until` stops the run early (metrics empty then).
RunResult run_protocol(const ExperimentConfig& cfg, uint64_t seed,
                       Stage until = Stage::evaluate);

// Stage helpers (each resumable; returns the artifact path).
std::string ensure_dataset(const ExperimentConfig& cfg);
std::string ensure_relation_net(const ExperimentConfig& cfg,
                                const std::string& dataset_dir);
std::string ensure_generator(const ExperimentConfig& cfg, uint64_t seed,
                             const std::string& dataset_dir,
                             const std::string& run_dir);
std::string ensure_generated(const ExperimentConfig& cfg, uint64_t seed,
                             const std::string& dataset_dir,
                             const std::string& run_dir);

std::string run_dir_for(const ExperimentConfig& cfg, uint64_t seed);

// --- comparison suites ----------------------------------------------------------

struct ArmSummary {
  std::string name;
  std::vector<real> per_seed_dice;
  std::vector<real> per_seed_hd;  // defined entries only
  real dice_mean = 0, dice_std = 0;
  real hd_mean = 0, hd_std = 0;
  bool complete = false;
  std::string error;
};

struct ComparisonTable {
  std::string title;
  std::vector<ArmSummary> arms;

  std::string to_markdown() const;  // mean (std) formatting
  std::string to_json_text() const;
  static ComparisonTable from_json_text(const std::string& text);

  const ArmSummary* find(const std::string& name) const;
};

// Runs full + the six ablation variants over the given seeds; per-arm
// failures are isolated and marked. Writes the table and a raw per-run
// results log under cfg.out_dir.
ComparisonTable run_ablation_suite(const ExperimentConfig& base,
                                   const std::vector<uint64_t>& seeds);

// diseased-only / normal-only / mixed generator training, all generating from
// diseased validation bases and evaluated on the identical diseased test set.
ComparisonTable run_source_study(const ExperimentConfig& base,
                                 const std::vector<uint64_t>& seeds);

// --- lambda grid -------------------------------------------------------------------

struct GridSpec {
  real l1_min = 0, l1_max = 1;
  real l2_min = 0, l2_max = 1;
  real step = 0.25;  // the reference protocol uses 0.05
};

struct GridResult {
  int n1 = 0, n2 = 0;
  std::vector<real> l1_values, l2_values;
  std::vector<real> surface;  // row-major [n1][n2]
  real best_l1 = 0, best_l2 = 0, best_score = 0;

  std::string to_json_text() const;
};

// Exhaustive sweep, outer loop over lambda1, inner over lambda2. The
// evaluator maps (lambda1, lambda2) to a validation score (higher is better);
// ties keep the first maximum.
GridResult grid_search_lambdas(const GridSpec& spec,
                               const std::function<real(real, real)>& evaluate);

// Evaluator used by the CLI: trains with the given weights and scores mean
// fluid Dice on a held-out tuning dataset distinct from train/val/test.
real tuning_split_score(const ExperimentConfig& cfg, real l1, real l2,
                        uint64_t seed);

// --- reporting ---------------------------------------------------------------------

// Scans out_dir for manifests and comparison tables; writes summary.md plus
// plot images (metric bars, loss curves, a sample mosaic with n_panels
// panels).
void emit_report(const std::string& out_dir, int n_panels = 6);

extern const char* kCodeVersion;

}  // namespace geogan

#endif  // GEOGAN_PIPELINE_HPP
