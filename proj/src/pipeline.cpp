#include "geogan/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "geogan/io.hpp"
#include "json.hpp"

namespace geogan {

using nlohmann::json;
namespace fs = std::filesystem;

const char* kCodeVersion = "geogan 0.1.0";

// --- enums ----------------------------------------------------------------------

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::geogan: return "geogan";
    case Arm::classical_da: return "classical_da";
    case Arm::no_aug: return "no_aug";
  }
  return "?";
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::noL_class: return "noL_class";
    case Ablation::noL_shape: return "noL_shape";
    case Ablation::noSamp: return "noSamp";
    case Ablation::onlyL_class: return "onlyL_class";
    case Ablation::onlyL_shape: return "onlyL_shape";
    case Ablation::onlySamp: return "onlySamp";
  }
  return "?";
}

const char* source_name(TrainSource s) {
  switch (s) {
    case TrainSource::diseased: return "diseased";
    case TrainSource::normal: return "normal";
    case TrainSource::mixed: return "mixed";
  }
  return "?";
}

Arm arm_from_name(const std::string& s) {
  for (Arm a : {Arm::geogan, Arm::classical_da, Arm::no_aug})
    if (s == arm_name(a)) return a;
  throw Error("unknown arm: " + s);
}

Ablation ablation_from_name(const std::string& s) {
  for (Ablation a : {Ablation::full, Ablation::noL_class, Ablation::noL_shape,
                     Ablation::noSamp, Ablation::onlyL_class,
                     Ablation::onlyL_shape, Ablation::onlySamp})
    if (s == ablation_name(a)) return a;
  throw Error("unknown ablation: " + s);
}

TrainSource source_from_name(const std::string& s) {
  for (TrainSource t : {TrainSource::diseased, TrainSource::normal, TrainSource::mixed})
    if (s == source_name(t)) return t;
  throw Error("unknown train source: " + s);
}

// --- config ---------------------------------------------------------------------

namespace {

json gan_cfg_json(const GanTrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch", c.batch},
              {"lr", c.lr},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"elbo_weight", c.elbo_weight},
              {"beta", c.beta},
              {"beta_warmup_frac", c.beta_warmup_frac},
              {"sampling", c.sampling},
              {"disc_base_channels", c.disc_base_channels},
              {"jitter_rot_deg", c.real_pair_jitter.rot_max_deg},
              {"jitter_trans_frac", c.real_pair_jitter.trans_frac},
              {"jitter_scale_min", c.real_pair_jitter.scale_min},
              {"jitter_scale_max", c.real_pair_jitter.scale_max},
              {"log_every", c.log_every}};
}

void gan_cfg_from_json(const json& j, GanTrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.weights.lambda1 = j.value("lambda1", c.weights.lambda1);
  c.weights.lambda2 = j.value("lambda2", c.weights.lambda2);
  c.elbo_weight = j.value("elbo_weight", c.elbo_weight);
  c.beta = j.value("beta", c.beta);
  c.beta_warmup_frac = j.value("beta_warmup_frac", c.beta_warmup_frac);
  c.sampling = j.value("sampling", c.sampling);
  c.disc_base_channels = j.value("disc_base_channels", c.disc_base_channels);
  c.real_pair_jitter.rot_max_deg = j.value("jitter_rot_deg", c.real_pair_jitter.rot_max_deg);
  c.real_pair_jitter.trans_frac = j.value("jitter_trans_frac", c.real_pair_jitter.trans_frac);
  c.real_pair_jitter.scale_min = j.value("jitter_scale_min", c.real_pair_jitter.scale_min);
  c.real_pair_jitter.scale_max = j.value("jitter_scale_max", c.real_pair_jitter.scale_max);
  c.log_every = j.value("log_every", c.log_every);
}

json phantom_cfg_json(const PhantomConfig& c) {
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

void phantom_cfg_from_json(const json& j, PhantomConfig& c) {
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
}

json config_json(const ExperimentConfig& c) {
  return json{
      {"phantom", phantom_cfg_json(c.phantom)},
      {"n_per_class", c.n_per_class},
      {"phantom_seed", c.phantom_seed},
      {"generator",
       {{"resolution_levels", c.generator.resolution_levels},
        {"latent_levels", c.generator.latent_levels},
        {"base_channels", c.generator.base_channels},
        {"latent_channels", c.generator.latent_channels},
        {"kl_weight", c.generator.kl_weight}}},
      {"gan", gan_cfg_json(c.gan)},
      {"seg",
       {{"base_channels", c.seg.base_channels},
        {"steps", c.seg.steps},
        {"batch", c.seg.batch},
        {"lr", c.seg.lr},
        {"eval_every", c.seg.eval_every}}},
      {"relation",
       {{"steps", c.relation.steps},
        {"batch", c.relation.batch},
        {"lr", c.relation.lr},
        {"holdout_fraction", c.relation.holdout_fraction}}},
      {"classical",
       {{"rot_max_deg", c.classical.rot_max_deg},
        {"trans_frac", c.classical.trans_frac},
        {"scale_min", c.classical.scale_min},
        {"scale_max", c.classical.scale_max}}},
      {"arm", arm_name(c.arm)},
      {"ablation", ablation_name(c.ablation)},
      {"train_source", source_name(c.train_source)},
      {"synthetic_per_base", c.synthetic_per_base},
      {"generate_from_diseased_only", c.generate_from_diseased_only},
      {"augment_union", c.augment_union}};
}

void sync_dims(ExperimentConfig& c) {
  c.generator.n_labels = c.phantom.n_labels;
  c.generator.height = c.phantom.height;
  c.generator.width = c.phantom.width;
  c.seg.n_labels = c.phantom.n_labels;
  c.seg.height = c.phantom.height;
  c.seg.width = c.phantom.width;
}

}  // namespace

void ExperimentConfig::validate() const {
  validate_config(phantom);
  validate_config(generator);
  validate_weights(gan.weights);
  GEOGAN_CHECK(!seeds.empty(), "config: seeds must be non-empty");
  GEOGAN_CHECK(synthetic_per_base >= 1, "config: synthetic_per_base must be >= 1");
  GEOGAN_CHECK(ablation == Ablation::full || arm == Arm::geogan,
               "config: ablation variants are only valid with arm=geogan");
  GEOGAN_CHECK(n_per_class >= 5, "config: n_per_class must be >= 5");
}

std::string ExperimentConfig::to_json_text() const {
  json j = config_json(*this);
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["deterministic"] = deterministic;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  if (j.contains("phantom")) phantom_cfg_from_json(j["phantom"], c.phantom);
  c.n_per_class = j.value("n_per_class", c.n_per_class);
  c.phantom_seed = j.value("phantom_seed", c.phantom_seed);
  if (j.contains("generator")) {
    const json& g = j["generator"];
    c.generator.resolution_levels = g.value("resolution_levels", c.generator.resolution_levels);
    c.generator.latent_levels = g.value("latent_levels", c.generator.latent_levels);
    c.generator.base_channels = g.value("base_channels", c.generator.base_channels);
    c.generator.latent_channels = g.value("latent_channels", c.generator.latent_channels);
    c.generator.kl_weight = g.value("kl_weight", c.generator.kl_weight);
  }
  if (j.contains("gan")) gan_cfg_from_json(j["gan"], c.gan);
  if (j.contains("seg")) {
    const json& s = j["seg"];
    c.seg.base_channels = s.value("base_channels", c.seg.base_channels);
    c.seg.steps = s.value("steps", c.seg.steps);
    c.seg.batch = s.value("batch", c.seg.batch);
    c.seg.lr = s.value("lr", c.seg.lr);
    c.seg.eval_every = s.value("eval_every", c.seg.eval_every);
  }
  if (j.contains("relation")) {
    const json& r = j["relation"];
    c.relation.steps = r.value("steps", c.relation.steps);
    c.relation.batch = r.value("batch", c.relation.batch);
    c.relation.lr = r.value("lr", c.relation.lr);
    c.relation.holdout_fraction = r.value("holdout_fraction", c.relation.holdout_fraction);
  }
  if (j.contains("classical")) {
    const json& d = j["classical"];
    c.classical.rot_max_deg = d.value("rot_max_deg", c.classical.rot_max_deg);
    c.classical.trans_frac = d.value("trans_frac", c.classical.trans_frac);
    c.classical.scale_min = d.value("scale_min", c.classical.scale_min);
    c.classical.scale_max = d.value("scale_max", c.classical.scale_max);
  }
  if (j.contains("arm")) c.arm = arm_from_name(j["arm"].get<std::string>());
  if (j.contains("ablation"))
    c.ablation = ablation_from_name(j["ablation"].get<std::string>());
  if (j.contains("train_source"))
    c.train_source = source_from_name(j["train_source"].get<std::string>());
  c.synthetic_per_base = j.value("synthetic_per_base", c.synthetic_per_base);
  c.generate_from_diseased_only =
      j.value("generate_from_diseased_only", c.generate_from_diseased_only);
  c.augment_union = j.value("augment_union", c.augment_union);
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
  c.out_dir = j.value("out_dir", c.out_dir);
  c.deterministic = j.value("deterministic", c.deterministic);
  sync_dims(c);
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_json(cfg).dump();
  uint64_t h = 1469598103934665603ULL;
  for (char ch : text) h = (h ^ static_cast<uint8_t>(ch)) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

// --- manifest -------------------------------------------------------------------

std::string RunManifest::to_json() const {
  json j{{"config_hash", config_hash},
         {"code_version", code_version},
         {"arm", arm},
         {"ablation", ablation},
         {"train_source", train_source},
         {"seed", seed},
         {"paths", paths},
         {"wall_clock_sec", wall_clock_sec},
         {"failed_stage", failed_stage}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  const json j = json::parse(text);
  RunManifest m;
  m.config_hash = j.value("config_hash", "");
  m.code_version = j.value("code_version", "");
  m.arm = j.value("arm", "");
  m.ablation = j.value("ablation", "");
  m.train_source = j.value("train_source", "");
  m.seed = j.value("seed", static_cast<uint64_t>(0));
  if (j.contains("paths"))
    m.paths = j["paths"].get<std::map<std::string, std::string>>();
  if (j.contains("wall_clock_sec"))
    m.wall_clock_sec = j["wall_clock_sec"].get<std::map<std::string, real>>();
  m.failed_stage = j.value("failed_stage", "");
  return m;
}

// --- stage helpers -----------------------------------------------------------------

namespace {

std::string hash8_of(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (char ch : text) h = (h ^ static_cast<uint8_t>(ch)) * 1099511628211ULL;
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(h & 0xffffffffULL));
  return std::string(buf, 8);
}

void assert_split_hygiene(const DatasetSplits& d) {
  std::set<std::string> seen;
  for (const auto* split : {&d.train, &d.val, &d.test})
    for (const auto& s : *split) {
      GEOGAN_CHECK(seen.insert(s.sample_id).second,
                   "split hygiene: duplicate sample_id " + s.sample_id);
    }
}

std::vector<const ImageSample*> ptrs(const std::vector<ImageSample>& v) {
  std::vector<const ImageSample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

std::vector<const ImageSample*> filter_class(
    const std::vector<const ImageSample*>& v, ClassLabel c) {
  std::vector<const ImageSample*> out;
  for (const auto* s : v)
    if (s->class_label == c) out.push_back(s);
  return out;
}

GanTrainConfig gan_config_for(const ExperimentConfig& cfg) {
  GanTrainConfig g = cfg.gan;
  switch (cfg.ablation) {
    case Ablation::full: break;
    case Ablation::noL_class: g.weights.lambda1 = 0; break;
    case Ablation::noL_shape: g.weights.lambda2 = 0; break;
    case Ablation::noSamp: g.sampling = false; break;
    case Ablation::onlyL_class:
      g.weights.lambda2 = 0;
      g.sampling = false;
      break;
    case Ablation::onlyL_shape:
      g.weights.lambda1 = 0;
      g.sampling = false;
      break;
    case Ablation::onlySamp:
      g.weights.lambda1 = 0;
      g.weights.lambda2 = 0;
      break;
  }
  return g;
}

struct GeneratedSet {
  std::vector<ImageSample> samples;
};

void save_generated(const std::string& dir, const std::vector<ImageSample>& xs,
                    const std::vector<json>& provenance) {
  fs::create_directories(dir);
  std::string manifest;
  for (size_t i = 0; i < xs.size(); ++i) {
    const ImageSample& s = xs[i];
    GrayImage8 img{s.height, s.width, {}};
    img.px.resize(s.image.size());
    for (size_t k = 0; k < s.image.size(); ++k)
      img.px[k] = static_cast<uint8_t>(std::lround(s.image[k] * 255.0));
    write_png_gray8(dir + "/" + s.sample_id + ".img.png", img);
    GrayImage8 msk{s.height, s.width,
                   std::vector<uint8_t>(s.mask.begin(), s.mask.end())};
    write_png_gray8(dir + "/" + s.sample_id + ".mask.png", msk);
    manifest += provenance[i].dump() + "\n";
  }
  write_text_file(dir + "/generated.jsonl", manifest);
}

std::vector<ImageSample> load_generated(const std::string& dir) {
  std::vector<ImageSample> out;
  for (const std::string& line : read_lines(dir + "/generated.jsonl")) {
    const json rec = json::parse(line);
    ImageSample s;
    s.sample_id = rec["sample_id"].get<std::string>();
    s.class_label = class_from_name(rec["class"].get<std::string>());
    s.seed = rec.value("latent_seed", static_cast<uint64_t>(0));
    GrayImage8 img = read_png_gray8(dir + "/" + s.sample_id + ".img.png");
    GrayImage8 msk = read_png_gray8(dir + "/" + s.sample_id + ".mask.png");
    s.height = img.h;
    s.width = img.w;
    s.image.resize(img.px.size());
    for (size_t k = 0; k < img.px.size(); ++k) s.image[k] = img.px[k] / 255.0;
    s.mask.assign(msk.px.begin(), msk.px.end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::string run_dir_for(const ExperimentConfig& cfg, uint64_t seed) {
  return cfg.out_dir + "/runs/" + config_hash(cfg) + "/seed" + std::to_string(seed);
}

std::string ensure_dataset(const ExperimentConfig& cfg) {
  json key{{"phantom", phantom_cfg_json(cfg.phantom)},
           {"n_per_class", cfg.n_per_class},
           {"master_seed", cfg.phantom_seed}};
  const std::string dir =
      cfg.out_dir + "/phantom_" + hash8_of(key.dump());
  if (!file_exists(dir + "/manifest.jsonl")) {
    DatasetSplits splits =
        generate_dataset(cfg.phantom, cfg.n_per_class, cfg.phantom_seed);
    assert_split_hygiene(splits);
    for (const auto* split : {&splits.train, &splits.val, &splits.test})
      for (const auto& s : *split) {
        std::string why;
        GEOGAN_CHECK(check_sample_invariants(s, cfg.phantom, &why),
                     "phantom invariant violated: " + why);
      }
    save_dataset(dir, splits, cfg.phantom, cfg.n_per_class, cfg.phantom_seed);
  }
  return dir;
}

std::string ensure_relation_net(const ExperimentConfig& cfg,
                                const std::string& dataset_dir) {
  const std::string path = dataset_dir + "/relation.ckpt";
  if (file_exists(path)) return path;
  DatasetSplits splits = load_dataset(dataset_dir);
  RelationNet net(cfg.phantom.n_labels, cfg.phantom.height, cfg.phantom.width,
                  mix_seed(cfg.phantom_seed, tag("relation_init")));
  const auto report = pretrain_relation_net(
      net, ptrs(splits.train), cfg.relation, mix_seed(cfg.phantom_seed, tag("relation")));
  net.save(path, report.to_json());
  write_text_file(dataset_dir + "/relation_report.json", report.to_json() + "\n");
  return path;
}

std::string ensure_generator(const ExperimentConfig& cfg, uint64_t seed,
                             const std::string& dataset_dir,
                             const std::string& run_dir) {
  const std::string path = run_dir + "/gan.ckpt";
  if (file_exists(path)) return path;
  DatasetSplits splits = load_dataset(dataset_dir);
  auto train_all = ptrs(splits.train);
  std::vector<const ImageSample*> train_set;
  switch (cfg.train_source) {
    case TrainSource::diseased: train_set = filter_class(train_all, ClassLabel::diseased); break;
    case TrainSource::normal: train_set = filter_class(train_all, ClassLabel::normal); break;
    case TrainSource::mixed: train_set = train_all; break;
  }
  GEOGAN_CHECK(!train_set.empty(), "train-gan: empty training subset");

  const GanTrainConfig gtc = gan_config_for(cfg);
  GeneratorBundle bundle =
      GeneratorBundle::create(cfg.generator, mix_seed(seed, tag("gan_init")));

  RelationNet relation = gtc.weights.lambda2 != 0.0
                             ? RelationNet::load(ensure_relation_net(cfg, dataset_dir))
                             : RelationNet(cfg.phantom.n_labels, cfg.phantom.height,
                                           cfg.phantom.width, 0);
  if (gtc.weights.lambda2 == 0.0) relation.freeze();  // unused but consistent

  const std::string log_path = run_dir + "/train_log.jsonl";
  if (file_exists(log_path)) fs::remove(log_path);
  GanTrainer trainer(bundle, relation, gtc, mix_seed(seed, tag("gan_train")));
  trainer.train(train_set, log_path);
  bundle.save(path);
  return path;
}

std::string ensure_generated(const ExperimentConfig& cfg, uint64_t seed,
                             const std::string& dataset_dir,
                             const std::string& run_dir) {
  const std::string dir = run_dir + "/generated";
  if (file_exists(dir + "/generated.jsonl")) return dir;
  DatasetSplits splits = load_dataset(dataset_dir);
  auto bases = ptrs(splits.val);
  if (cfg.generate_from_diseased_only)
    bases = filter_class(bases, ClassLabel::diseased);
  GEOGAN_CHECK(!bases.empty(), "generate: no base images in the validation split");

  std::vector<ImageSample> out;
  std::vector<json> prov;
  if (cfg.arm == Arm::geogan) {
    const GanTrainConfig gtc = gan_config_for(cfg);
    GeneratorBundle bundle = GeneratorBundle::load(run_dir + "/gan.ckpt");
    const LatentMode mode = gtc.sampling ? LatentMode::sample : LatentMode::mean;
    for (size_t i = 0; i < bases.size(); ++i) {
      for (int k = 0; k < cfg.synthetic_per_base; ++k) {
        const uint64_t gseed = mix_seed(seed, tag("gen"), i, static_cast<uint64_t>(k));
        const ClassCondition cond = ClassCondition::from(bases[i]->class_label);
        GeneratedSample gs = generate(bundle, *bases[i], cond, gseed, mode);
        ImageSample s;
        s.height = gs.height;
        s.width = gs.width;
        s.image = gs.image;
        s.mask = gs.hard_mask;
        s.class_label = bases[i]->class_label;
        s.sample_id = bases[i]->sample_id + "_g" + std::to_string(k);
        s.seed = gseed;
        prov.push_back(json{{"sample_id", s.sample_id},
                            {"class", class_name(s.class_label)},
                            {"base_id", gs.base_id},
                            {"variant", k},
                            {"latent_seed", gseed},
                            {"mode", mode == LatentMode::sample ? "sample" : "mean"},
                            {"transform", gs.transform.m}});
        out.push_back(std::move(s));
      }
    }
  } else if (cfg.arm == Arm::classical_da) {
    for (size_t i = 0; i < bases.size(); ++i) {
      for (int k = 0; k < cfg.synthetic_per_base; ++k) {
        const uint64_t dseed = mix_seed(seed, tag("da"), i, static_cast<uint64_t>(k));
        ImageSample s = classical_da(*bases[i], cfg.classical, dseed);
        for (auto& v : s.image)
          v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        s.sample_id = bases[i]->sample_id + "_g" + std::to_string(k);
        s.seed = dseed;
        prov.push_back(json{{"sample_id", s.sample_id},
                            {"class", class_name(s.class_label)},
                            {"base_id", bases[i]->sample_id},
                            {"variant", k},
                            {"latent_seed", dseed},
                            {"mode", "classical_da"}});
        out.push_back(std::move(s));
      }
    }
  } else {
    throw Error("generate: arm no_aug has no generation stage");
  }
  save_generated(dir, out, prov);
  return dir;
}

// --- protocol ---------------------------------------------------------------------

RunResult run_protocol(const ExperimentConfig& cfg_in, uint64_t seed,
                       Stage until) {
  ExperimentConfig cfg = cfg_in;
  sync_dims(cfg);
  cfg.validate();

  const std::string run_dir = run_dir_for(cfg, seed);
  fs::create_directories(run_dir);

  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  manifest.code_version = kCodeVersion;
  manifest.arm = arm_name(cfg.arm);
  manifest.ablation = ablation_name(cfg.ablation);
  manifest.train_source = source_name(cfg.train_source);
  manifest.seed = seed;

  write_text_file(run_dir + "/config.json", cfg.to_json_text());
  manifest.paths["config"] = run_dir + "/config.json";

  std::string stage = "dataset";
  auto stopwatch = [&](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    manifest.wall_clock_sec[stage] =
        std::chrono::duration<real>(t1 - t0).count();
  };

  try {
    std::string dataset_dir;
    stopwatch([&] {
      dataset_dir = ensure_dataset(cfg);
      manifest.paths["dataset"] = dataset_dir;
    });

    if (cfg.arm == Arm::geogan && until >= Stage::train_gan) {
      const GanTrainConfig gtc = gan_config_for(cfg);
      if (gtc.weights.lambda2 != 0.0) {
        stage = "relation";
        stopwatch([&] {
          manifest.paths["relation"] = ensure_relation_net(cfg, dataset_dir);
        });
      }
      stage = "train-gan";
      stopwatch([&] {
        manifest.paths["gan"] = ensure_generator(cfg, seed, dataset_dir, run_dir);
        manifest.paths["train_log"] = run_dir + "/train_log.jsonl";
      });
    }
    if (cfg.arm != Arm::no_aug && until >= Stage::generate) {
      stage = "generate";
      stopwatch([&] {
        manifest.paths["generated"] =
            ensure_generated(cfg, seed, dataset_dir, run_dir);
      });
    }
    if (until < Stage::train_seg) {
      write_text_file(run_dir + "/manifest.json", manifest.to_json());
      RunResult partial;
      partial.manifest = manifest;
      return partial;
    }

    stage = "train-seg";
    DatasetSplits splits = load_dataset(dataset_dir);
    std::vector<ImageSample> synth;
    SegUNet seg(cfg.seg, mix_seed(seed, tag("seg_init")));
    stopwatch([&] {
      const std::string seg_path = run_dir + "/seg.ckpt";
      if (file_exists(seg_path)) {
        seg = SegUNet::load(seg_path);
      } else {
        std::vector<const ImageSample*> train_ptrs;
        if (cfg.arm == Arm::no_aug) {
          train_ptrs = ptrs(splits.train);
        } else {
          synth = load_generated(run_dir + "/generated");
          train_ptrs = ptrs(synth);
          if (cfg.augment_union)
            for (const auto& s : splits.train) train_ptrs.push_back(&s);
        }
        const auto report =
            train_segmenter(seg, train_ptrs, ptrs(splits.val),
                            mix_seed(seed, tag("seg_train")));
        seg.save(seg_path,
                 json{{"final_train_ce", report.final_train_ce},
                      {"best_val_dice", report.best_val_dice},
                      {"steps", report.steps}}
                     .dump());
      }
      manifest.paths["seg"] = run_dir + "/seg.ckpt";
    });
    if (until < Stage::evaluate) {
      write_text_file(run_dir + "/manifest.json", manifest.to_json());
      RunResult partial;
      partial.manifest = manifest;
      return partial;
    }

    stage = "evaluate";
    RunResult result;
    stopwatch([&] {
      const std::string metrics_path = run_dir + "/metrics.json";
      if (file_exists(metrics_path)) {
        result.metrics = MetricsReport::from_json(read_text_file(metrics_path));
      } else {
        result.metrics = evaluate(seg, ptrs(splits.test));
        write_text_file(metrics_path, result.metrics.to_json() + "\n");
      }
      manifest.paths["metrics"] = metrics_path;
    });

    for (const auto& [k, p] : manifest.paths)
      GEOGAN_CHECK(file_exists(p), "manifest path missing at completion: " + p);
    write_text_file(run_dir + "/manifest.json", manifest.to_json());
    result.manifest = manifest;
    return result;
  } catch (const std::exception& e) {
    manifest.failed_stage = stage;
    write_text_file(run_dir + "/manifest.json", manifest.to_json());
    throw Error("stage " + stage + " failed: " + e.what());
  }
}

// --- comparison suites ---------------------------------------------------------------

namespace {

void finish_summary(ArmSummary& s, size_t expected_runs) {
  auto mean_std = [](const std::vector<real>& v, real& m, real& sd) {
    m = 0;
    sd = 0;
    if (v.empty()) return;
    for (real x : v) m += x;
    m /= v.size();
    for (real x : v) sd += (x - m) * (x - m);
    sd = std::sqrt(sd / v.size());
  };
  mean_std(s.per_seed_dice, s.dice_mean, s.dice_std);
  mean_std(s.per_seed_hd, s.hd_mean, s.hd_std);
  s.complete = s.per_seed_dice.size() == expected_runs;
}

}  // namespace

std::string ComparisonTable::to_markdown() const {
  char buf[128];
  std::string out = "# " + title + "\n\n| arm | DM | HD | runs |\n|---|---|---|---|\n";
  for (const auto& a : arms) {
    if (a.complete) {
      std::snprintf(buf, sizeof(buf), "| %s | %.3f (%.3f) | %.2f (%.2f) | %d |\n",
                    a.name.c_str(), a.dice_mean, a.dice_std, a.hd_mean, a.hd_std,
                    static_cast<int>(a.per_seed_dice.size()));
      out += buf;
    } else {
      out += "| " + a.name + " | incomplete | incomplete | " +
             std::to_string(a.per_seed_dice.size()) + " |\n";
    }
  }
  return out;
}

std::string ComparisonTable::to_json_text() const {
  json arms_j = json::array();
  for (const auto& a : arms)
    arms_j.push_back(json{{"name", a.name},
                          {"per_seed_dice", a.per_seed_dice},
                          {"per_seed_hd", a.per_seed_hd},
                          {"dice_mean", a.dice_mean},
                          {"dice_std", a.dice_std},
                          {"hd_mean", a.hd_mean},
                          {"hd_std", a.hd_std},
                          {"complete", a.complete},
                          {"error", a.error}});
  return json{{"title", title}, {"arms", arms_j}}.dump(2) + "\n";
}

ComparisonTable ComparisonTable::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ComparisonTable t;
  t.title = j.value("title", "");
  for (const auto& a : j["arms"]) {
    ArmSummary s;
    s.name = a["name"].get<std::string>();
    s.per_seed_dice = a["per_seed_dice"].get<std::vector<real>>();
    s.per_seed_hd = a["per_seed_hd"].get<std::vector<real>>();
    s.dice_mean = a["dice_mean"].get<real>();
    s.dice_std = a["dice_std"].get<real>();
    s.hd_mean = a["hd_mean"].get<real>();
    s.hd_std = a["hd_std"].get<real>();
    s.complete = a["complete"].get<bool>();
    s.error = a.value("error", "");
    t.arms.push_back(std::move(s));
  }
  return t;
}

const ArmSummary* ComparisonTable::find(const std::string& name) const {
  for (const auto& a : arms)
    if (a.name == name) return &a;
  return nullptr;
}

ComparisonTable run_ablation_suite(const ExperimentConfig& base,
                                   const std::vector<uint64_t>& seeds) {
  ComparisonTable table;
  table.title = "ablation study (fluid DM/HD on the diseased test split)";
  std::string raw_log;
  const json base_json = config_json(base);
  for (Ablation ab :
       {Ablation::full, Ablation::noL_class, Ablation::noL_shape,
        Ablation::noSamp, Ablation::onlyL_class, Ablation::onlyL_shape,
        Ablation::onlySamp}) {
    ExperimentConfig cfg = base;
    cfg.arm = Arm::geogan;
    cfg.ablation = ab;
    // Arm isolation: the configuration may differ from the base only in the
    // documented switch.
    json diff_check = config_json(cfg);
    json base_copy = base_json;
    diff_check.erase("ablation");
    base_copy.erase("ablation");
    base_copy["arm"] = "geogan";
    diff_check["arm"] = "geogan";
    GEOGAN_CHECK(diff_check == base_copy,
                 "ablation arm differs from base beyond the ablation switch");

    ArmSummary s;
    s.name = ablation_name(ab);
    for (uint64_t seed : seeds) {
      try {
        RunResult r = run_protocol(cfg, seed);
        s.per_seed_dice.push_back(r.metrics.fluid_dice_mean);
        if (r.metrics.fluid_hd_defined > 0)
          s.per_seed_hd.push_back(r.metrics.fluid_hd_mean);
        raw_log += json{{"arm", s.name},
                        {"seed", seed},
                        {"fluid_dice", r.metrics.fluid_dice_mean},
                        {"fluid_hd", r.metrics.fluid_hd_mean},
                        {"status", "ok"}}
                       .dump() +
                   "\n";
      } catch (const std::exception& e) {
        s.error = e.what();
        raw_log += json{{"arm", s.name},
                        {"seed", seed},
                        {"status", "failed"},
                        {"error", e.what()}}
                       .dump() +
                   "\n";
      }
    }
    finish_summary(s, seeds.size());
    table.arms.push_back(std::move(s));
  }
  fs::create_directories(base.out_dir);
  write_text_file(base.out_dir + "/ablation_raw.jsonl", raw_log);
  write_text_file(base.out_dir + "/ablation_table.json", table.to_json_text());
  write_text_file(base.out_dir + "/ablation_table.md", table.to_markdown());
  return table;
}

ComparisonTable run_source_study(const ExperimentConfig& base,
                                 const std::vector<uint64_t>& seeds) {
  ComparisonTable table;
  table.title = "training-source study (fluid DM/HD, diseased test split)";
  std::string raw_log;
  std::vector<std::string> reference_ids;
  for (TrainSource src :
       {TrainSource::diseased, TrainSource::normal, TrainSource::mixed}) {
    ExperimentConfig cfg = base;
    cfg.arm = Arm::geogan;
    cfg.ablation = Ablation::full;
    cfg.train_source = src;
    cfg.generate_from_diseased_only = true;

    ArmSummary s;
    s.name = source_name(src);
    for (uint64_t seed : seeds) {
      try {
        RunResult r = run_protocol(cfg, seed);
        // Same-test-set guarantee.
        std::vector<std::string> ids;
        for (const auto& row : r.metrics.rows) ids.push_back(row.sample_id);
        if (reference_ids.empty())
          reference_ids = ids;
        else
          GEOGAN_CHECK(ids == reference_ids,
                       "source study: test split ids differ between arms");
        s.per_seed_dice.push_back(r.metrics.fluid_dice_mean);
        if (r.metrics.fluid_hd_defined > 0)
          s.per_seed_hd.push_back(r.metrics.fluid_hd_mean);
        raw_log += json{{"arm", s.name},
                        {"seed", seed},
                        {"fluid_dice", r.metrics.fluid_dice_mean},
                        {"fluid_hd", r.metrics.fluid_hd_mean},
                        {"status", "ok"}}
                       .dump() +
                   "\n";
      } catch (const std::exception& e) {
        s.error = e.what();
        raw_log += json{{"arm", s.name},
                        {"seed", seed},
                        {"status", "failed"},
                        {"error", e.what()}}
                       .dump() +
                   "\n";
      }
    }
    finish_summary(s, seeds.size());
    table.arms.push_back(std::move(s));
  }
  fs::create_directories(base.out_dir);
  write_text_file(base.out_dir + "/source_raw.jsonl", raw_log);
  write_text_file(base.out_dir + "/source_table.json", table.to_json_text());
  write_text_file(base.out_dir + "/source_table.md", table.to_markdown());
  return table;
}

// --- lambda grid ------------------------------------------------------------------------

GridResult grid_search_lambdas(const GridSpec& spec,
                               const std::function<real(real, real)>& evaluate) {
  GEOGAN_CHECK(spec.step > 0, "grid: step must be positive");
  GridResult r;
  for (real v = spec.l1_min; v <= spec.l1_max + 1e-9; v += spec.step)
    r.l1_values.push_back(std::min(v, spec.l1_max));
  for (real v = spec.l2_min; v <= spec.l2_max + 1e-9; v += spec.step)
    r.l2_values.push_back(std::min(v, spec.l2_max));
  r.n1 = static_cast<int>(r.l1_values.size());
  r.n2 = static_cast<int>(r.l2_values.size());
  r.surface.resize(static_cast<size_t>(r.n1) * r.n2);
  r.best_score = -std::numeric_limits<real>::infinity();
  for (int i = 0; i < r.n1; ++i) {
    for (int j = 0; j < r.n2; ++j) {
      const real score = evaluate(r.l1_values[i], r.l2_values[j]);
      r.surface[static_cast<size_t>(i) * r.n2 + j] = score;
      if (score > r.best_score) {
        r.best_score = score;
        r.best_l1 = r.l1_values[i];
        r.best_l2 = r.l2_values[j];
      }
    }
  }
  return r;
}

std::string GridResult::to_json_text() const {
  return json{{"n1", n1},
              {"n2", n2},
              {"l1_values", l1_values},
              {"l2_values", l2_values},
              {"surface", surface},
              {"best_l1", best_l1},
              {"best_l2", best_l2},
              {"best_score", best_score}}
             .dump(2) +
         "\n";
}

real tuning_split_score(const ExperimentConfig& cfg_in, real l1, real l2,
                        uint64_t seed) {
  ExperimentConfig cfg = cfg_in;
  sync_dims(cfg);
  cfg.arm = Arm::geogan;
  cfg.ablation = Ablation::full;
  cfg.gan.weights.lambda1 = l1;
  cfg.gan.weights.lambda2 = l2;

  // A held-out tuning dataset, distinct ids, never overlapping train/val/test.
  const int n_tune = std::max(5, cfg.n_per_class / 10);
  DatasetSplits tune = generate_dataset(cfg.phantom, n_tune,
                                        mix_seed(cfg.phantom_seed, tag("tune")));
  std::vector<ImageSample> tune_all;
  for (auto* split : {&tune.train, &tune.val, &tune.test})
    for (auto& s : *split) {
      s.sample_id = "tune_" + s.sample_id;
      tune_all.push_back(std::move(s));
    }

  const std::string dataset_dir = ensure_dataset(cfg);
  const std::string run_dir = run_dir_for(cfg, seed);
  fs::create_directories(run_dir);
  ensure_generator(cfg, seed, dataset_dir, run_dir);
  ensure_generated(cfg, seed, dataset_dir, run_dir);
  DatasetSplits splits = load_dataset(dataset_dir);
  auto synth = load_generated(run_dir + "/generated");
  SegUNet seg(cfg.seg, mix_seed(seed, tag("seg_init")));
  train_segmenter(seg, ptrs(synth), ptrs(splits.val), mix_seed(seed, tag("seg_train")));
  MetricsReport report = evaluate(seg, ptrs(tune_all));
  write_text_file(run_dir + "/metrics_tune.json", report.to_json() + "\n");
  return report.fluid_dice_mean;
}

}  // namespace geogan
